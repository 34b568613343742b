# %% [markdown]
# Experiments driven by TOML configs, the same path the `parahom` command
# takes. Each run writes CSVs and then manifest.json with sha256 checksums.

# %%
import json
import pathlib
import tempfile

from parahom.cli import main
from parahom.experiments import EXPERIMENTS, ExperimentConfig, run, validate

print("experiments:", ", ".join(EXPERIMENTS))
out = pathlib.Path(tempfile.mkdtemp())
cfg_path = out / "heat.toml"
cfg_path.write_text('experiment = "heatkernel"\nseed = 1\n[numerics]\nd = 1\nLambda = 0.125\nhorizon = 128\n')

# %% [markdown]
# `validate` reports every problem with a config before anything runs.

# %%
bad = ExperimentConfig.from_dict({"experiment": "heatkernel", "numerics": {"Lambda": 0.3, "bogus": 1}})
print(validate(bad))

# %%
code = main(["run", "--config", str(cfg_path), "--out", str(out / "run")])
print("exit code", code)
print(json.dumps(json.loads((out / "run" / "manifest.json").read_text())["summary"], indent=1))

# %% [markdown]
# The library call gives the same manifest object.

# %%
m = run(ExperimentConfig.from_file(cfg_path), out=str(out / "again"), workers=4)
print(m.verdict, sorted(m.files))
