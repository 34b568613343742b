"""Named experiments driven by a TOML config, with CSV artifacts and a checksummed manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .bounds import (doubling_stability, green_bound_check, ladder_nondecreasing, rate_experiment,
                     total_exponent_band)
from .corrector import CorrectorBox, EffectiveMatrix, eta_ladder, extrapolate_q00
from .environments import CONSTANT, IID_BERNOULLI, IID_GENERAL, KINDS, LANGEVIN, EnvironmentSpec, LangevinSpec, langevin_moment_check
from .errors import ConfigError
from .fitting import FAIL, INCONCLUSIVE, PASS, DecayFit, decayfit_to_csv
from .heat_kernel import continuous_kernel, default_side, discrete_kernel, envelope_check
from .homogenized import CONTINUUM, HomogenizedModel, continuum_green, identity_check_P2
from .lattice import LatticeBox
from .solver import GreenEstimate, Profile, fourier_mode_decay, green_mc_estimate, mc_box_side

SCHEMA_VERSION = 1
EXPERIMENTS = ("heatkernel", "qmatrix", "rate", "green-compare", "langevin-check", "identity-check")
EXIT_CODES = {PASS: 0, INCONCLUSIVE: 2, FAIL: 3}
EXIT_CONFIG = 4
EXIT_RUNTIME = 1

DESCRIPTIONS = {
    "heatkernel": "constant-coefficient kernels: conservation, positivity, decay slope, envelope",
    "qmatrix": "effective matrix q(0,0) by eta extrapolation, cross-checked by Fourier-mode decay",
    "rate": "sup-error of the averaged solution against u_hom as eps shrinks",
    "green-compare": "averaged Green's function against the homogenized lattice kernel",
    "langevin-check": "stationary two-point function of the field dynamics versus the Gibbs measure",
    "identity-check": "contour identity and continuum scaling checks",
}

# admissible numeric knobs per experiment with defaults
DEFAULTS = {
    "heatkernel": {"d": 1, "Lambda": 0.125, "horizon": 256, "flavor": "discrete", "Cd": 4.0,
                   "snapshots": 9},
    "qmatrix": {"N": 200, "N_direct": 2000, "horizon": 256, "K": 5, "L": 16, "tol": 1e-8,
                "mode": 2, "chunk": 16},
    "rate": {"N": 2000, "eps": [0.5, 0.25, 0.125, 0.0625], "t_grid": [0.25, 0.5, 1.0],
             "profile": "gaussian", "width": 1.0, "q_samples": 200, "a_hom": None, "chunk": 64},
    "green-compare": {"N": 4000, "horizon": 256, "L": None, "orders": [0, 1, 2], "doubling": True,
                      "q_samples": 200, "a_hom": None, "chunk": 64},
    "langevin-check": {"n_samples": 10000, "horizon": 20.0, "batch": 1000},
    "identity-check": {"kappa": 0.125, "triples": 5, "scaling_triples": 100, "re_eta": 0.1},
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: str = "out"
    environment: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        diags = []
        unknown = set(raw) - {"experiment", "seed", "out", "environment", "numerics", "schema"}
        if unknown:
            diags.append(f"unknown top-level keys: {sorted(unknown)}")
        if "experiment" not in raw:
            diags.append("missing key: experiment")
        if diags:
            raise ConfigError(diags)
        return cls(experiment=str(raw["experiment"]), seed=int(raw.get("seed", 0)),
                   out=str(raw.get("out", "out")), environment=dict(raw.get("environment", {})),
                   numerics=dict(raw.get("numerics", {})), schema=int(raw.get("schema", SCHEMA_VERSION)))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError([f"cannot read config: {exc}"]) from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"config is not valid TOML: {exc}"]) from exc
        return cls.from_dict(raw)

    def knobs(self) -> dict:
        out = dict(DEFAULTS.get(self.experiment, {}))
        out.update(self.numerics)
        return out

    def env_spec(self) -> EnvironmentSpec:
        env = dict(self.environment)
        kind = env.pop("kind", "constant")
        lang = env.pop("langevin", None)
        if kind == LANGEVIN:
            ls = LangevinSpec(**(lang or {}))
            return EnvironmentSpec.langevin_field(ls, seed=self.seed)
        ctor = {CONSTANT: EnvironmentSpec.constant, IID_BERNOULLI: EnvironmentSpec.bernoulli,
                IID_GENERAL: EnvironmentSpec.iid}.get(kind)
        if ctor is None:
            raise ValueError(f"unknown environment kind {kind!r}")
        return ctor(seed=self.seed, **env)

    def to_dict(self) -> dict:
        return {"schema": self.schema, "experiment": self.experiment, "seed": self.seed, "out": self.out,
                "environment": self.environment, "numerics": self.knobs()}


# --- validation -------------------------------------------------------------------

def _decreasing(xs) -> bool:
    return len(xs) >= 1 and all(b < a for a, b in zip(xs[:-1], xs[1:]))


def validate(config: ExperimentConfig) -> list:
    """Schema and admissibility diagnostics; an empty list means the config is runnable."""
    diags = []
    if config.schema != SCHEMA_VERSION:
        diags.append(f"unsupported schema version {config.schema}")
    if config.experiment not in EXPERIMENTS:
        return diags + [f"unknown experiment {config.experiment!r}; choose from {list(EXPERIMENTS)}"]
    k = config.knobs()
    unknown = set(config.numerics) - set(DEFAULTS[config.experiment])
    if unknown:
        diags.append(f"unknown numerics keys for {config.experiment}: {sorted(unknown)}")
    needs_env = config.experiment not in ("heatkernel", "identity-check")
    spec = None
    if needs_env or config.environment:
        kind = config.environment.get("kind", "constant")
        if kind not in KINDS:
            diags.append(f"unknown environment kind {kind!r}")
        else:
            try:
                spec = config.env_spec()
            except (TypeError, ValueError) as exc:
                diags.append(f"environment: {exc}")
    if spec is not None and not spec.continuous:
        b = spec.bounds
        if 4 * b.d * b.Lam > 1 + 1e-12:
            diags.append(f"stability: 4 d Lambda = {4 * b.d * b.Lam:g} > 1")
    if spec is not None and spec.continuous:
        ls = spec.langevin
        if ls.dt * (4 * ls.d * ls.V_curvature[1] + ls.mass ** 2) / 2 >= 0.5:
            diags.append("stability: Langevin dt violates the drift contraction condition")

    exp = config.experiment
    if exp == "heatkernel":
        if 4 * k["d"] * k["Lambda"] > 1 + 1e-12 and k["flavor"] == "discrete":
            diags.append(f"stability: 4 d Lambda = {4 * k['d'] * k['Lambda']:g} > 1")
        if k["flavor"] not in ("discrete", "continuous"):
            diags.append("flavor must be discrete or continuous")
        if k["horizon"] < 16:
            diags.append("horizon must be at least 16")
        if k["d"] not in (1, 2, 3):
            diags.append("d must be 1, 2 or 3")
    if exp in ("qmatrix", "rate", "green-compare"):
        if int(k["N"]) < 2:
            diags.append("N must be at least 2")
    if exp == "qmatrix":
        if int(k["K"]) < 3:
            diags.append("eta ladder needs K >= 3")
        if spec is not None and not _decreasing(list(eta_ladder(spec.bounds.Lam, int(k["K"])))):
            diags.append("eta ladder is not strictly decreasing")
        if int(k["N_direct"]) < 2:
            diags.append("N_direct must be at least 2")
    if exp == "rate":
        eps = list(k["eps"])
        if not eps:
            diags.append("rate: eps list is empty")
        elif not _decreasing(eps) or min(eps) <= 0 or max(eps) > 1:
            diags.append("rate: eps list must be strictly decreasing inside (0, 1]")
        if not list(k["t_grid"]):
            diags.append("rate: t grid is empty")
        if k["profile"] not in ("gaussian", "bump"):
            diags.append("rate: profile must be gaussian or bump")
        if spec is not None and not spec.continuous:
            for e in eps:
                for t in k["t_grid"]:
                    if e > 0 and abs(t / e ** 2 - round(t / e ** 2)) > 1e-9:
                        diags.append(f"rate: t/eps^2 = {t / e ** 2:g} is not an integer step count")
    if exp == "green-compare":
        if spec is not None and spec.continuous:
            diags.append("green-compare runs on discrete-time environments")
        if k["L"] is not None and spec is not None:
            need = mc_box_side(spec.bounds.Lam, k["horizon"] * (2 if k["doubling"] else 1))
            if int(k["L"]) < need:
                diags.append(f"box sizing: L={k['L']} below nextpow2(12 sqrt(Lambda T + 1)) = {need}")
        if not set(k["orders"]) <= {0, 1, 2}:
            diags.append("orders must be a subset of {0, 1, 2}")
    if exp == "langevin-check":
        if spec is None or not spec.continuous:
            diags.append("langevin-check needs kind = 'langevin-field'")
        elif spec.langevin.eps != 0:
            diags.append("langevin-check needs quadratic V (eps = 0)")
        if int(k["n_samples"]) < 2:
            diags.append("n_samples must be at least 2")
    if exp == "identity-check":
        if k["re_eta"] <= 0:
            diags.append("re_eta must be positive")
    return diags


# --- artifacts --------------------------------------------------------------------

@dataclass
class Table:
    header: list
    rows: list

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerows(self.rows)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def emit(artifact, path) -> str:
    """Write ``artifact`` as CSV and return the sha256 of the file contents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(artifact, DecayFit):
        decayfit_to_csv(artifact, path)
    elif isinstance(artifact, tuple) and artifact and isinstance(artifact[0], dict):
        labels, fits = zip(*artifact[0].items())
        decayfit_to_csv(list(fits), path, labels=list(labels))
    else:
        artifact.to_csv(path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_clock: float
    files: dict
    verdict: str
    summary: dict

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "version": self.version, "wall_clock_s": self.wall_clock,
                           "files": self.files, "verdict": self.verdict, "summary": self.summary},
                          indent=2, sort_keys=True, default=_json_default)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def combine(verdicts) -> str:
    verdicts = list(verdicts)
    if FAIL in verdicts:
        return FAIL
    if INCONCLUSIVE in verdicts:
        return INCONCLUSIVE
    return PASS


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {exc}")


# --- experiments ------------------------------------------------------------------

def _heatkernel(cfg, k, workers):
    d, Lam, T = int(k["d"]), float(k["Lambda"]), int(k["horizon"])
    box = LatticeBox.cube(d, default_side(Lam, 2 * T))
    snaps = np.unique(np.concatenate([[0], np.geomspace(1, T, int(k["snapshots"])).round()])).astype(int)
    tables, checks, fits = {}, {}, {}
    for H in (T, 2 * T):
        if k["flavor"] == "discrete":
            tab = discrete_kernel(d, Lam, box, H)
        else:
            tab = continuous_kernel(d, Lam, box, np.arange(H + 1, dtype=float))
        tables[H] = tab
        fits[H] = envelope_check(tab, float(k["Cd"]))
        checks[H] = {"mass_error": float(np.max(np.abs(tab.mass - 1))), "min_value": float(tab.min_value.min())}
    slope = fits[T].extra["slope"]
    C_ratio = fits[2 * T].C / fits[T].C
    ok = (checks[2 * T]["mass_error"] <= 1e-12 and checks[2 * T]["min_value"] >= 0
          and abs(slope + d / 2) <= 0.05 and abs(C_ratio - 1) <= 0.1)
    sub = tables[T]
    idx = np.searchsorted(sub.times, snaps)
    kern = Table([f"x{i + 1}" for i in range(d)] + ["t", "G"], [])
    offs = sub.offsets().reshape(-1, d)
    for j, t in zip(idx, snaps):
        for x, g in zip(offs, sub.values[j].ravel()):
            kern.rows.append([*map(int, x), int(t), repr(float(g))])
    chk = Table(["horizon", "mass_error", "min_value", "C", "slope"],
                [[H, _fmt(checks[H]["mass_error"]), _fmt(checks[H]["min_value"]), _fmt(fits[H].C),
                  _fmt(fits[H].extra["slope"])] for H in (T, 2 * T)])
    summary = {"slope": slope, "C_ratio": C_ratio, **{f"mass_error_{H}": checks[H]["mass_error"] for H in (T, 2 * T)}}
    return {"kernel.csv": kern, "checks.csv": chk,
            "envelope_fit.csv": ({f"T={T}": fits[T], f"T={2 * T}": fits[2 * T]},)}, PASS if ok else FAIL, summary


def _q_direct(spec, k, workers):
    if spec.continuous:
        box = spec.langevin.box()
        times = np.arange(0, float(k["horizon"]) + 1e-9, spec.langevin.grid * 4)
    else:
        T = int(k["horizon"])
        box = LatticeBox.cube(spec.d, mc_box_side(spec.bounds.Lam, T))
        times = np.arange(T + 1)
    xi = np.zeros(spec.d)
    xi[0] = 2 * np.pi * int(k["mode"]) / box.sides[0]
    est = green_mc_estimate(spec, box, times, int(k["N_direct"]), modes=[xi], workers=workers)
    t_min = (1.0 / spec.bounds.Lam) if not spec.continuous else float(times[len(times) // 4])
    return fourier_mode_decay(est, t_min=t_min)[0], est


def _qmatrix(cfg, k, workers):
    spec = cfg.env_spec()
    cbox = CorrectorBox(L=int(k["L"]))
    etas = eta_ladder(spec.bounds.Lam, int(k["K"]))
    em = extrapolate_q00(spec, etas, N=int(k["N"]), tol=float(k["tol"]), cbox=cbox,
                         chunk=int(k["chunk"]), workers=workers)
    md, _ = _q_direct(spec, k, workers)
    q00 = float(em.q[0, 0].real)
    sigma = float(np.hypot(em.stderr[0, 0], md.q_stderr))
    delta = q00 - md.q_direct
    lo, hi = em.quadratic_form_range()
    b = spec.bounds
    s_max = float(em.stderr.max())
    in_bounds = lo >= b.lam - 3 * s_max and hi <= b.Lam + 3 * s_max
    consistent = abs(delta) <= 3 * sigma
    ladder = Table(["eta", "q_re", "q_im", "stderr"],
                   [[_fmt(e), _fmt(q[0, 0].real), _fmt(q[0, 0].imag), _fmt(s[0, 0])]
                    for e, q, s in zip(etas, em.extra["ladder"], em.extra["ladder_stderr"])])
    modes = Table(["xi", "q_direct", "stderr", "npoints"],
                  [[_fmt(md.xi[0]), _fmt(md.q_direct), _fmt(md.q_stderr), md.npoints]])
    summary = {"q00": q00, "q00_stderr": float(em.stderr[0, 0]), "q_direct": md.q_direct,
               "q_direct_stderr": md.q_stderr, "delta": delta, "combined_sigma": sigma,
               "quadratic_form_range": [lo, hi], "max_ratio": em.max_ratio}
    verdict = PASS if (consistent and in_bounds) else FAIL
    return {"effective_matrix.csv": em, "eta_ladder.csv": ladder, "q_direct.csv": modes}, verdict, summary


def _model_from(k, spec, workers):
    if k.get("a_hom") is not None:
        return HomogenizedModel(np.atleast_2d(np.asarray(k["a_hom"], float)))
    em = extrapolate_q00(spec, N=int(k["q_samples"]), workers=workers)
    return HomogenizedModel.from_effective(em)


def _rate(cfg, k, workers):
    spec = cfg.env_spec()
    model = _model_from(k, spec, workers)
    prof = Profile(k["profile"], float(k["width"]))
    rep = rate_experiment(spec, prof, k["eps"], k["t_grid"], int(k["N"]), a_hom=model,
                          chunk=int(k["chunk"]), workers=workers)
    verdict = rep.fit.verdict if rep.monotone else FAIL
    if rep.fit.verdict == PASS and not rep.monotone:
        verdict = FAIL
    summary = {"E": rep.E, "stderr": rep.stderr, "alpha": rep.fit.alpha, "band": list(rep.fit.band),
               "monotone": rep.monotone, "a_hom": rep.a_hom}
    return {"rate.csv": rep, "rate_fit.csv": rep.fit}, verdict, summary


def _green_compare(cfg, k, workers):
    spec = cfg.env_spec()
    model = _model_from(k, spec, workers)
    T = int(k["horizon"])
    orders = sorted(int(o) for o in k["orders"])
    horizons = (T, 2 * T) if k["doubling"] else (T,)
    out, fits = {}, {}
    for H in horizons:
        L = int(k["L"]) if k["L"] else mc_box_side(spec.bounds.Lam, H)
        box = LatticeBox.cube(spec.d, L)
        est = green_mc_estimate(spec, box, np.arange(H + 1), int(k["N"]), chunk=int(k["chunk"]),
                                workers=workers, diff_orders=[o for o in orders if o])
        fits[H] = {o: green_bound_check(est, model, o) for o in orders}
        if H == T:
            out["green_estimate.csv"] = est
    out["bound_fits.csv"] = ({f"T={H},order={o}": f for H in horizons for o, f in fits[H].items()},)
    v0 = fits[T][orders[0]].verdict
    summary = {f"alpha_order{o}": fits[T][o].alpha for o in orders}
    verdicts = [v0]
    if k["doubling"]:
        rel, stable = doubling_stability(fits[T][orders[0]], fits[2 * T][orders[0]])
        summary.update(doubling_ratio=rel, doubling_stable=stable)
        verdicts.append(PASS if stable else FAIL)
    if orders == [0, 1, 2]:
        mono = ladder_nondecreasing([fits[T][o] for o in orders])
        summary.update(ladder_nondecreasing=mono,
                       exponent_bands=[total_exponent_band(fits[T][o]) for o in orders])
        verdicts.append(PASS if mono else INCONCLUSIVE)
    return out, combine(verdicts), summary


def _langevin(cfg, k, workers):
    spec = cfg.env_spec()
    r = langevin_moment_check(spec.langevin, int(k["n_samples"]), cfg.seed, float(k["horizon"]),
                              int(k["batch"]))
    within, halving = r.within_budget(), r.halving_consistent()
    names = ["variance", "lag1_covariance"]
    tab = Table(["quantity", "measured", "stderr", "exact", "em_predicted", "measured_half", "paired_diff",
                 "paired_stderr", "predicted_diff", "within_budget", "halving_consistent"],
                [[n, *[_fmt(v[i]) for v in (r.measured, r.stderr, r.exact, r.em_predicted, r.measured_half,
                                             r.paired_diff, r.paired_stderr, r.predicted_diff)],
                  _fmt(within[i]), _fmt(halving[i])] for i, n in enumerate(names)])
    ok = bool(within.all() and halving.all())
    return {"langevin_moments.csv": tab}, PASS if ok else FAIL, {"within_budget": within, "halving": halving}


def _identity(cfg, k, workers):
    rng = np.random.default_rng(cfg.seed)
    kappa = float(k["kappa"])
    rows = []
    worst = 0.0
    for _ in range(int(k["triples"])):
        eps = float(2.0 ** -rng.integers(1, 4))
        t = float(rng.integers(1, 5) * eps ** 2 * rng.integers(1, 9))
        xi = float(rng.uniform(-np.pi, np.pi))
        res, hist = identity_check_P2(kappa, xi, t, eps, float(k["re_eta"]))
        worst = max(worst, res)
        rows.append([_fmt(xi), _fmt(t), _fmt(eps), _fmt(res), hist[-1][0]])
    p2 = Table(["xi", "t", "eps", "residual", "panels"], rows)
    model = HomogenizedModel.scalar(kappa, 1, CONTINUUM)
    srows = []
    sworst = 0.0
    for _ in range(int(k["scaling_triples"])):
        x = float(rng.uniform(-3, 3))
        t = float(rng.uniform(0.1, 4))
        e = float(rng.uniform(0.05, 1))
        lhs = continuum_green(model, np.array([x / e]), t / e ** 2) / e
        rhs = continuum_green(model, np.array([x]), t)
        rel = float(abs(lhs - rhs) / abs(rhs))
        sworst = max(sworst, rel)
        srows.append([_fmt(x), _fmt(t), _fmt(e), _fmt(rel)])
    sc = Table(["x", "t", "eps", "relative_error"], srows)
    ok = worst < 1e-6 and sworst <= 1e-12
    return {"identity_p2.csv": p2, "scaling_q1.csv": sc}, PASS if ok else FAIL, \
        {"max_p2_residual": worst, "max_scaling_error": sworst}


RUNNERS = {"heatkernel": _heatkernel, "qmatrix": _qmatrix, "rate": _rate, "green-compare": _green_compare,
           "langevin-check": _langevin, "identity-check": _identity}


def run(config: ExperimentConfig, out: Optional[str] = None, seed: Optional[int] = None,
        workers=None) -> RunManifest:
    """Run one experiment end to end; CSVs first, ``manifest.json`` last."""
    if seed is not None:
        config = ExperimentConfig(config.experiment, int(seed), config.out, config.environment,
                                  config.numerics, config.schema)
    diags = validate(config)
    if diags:
        raise ConfigError(diags)
    out_dir = Path(out if out is not None else config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    k = config.knobs()
    try:
        artifacts, verdict, summary = RUNNERS[config.experiment](config, k, workers)
    except Exception as exc:  # carry the failing stage to the caller
        raise StageError(config.experiment, exc) from exc
    files = {}
    for name, art in artifacts.items():
        try:
            files[name] = emit(art, out_dir / name)
        except OSError as exc:
            raise StageError(f"emit {name}", exc) from exc
    manifest = RunManifest(config=config.to_dict(), version=__version__,
                           wall_clock=round(time.perf_counter() - t0, 3), files=files, verdict=verdict,
                           summary=summary)
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def worker_env() -> Optional[int]:
    v = os.environ.get("PARAHOM_WORKERS")
    return int(v) if v else None
