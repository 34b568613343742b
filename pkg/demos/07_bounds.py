# %% [markdown]
# Bounds verification: the homogenization rate E(eps) and the decay of the
# averaged Green's function relative to the homogenized kernel.

# %%
import numpy as np

from parahom.bounds import green_bound_check, rate_experiment
from parahom.environments import EnvironmentSpec
from parahom.homogenized import HomogenizedModel
from parahom.lattice import LatticeBox
from parahom.solver import Profile, green_mc_estimate

spec = EnvironmentSpec.bernoulli(kappa=1 / 12, gamma=0.5, seed=7)
rep = rate_experiment(spec, Profile("gaussian", 1.0), [0.5, 0.25, 0.125], [0.25, 0.5, 1.0], N=200,
                      a_hom=np.array([[spec.kappa]]))
for e, E, s, st in zip(rep.eps, rep.E, rep.stderr, rep.status):
    print(f"eps={e:.4f}  E={E:.2e} +- {s:.1e}  {st}")
print("rate fit:", rep.fit.summary(), "monotone:", rep.monotone)

# %% [markdown]
# Order-0 comparison: the fitted extra decay exponent of the difference to the
# homogenized lattice kernel, with its confidence band.

# %%
est = green_mc_estimate(spec, LatticeBox.cube(1, 128), np.arange(129), N=300, diff_orders=[1])
model = HomogenizedModel.scalar(spec.kappa)
for order in (0, 1):
    print(f"order {order}:", green_bound_check(est, model, order).summary())
