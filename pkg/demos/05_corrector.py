# %% [markdown]
# The corrector equation solved by a Neumann series, and the effective matrix
# q(xi, eta) with its extrapolation to q(0, 0).

# %%
import numpy as np

from parahom.corrector import effective_matrix, extrapolate_q00, holder_probe, neumann_solve
from parahom.environments import EnvironmentSpec, sample_path
from parahom.lattice import LatticeBox

spec = EnvironmentSpec.bernoulli(kappa=1 / 12, gamma=0.5, seed=5)
b = spec.bounds
box = LatticeBox.cube(1, 64)
cf = neumann_solve(sample_path(spec, box, 64), [0.0], b.Lam / 16, tol=1e-10)
print(f"{cf.iterations} iterations, worst successive ratio {cf.ratios.max():.3f}"
      f" <= contraction {b.contraction:.3f}")

# %% [markdown]
# A constant environment needs no correction: q = kappa exactly after one step.

# %%
em = effective_matrix(EnvironmentSpec.constant(kappa=1 / 12), [0.4], 0.05, N=4)
print("constant environment q =", em.q.ravel(), "stderr", em.stderr.ravel())

# %% [markdown]
# Extrapolation in sqrt(eta) along a dyadic ladder, reusing each sample on
# every rung, and a Hölder probe in xi.

# %%
em = extrapolate_q00(spec, N=100)
print("q(0,0) =", em.q.ravel().real, "+-", em.stderr.ravel(), " bounds", (b.lam, b.Lam))
fit = holder_probe(spec, [0.0], b.Lam / 4, xi_offsets=[[2.0 ** -k] for k in range(5)], N=50)
print(fit.summary())
