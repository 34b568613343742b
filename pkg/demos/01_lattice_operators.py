# %% [markdown]
# Lattice calculus on a periodic box: forward differences, their adjoint and
# the divergence-form operator grad* a grad with a random coefficient field.

# %%
import numpy as np

from parahom.lattice import (EllipticityBounds, LatticeBox, apply_divergence_form, divergence, gradient,
                             inner, laplacian)

rng = np.random.default_rng(0)
box = LatticeBox.cube(2, 16)
u = rng.standard_normal(box.sides)
v = rng.standard_normal(box.sides + (2,))

# %% [markdown]
# The backward difference is the adjoint of the forward one: <grad u, v> = <u, grad* v>.

# %%
lhs = inner(gradient(u, box), v)
rhs = inner(u, divergence(v, box))
print("adjoint defect", abs(lhs - rhs))

# %% [markdown]
# With a = 1 the operator is the nonnegative lattice Laplacian grad* grad. A random scalar
# field between the ellipticity bounds gives a symmetric, nonnegative operator.

# %%
print("laplacian check", np.max(np.abs(apply_divergence_form(1.0, u, box) - laplacian(u, box))))
bounds = EllipticityBounds(lam=0.05, Lam=0.125, d=2)
a = rng.uniform(bounds.lam, bounds.Lam, box.sides)
w = rng.standard_normal(box.sides)
Au, Aw = apply_divergence_form(a, u, box, bounds), apply_divergence_form(a, w, box, bounds)
print("symmetry defect", abs(inner(Au, w) - inner(u, Aw)))
print("energy <u, A u> =", inner(u, Au).real, ">= 0")
print("stable time step needs 4 d Lambda <= 1:", 4 * box.d * bounds.Lam)
