# %% [markdown]
# Homogenized references: the lattice and continuum Green's functions with a
# constant matrix, the parabolic scaling identity, the Fourier-integral
# solution u_hom and the lattice-versus-continuum difference ladder.

# %%
import numpy as np

from parahom.homogenized import (CONTINUUM, HomogenizedModel, continuum_green, identity_check_P2,
                                 lattice_hom_green, lattice_vs_continuum, u_hom)
from parahom.solver import Profile

model = HomogenizedModel.scalar(1 / 8, d=1)
cont = model.with_flavor(CONTINUUM)
for t in (16, 64, 256):
    print(f"t={t:4d} lattice {lattice_hom_green(model, [0], t):.6f} continuum "
          f"{float(continuum_green(cont, np.array([0.0]), float(t))):.6f}")

# %% [markdown]
# Parabolic scaling of the continuum kernel and the closed-form identity for
# the resolvent integral.

# %%
eps, x, t = 0.25, 0.7, 1.3
print("scaling defect", float(continuum_green(cont, np.array([x / eps]), t / eps ** 2) / eps
                              - continuum_green(cont, np.array([x]), t)))
res, hist = identity_check_P2(1 / 8, 0.9, 1.0, 0.25)
print("identity residual", res, "after", hist[-1][0], "panels")

# %%
x = np.linspace(-3, 3, 7)[:, None]
vals, _ = u_hom(cont, Profile("gaussian", 1.0), x, 0.5)
print("u_hom(x, 0.5) =", np.round(vals, 6))
lad = lattice_vs_continuum(model, horizon=256, t_min=16)
print("difference exponents", np.round(lad.exponents, 3), "thresholds", lad.thresholds, lad.verdict)
