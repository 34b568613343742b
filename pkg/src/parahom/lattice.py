"""Periodic lattice geometry and discrete vector calculus.

Array conventions used throughout the package:

* scalar field  -- shape ``(..., *sides)``
* vector field  -- shape ``(..., *sides, d)``
* coefficients  -- either scalar ``(..., *sides)`` (meaning ``s(x) * I_d``)
  or full matrices ``(..., *sides, d, d)``

Leading axes are batch axes (time, Monte Carlo sample, ...). The lattice
operators only ever touch the ``d`` spatial axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EllipticityError, StabilityError


@dataclass(frozen=True)
class LatticeBox:
    """Periodic box ``[0, L_1) x ... x [0, L_d)`` with an optional time extent."""

    sides: tuple
    T: Optional[float] = None

    def __post_init__(self):
        sides = tuple(int(s) for s in np.atleast_1d(self.sides))
        object.__setattr__(self, "sides", sides)
        if len(sides) < 1:
            raise ValueError("box needs at least one spatial dimension")
        if any(s < 2 for s in sides):
            raise ValueError(f"all sides must be >= 2, got {sides}")
        if self.T is not None and self.T < 0:
            raise ValueError("time extent must be nonnegative")

    @classmethod
    def cube(cls, d: int, L: int, T=None) -> "LatticeBox":
        return cls((L,) * d, T)

    @property
    def d(self) -> int:
        return len(self.sides)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.sides))

    def flat_index(self, x) -> np.ndarray:
        """Row-major flat index of (possibly negative) site coordinates."""
        x = np.asarray(x) % np.asarray(self.sides)
        return np.ravel_multi_index(tuple(np.moveaxis(x, -1, 0)), self.sides)

    def site(self, index) -> np.ndarray:
        return np.stack(np.unravel_index(index, self.sides), axis=-1)

    def coords(self) -> np.ndarray:
        """Centered coordinates, shape ``(*sides, d)``, values in ``(-L/2, L/2]``."""
        axes = [(np.arange(L) + L // 2) % L - L // 2 for L in self.sides]
        # put the wrap point at +L/2 rather than -L/2
        axes = [np.where(a == -(L // 2), L // 2, a) if L % 2 == 0 else a
                for a, L in zip(axes, self.sides)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.coords(), axis=-1)

    def neighbor_table(self) -> np.ndarray:
        """Flat index of ``x + e_i`` for every site, shape ``(n_sites, d)``."""
        sites = self.site(np.arange(self.n_sites))
        out = np.empty((self.n_sites, self.d), dtype=np.int64)
        for i in range(self.d):
            shifted = sites.copy()
            shifted[:, i] += 1
            out[:, i] = self.flat_index(shifted)
        return out

    def frequencies(self) -> np.ndarray:
        """Discrete Fourier frequencies ``2 pi k / L`` in numpy FFT order, shape ``(*sides, d)``."""
        axes = [2 * np.pi * np.fft.fftfreq(L) for L in self.sides]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def delta(self, dtype=float) -> np.ndarray:
        f = np.zeros(self.sides, dtype=dtype)
        f[(0,) * self.d] = 1
        return f


@dataclass(frozen=True)
class EllipticityBounds:
    lam: float
    Lam: float
    d: int = 1

    def __post_init__(self):
        if not (self.lam > 0 and self.Lam >= self.lam):
            raise EllipticityError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")

    def check_discrete(self):
        if 4 * self.d * self.Lam > 1 + 1e-12:
            raise StabilityError(f"4 d Lambda = {4 * self.d * self.Lam:g} > 1")

    @property
    def contraction(self) -> float:
        """Norm bound ``1 - lambda/Lambda`` on ``b = I - a/Lambda``."""
        return 1.0 - self.lam / self.Lam


def _spatial_axes(box: LatticeBox, ndim: int, trailing: int = 0):
    return [ndim - trailing - box.d + i for i in range(box.d)]


def _check_shape(f: np.ndarray, box: LatticeBox, trailing: int, what: str):
    shape = f.shape[f.ndim - trailing - box.d: f.ndim - trailing] if f.ndim >= trailing + box.d else ()
    if tuple(shape) != box.sides or (trailing and f.shape[-trailing:] != (box.d,) * trailing):
        raise ValueError(f"{what} of shape {f.shape} does not live on box {box.sides}")


def gradient(f, box: LatticeBox) -> np.ndarray:
    """Forward differences ``f(x + e_i) - f(x)`` with periodic wrap."""
    f = np.asarray(f)
    _check_shape(f, box, 0, "scalar field")
    axes = _spatial_axes(box, f.ndim)
    return np.stack([np.roll(f, -1, axis=ax) - f for ax in axes], axis=-1)


def divergence(v, box: LatticeBox) -> np.ndarray:
    """Adjoint of :func:`gradient`: ``sum_i v_i(x - e_i) - v_i(x)``."""
    v = np.asarray(v)
    _check_shape(v, box, 1, "vector field")
    axes = _spatial_axes(box, v.ndim, trailing=1)
    out = np.zeros(v.shape[:-1], dtype=v.dtype)
    for i, ax in enumerate(axes):
        vi = v[..., i]
        out += np.roll(vi, 1, axis=ax) - vi
    return out


def laplacian(f, box: LatticeBox) -> np.ndarray:
    """The nonnegative operator ``grad* grad``."""
    return divergence(gradient(f, box), box)


def is_matrix_field(a, box: LatticeBox) -> bool:
    a = np.asarray(a)
    d = box.d
    return (a.ndim >= d + 2 and a.shape[-2:] == (d, d)
            and tuple(a.shape[a.ndim - 2 - d: a.ndim - 2]) == box.sides)


def apply_coefficient(a, g, box: LatticeBox) -> np.ndarray:
    """Per-site product ``a(x) g(x)`` for a vector field ``g``."""
    if is_matrix_field(a, box):
        return np.einsum("...ij,...j->...i", a, g)
    return np.asarray(a)[..., None] * g


def apply_divergence_form(a, u, box: LatticeBox, bounds: Optional[EllipticityBounds] = None):
    """``grad* (a grad u)``; checks ellipticity of ``a`` when ``bounds`` is given."""
    if bounds is not None:
        check_ellipticity(a, bounds, box)
    return divergence(apply_coefficient(a, gradient(u, box), box), box)


def coefficient_eigenvalue_range(a, box: LatticeBox):
    a = np.asarray(a)
    if is_matrix_field(a, box):
        if not np.allclose(a, np.swapaxes(a, -1, -2), atol=1e-12):
            raise EllipticityError("coefficient matrices are not symmetric")
        ev = np.linalg.eigvalsh(a)
        return float(ev.min()), float(ev.max())
    return float(a.min()), float(a.max())


def check_ellipticity(a, bounds: EllipticityBounds, box: LatticeBox, tol: float = 1e-12):
    lo, hi = coefficient_eigenvalue_range(a, box)
    if lo < bounds.lam - tol or hi > bounds.Lam + tol:
        raise EllipticityError(
            f"eigenvalues in [{lo:g}, {hi:g}] escape [{bounds.lam:g}, {bounds.Lam:g}]")


def inner(f, g) -> complex:
    """Box inner product ``sum conj(f) g`` over all axes."""
    return np.vdot(np.asarray(f).ravel(), np.asarray(g).ravel())


def phase_vector(xi) -> np.ndarray:
    """``e_j(xi) = exp(-i xi_j) - 1``; accepts ``(..., d)`` arrays of frequencies."""
    xi = np.asarray(xi, float)
    return np.exp(-1j * xi) - 1.0


def phase_norm2(xi) -> np.ndarray:
    """``|e(xi)|^2 = sum_j (2 - 2 cos xi_j)``."""
    return np.sum(2.0 - 2.0 * np.cos(np.asarray(xi, float)), axis=-1)
