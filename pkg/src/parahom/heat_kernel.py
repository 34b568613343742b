"""Constant-coefficient reference kernels on the periodic lattice."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import BoxTooSmallError, StabilityError
from .fitting import DecayFit, power_law_fit, spatial_exponent
from .lattice import LatticeBox, laplacian

DISCRETE, CONTINUOUS = "discrete", "continuous"


@dataclass
class KernelTable:
    """Tabulated ``G(x, t)`` on a centred window ``|x_i| <= radius``.

    ``values`` has shape ``(len(times), 2R+1, ..., 2R+1)`` with the origin at
    index ``R`` on every axis. ``mass`` and ``min_value`` are taken over the
    whole periodic box, not just the stored window. ``full`` optionally keeps
    the whole periodic kernel in FFT order, shape ``(len(times), *sides)``.
    """

    box: LatticeBox
    times: np.ndarray
    values: np.ndarray
    radius: int
    flavor: str
    Lambda: float
    mass: np.ndarray
    min_value: np.ndarray
    full: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.box.d

    def offsets(self) -> np.ndarray:
        r = np.arange(-self.radius, self.radius + 1)
        return np.stack(np.meshgrid(*([r] * self.d), indexing="ij"), axis=-1)

    def at(self, x, k: int) -> float:
        """Value at site ``x`` and time index ``k``."""
        idx = tuple(np.asarray(x, int) + self.radius)
        return float(self.values[(k,) + idx])

    def origin(self) -> np.ndarray:
        return self.values[(slice(None),) + (self.radius,) * self.d]

    def to_csv(self, path):
        offs = self.offsets().reshape(-1, self.d)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.d)] + ["t", "G"])
            for k, t in enumerate(self.times):
                vals = self.values[k].ravel()
                for x, g in zip(offs, vals):
                    w.writerow([*map(int, x), repr(float(t)), repr(float(g))])


def default_radius(Lambda: float, T: float, box: LatticeBox) -> int:
    r = int(np.ceil(6 * np.sqrt(Lambda * T + 1) + 10))
    return min(r, min(box.sides) // 2 - 1)


def default_side(Lambda: float, T: float) -> int:
    """Smallest power of two keeping the periodization error below 1e-14."""
    width = np.sqrt(2 * Lambda * T + 1)
    return int(2 ** np.ceil(np.log2(2 * (8.5 * width + 12))))


def _window(field: np.ndarray, R: int) -> np.ndarray:
    """Centred window of radius ``R`` from a field stored in FFT order."""
    idx = np.arange(-R, R + 1)
    out = field
    for ax in range(field.ndim):
        out = np.take(out, idx % field.shape[ax], axis=ax)
    return out


def _seam_mass(field: np.ndarray, box: LatticeBox) -> float:
    """Mass on the two layers either side of the periodic seam."""
    mask = np.zeros(box.sides, bool)
    for ax, L in enumerate(box.sides):
        sl = [slice(None)] * box.d
        sl[ax] = slice(L // 2 - 1, L // 2 + 1)
        mask[tuple(sl)] = True
    return float(np.abs(field[mask]).sum())


def discrete_kernel(d: int, Lambda: float, box: LatticeBox, T: int, times=None,
                    radius: Optional[int] = None, periodic: bool = False,
                    boundary_tol: float = 1e-14) -> KernelTable:
    """Time-step ``G(t+1) = G(t) - Lambda grad* grad G(t)`` from a delta.

    With ``periodic=False`` the box must be wide enough that the mass near the
    seam stays below ``boundary_tol``; ``periodic=True`` skips that check and
    returns the genuinely periodized kernel (used by the corrector).
    """
    if box.d != d:
        raise ValueError(f"box dimension {box.d} != d={d}")
    if 4 * d * Lambda > 1 + 1e-12:
        raise StabilityError(f"4 d Lambda = {4 * d * Lambda:g} > 1")
    T = int(T)
    times = np.arange(T + 1) if times is None else np.asarray(times, int)
    if times.size and (times.min() < 0 or times.max() > T):
        raise ValueError("requested times outside [0, T]")
    R = default_radius(Lambda, T, box) if radius is None else radius
    want = set(times.tolist())
    G = box.delta()
    vals, mass, mins, got = [], [], [], []
    for t in range(T + 1):
        if t in want:
            got.append(t)
            vals.append(G.copy() if periodic else _window(G, R))
            mass.append(G.sum())
            mins.append(G.min())
        if t < T:
            G = G - Lambda * laplacian(G, box)
    if not periodic:
        seam = _seam_mass(G, box)
        if seam > boundary_tol:
            raise BoxTooSmallError(f"seam mass {seam:.3e} > {boundary_tol:g} at T={T}; enlarge box")
    order = np.argsort(got)
    vals = np.asarray(vals)[order]
    full = None
    if periodic:
        full = vals
        vals = np.stack([_window(v, R) for v in full]) if len(full) else full
    return KernelTable(box=box, times=np.asarray(got)[order], values=vals, radius=R,
                       flavor=DISCRETE, Lambda=Lambda, mass=np.asarray(mass)[order],
                       min_value=np.asarray(mins)[order], full=full)


def continuous_symbol(box: LatticeBox) -> np.ndarray:
    """``|e(zeta)|^2 = sum_i (2 - 2 cos zeta_i)`` on the box frequencies."""
    z = box.frequencies()
    return np.sum(2 - 2 * np.cos(z), axis=-1)


def _bessel_axis(L: int, z: float) -> np.ndarray:
    """One-axis continuous-time kernel ``e^{-z} I_x(z)`` wrapped onto Z_L, FFT order."""
    M = max(L, int(10 * np.sqrt(z) + 50))
    n = np.arange(-M, M + 1)
    g = np.zeros(L)
    np.add.at(g, n % L, special.ive(n, z))
    return g


def continuous_kernel(d: int, Lambda: float, box: LatticeBox, times,
                      radius: Optional[int] = None) -> KernelTable:
    """Continuous-time kernel ``exp(-Lambda t grad* grad) delta``.

    Evaluated as a product over axes of ``e^{-2 Lambda t} I_x(2 Lambda t)``
    (modified Bessel), periodized onto the box, so it is nonnegative exactly.
    """
    if box.d != d:
        raise ValueError(f"box dimension {box.d} != d={d}")
    times = np.asarray(times, float)
    if times.size and (times.min() < 0 or np.any(np.diff(times) <= 0)):
        raise ValueError("times must be nonnegative and increasing")
    T = float(times.max()) if times.size else 0.0
    R = default_radius(Lambda, T, box) if radius is None else radius
    vals, mass, mins = [], [], []
    for t in times:
        G = np.ones(())
        for L in box.sides:
            G = np.multiply.outer(G, _bessel_axis(int(L), 2 * Lambda * t))
        vals.append(_window(G, R))
        mass.append(G.sum())
        mins.append(G.min())
    return KernelTable(box=box, times=times, values=np.asarray(vals), radius=R, flavor=CONTINUOUS,
                       Lambda=Lambda, mass=np.asarray(mass), min_value=np.asarray(mins))


def envelope_check(table: KernelTable, Cd_candidate: float, fit_from: Optional[float] = None) -> DecayFit:
    """Smallest ``C`` with ``G <= C (Lambda t+1)^(-d/2) exp(-min{|x|, |x|^2/(Lambda t+1)}/Cd)``.

    Also fits the decay exponent of ``G(0, t)`` against ``Lambda t + 1`` over
    ``t >= fit_from`` (default: the last octave of the table, where the
    ``(Lambda t+1)`` versus ``Lambda t`` offset bends the log-log slope least).
    """
    if table.values.size == 0:
        raise ValueError("empty kernel table")
    d, lam = table.d, table.Lambda
    t = table.times.astype(float)
    xn = np.linalg.norm(table.offsets(), axis=-1)
    tt = t.reshape((-1,) + (1,) * d)
    env = (lam * tt + 1) ** (-d / 2) * np.exp(-spatial_exponent(xn, tt, lam) / Cd_candidate)
    C = float(np.max(table.values / env))

    tmax = t.max()
    lo = tmax / 2 if fit_from is None else fit_from
    sel = (t >= lo) & (t > 0)
    fit = power_law_fit(t[sel], table.origin()[sel], Lambda=lam)
    fit.extra.update(Cd=Cd_candidate, origin_fit_C=fit.C, min_value=float(table.min_value.min()))
    fit.C = C
    fit.gamma = 1.0 / Cd_candidate
    return fit
