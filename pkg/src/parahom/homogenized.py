"""Reference kernels for the constant-coefficient (homogenized) problem."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EllipticityError, StabilityError
from .fitting import PASS, FAIL, DecayFit, linear_fit, t_quantile
from .heat_kernel import default_side
from .lattice import LatticeBox, phase_vector

LATTICE, CONTINUUM = "lattice", "continuum"


@dataclass(frozen=True)
class HomogenizedModel:
    """Constant symmetric positive-definite coefficient ``a_hom``.

    ``flavor`` selects the discrete-time lattice equation
    ``u(t+1) = u - grad* a_hom grad u`` or the PDE ``u_t = sum a_ij d_i d_j u``.
    """

    a_hom: np.ndarray
    flavor: str = LATTICE
    lam: Optional[float] = None
    Lam: Optional[float] = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_hom, float))
        if a.shape[0] != a.shape[1]:
            raise ValueError("a_hom must be square")
        if not np.allclose(a, a.T, atol=1e-10, rtol=0):
            raise EllipticityError("a_hom is not symmetric")
        a = 0.5 * (a + a.T)
        ev = np.linalg.eigvalsh(a)
        if ev.min() <= 0:
            raise EllipticityError("a_hom is not positive definite")
        if self.lam is not None and ev.min() < self.lam - 1e-12:
            raise EllipticityError("a_hom below the lower ellipticity bound")
        if self.Lam is not None and ev.max() > self.Lam + 1e-12:
            raise EllipticityError("a_hom above the upper ellipticity bound")
        if self.flavor not in (LATTICE, CONTINUUM):
            raise ValueError(f"unknown flavor {self.flavor!r}")
        object.__setattr__(self, "a_hom", a)

    @classmethod
    def scalar(cls, kappa: float, d: int = 1, flavor: str = LATTICE):
        return cls(kappa * np.eye(d), flavor)

    @classmethod
    def from_effective(cls, em, flavor: str = LATTICE):
        """Use the real symmetric part of an estimated effective matrix."""
        q = np.real(0.5 * (em.q + em.q.conj().T))
        return cls(q, flavor)

    def with_flavor(self, flavor: str) -> "HomogenizedModel":
        return HomogenizedModel(self.a_hom, flavor, self.lam, self.Lam)

    @property
    def d(self) -> int:
        return self.a_hom.shape[0]

    @property
    def top(self) -> float:
        return float(np.linalg.eigvalsh(self.a_hom).max())


# --- lattice kernel ---------------------------------------------------------------

def lattice_symbol(model: HomogenizedModel, zeta) -> np.ndarray:
    """``1 - e(zeta)* a_hom e(zeta)`` for frequencies of shape ``(..., d)``."""
    e = phase_vector(zeta)
    return 1.0 - np.real(np.einsum("...i,ij,...j->...", np.conj(e), model.a_hom, e))


def _lattice_box(model, t_max):
    return LatticeBox.cube(model.d, default_side(model.top, float(t_max)))


def lattice_hom_table(model: HomogenizedModel, times, box: Optional[LatticeBox] = None) -> np.ndarray:
    """``G_lattice(., t)`` on a periodic box in FFT order, shape ``(len(times), *sides)``."""
    times = np.asarray(times, int)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    box = _lattice_box(model, times.max()) if box is None else box
    if box.d != model.d:
        raise ValueError("box dimension does not match a_hom")
    sym = lattice_symbol(model, box.frequencies())
    if sym.min() < -1 - 1e-12 or sym.max() > 1 + 1e-12:
        raise StabilityError("1 - e* a_hom e leaves [-1, 1] on the box frequencies")
    return np.stack([np.fft.ifftn(sym ** int(t)).real for t in times])


def lattice_hom_green(model: HomogenizedModel, x, t: int, box: Optional[LatticeBox] = None) -> float:
    """Lattice Green's function at site ``x`` and integer time ``t``."""
    box = _lattice_box(model, t) if box is None else box
    G = lattice_hom_table(model, [t], box)[0]
    return float(G[tuple(np.atleast_1d(np.asarray(x, int)) % np.asarray(box.sides))])


# --- continuum kernel and u_hom ---------------------------------------------------

def continuum_green(model: HomogenizedModel, x, t) -> np.ndarray:
    """``exp(-x a^{-1} x / 4t) / ((4 pi t)^{d/2} sqrt(det a))`` for ``x`` of shape ``(..., d)``."""
    t = np.asarray(t, float)
    if np.any(t <= 0):
        raise ValueError("continuum kernel needs t > 0")
    x = np.asarray(x, float)
    d = model.d
    if x.shape[-1] != d:
        x = x[..., None] if d == 1 else x
    ainv = np.linalg.inv(model.a_hom)
    quad = np.einsum("...i,ij,...j->...", x, ainv, x)
    return np.exp(-quad / (4 * t)) / ((4 * np.pi * t) ** (d / 2) * np.sqrt(np.linalg.det(model.a_hom)))


def gaussian_u_hom(model: HomogenizedModel, width: float, amplitude: float, x, t) -> np.ndarray:
    """Closed form of ``u_hom`` for a Gaussian profile: convolution of two Gaussians."""
    x = np.asarray(x, float)
    d = model.d
    S = width ** 2 * np.eye(d) + 2 * t * model.a_hom
    Sinv = np.linalg.inv(S)
    return amplitude * width ** d / np.sqrt(np.linalg.det(S)) * np.exp(
        -0.5 * np.einsum("...i,ij,...j->...", x, Sinv, x))


def _u_hom_grid(model, f, x, t, n, K):
    d = model.d
    k = (np.arange(n) - n // 2) * (2 * K / n)
    dk = 2 * K / n
    grids = np.stack(np.meshgrid(*([k] * d), indexing="ij"), axis=-1).reshape(-1, d)
    w = f.fourier(grids) * np.exp(-t * np.einsum("ki,ij,kj->k", grids, model.a_hom, grids))
    keep = np.abs(w) > 1e-300
    grids, w = grids[keep], w[keep]
    xs = x.reshape(-1, d)
    out = np.empty(len(xs))
    step = max(1, 2 ** 22 // max(len(grids), 1))
    for i in range(0, len(xs), step):
        ph = np.exp(-1j * xs[i:i + step] @ grids.T)
        out[i:i + step] = np.real(ph @ w)
    return out.reshape(x.shape[:-1]) * (dk / (2 * np.pi)) ** d


def u_hom(model: HomogenizedModel, f, x, t, tol: float = 1e-10, max_doublings: int = 8):
    """``u_hom(x, t) = (2 pi)^{-d} int f_hat(xi) exp(-xi a xi t - i xi.x) dxi``.

    Trapezoid rule on a truncated frequency cube; the grid is refined until two
    successive levels agree to ``tol`` (relative to ``sup |f|``). Returns
    ``(values, error_estimate)``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, float)
    if model.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    d = model.d
    lam_min = float(np.linalg.eigvalsh(model.a_hom).min())
    spread = np.sqrt(2 * d * model.top * t) * 10 + f.support_radius
    xmax = float(np.abs(x).max()) if x.size else 0.0
    # truncation: f_hat tail times heat factor below roundoff
    if f.kind == "gaussian":
        K = np.sqrt(2 * 40 / (f.width ** 2 + 2 * lam_min * t))
    else:
        K = min(400.0 / f.width, np.sqrt(80 / (2 * lam_min * t)) if t > 0 else 400.0 / f.width)
    # spacing small enough that periodic images of the answer do not overlap
    n = int(2 ** np.ceil(np.log2(max(2 * K * (2 * (xmax + spread)) / (2 * np.pi) + 1, 16))))
    prev = _u_hom_grid(model, f, x, t, n, K)
    scale = max(abs(f.amplitude), 1e-300)
    for _ in range(max_doublings):
        n *= 2
        cur = _u_hom_grid(model, f, x, t, n, K * 1.25)
        err = float(np.max(np.abs(cur - prev))) if cur.size else 0.0
        prev = cur
        if err <= tol * scale:
            return cur, err
        K *= 1.25
    return prev, err


# --- contour identity -------------------------------------------------------------

def _p2_quadrature(s, n_steps, eps, re_eta, M):
    # substitute z = exp(eps^2 eta): the integral is (1/2 pi) int z^(n+1) / (z - 1 + s) dw
    rho = np.exp(eps ** 2 * re_eta)
    w = -np.pi + 2 * np.pi * np.arange(M) / M
    z = rho * np.exp(1j * w)
    return np.mean(z ** (n_steps + 1) / (z - 1.0 + s))


def identity_check_P2(kappa: float, xi, t: float, eps: float, re_eta: float = 0.1, panels: int = 64,
                      tol: float = 1e-8, max_panels: int = 2 ** 22):
    """Contour integral over ``Im eta`` versus ``(1 - e(eps xi)* kappa e(eps xi))^(t/eps^2)``.

    ``t / eps^2`` must be an integer. Panels double from ``panels`` until the
    quadrature changes by less than ``tol`` relative. Returns
    ``(relative_residual, history)`` where ``history`` lists ``(panels, residual)``.
    """
    if panels < 64:
        raise ValueError("use at least 64 panels")
    if re_eta <= 0:
        raise ValueError("Re eta must be positive")
    n = t / eps ** 2
    if abs(n - round(n)) > 1e-9:
        raise ValueError("t / eps^2 must be an integer")
    n = int(round(n))
    xi = np.atleast_1d(np.asarray(xi, float))
    e = phase_vector(eps * xi)
    s = float(kappa * np.sum(np.abs(e) ** 2))
    exact = (1.0 - s) ** n
    hist = []
    M = panels
    prev = None
    while True:
        val = _p2_quadrature(s, n, eps, re_eta, M)
        res = abs(val - exact) / max(abs(exact), 1e-300)
        hist.append((M, float(res)))
        if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300):
            return float(res), hist
        if M >= max_panels:
            return float(res), hist
        prev = val
        M *= 2


# --- lattice versus continuum -----------------------------------------------------

@dataclass
class DifferenceLadder:
    times: np.ndarray
    differences: np.ndarray   # (3, n_t): orders 0, 1, 2 at x = 0
    fits: list
    thresholds: np.ndarray
    monotone: bool
    verdict: str
    extra: dict = field(default_factory=dict)

    @property
    def exponents(self) -> np.ndarray:
        return np.array([f.alpha for f in self.fits])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "diff0", "diff1", "diff2"])
            for k, t in enumerate(self.times):
                w.writerow([int(t)] + [repr(float(v)) for v in self.differences[:, k]])


def _forward_stencils(G, idx):
    """Order 0, max |first| and max |second| forward differences at the origin."""
    d = G.ndim
    o = (0,) * d
    g0 = G[o]
    first = []
    second = []
    for i in range(d):
        ei = tuple(1 if k == i else 0 for k in range(d))
        first.append(G[idx(ei)] - g0)
        for j in range(d):
            ej = tuple(1 if k == j else 0 for k in range(d))
            eij = tuple(a + b for a, b in zip(ei, ej))
            second.append(G[idx(eij)] - G[idx(ei)] - G[idx(ej)] + g0)
    return g0, np.array(first), np.array(second)


def _time_power_fit(t, v, correction: bool = True, level=0.95) -> DecayFit:
    """Fit ``log v = c - alpha log t (+ beta / t)``; the ``1/t`` term absorbs the next order."""
    ok = v > 0
    t, y = t[ok], np.log(v[ok])
    cols = [np.ones_like(t), -np.log(t)] + ([1.0 / t] if correction else [])
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    dof = len(t) - X.shape[1]
    rss = float(r @ r)
    cov = np.linalg.pinv(X.T @ X) * (rss / dof)
    a = float(coef[1])
    half = t_quantile(dof, level) * np.sqrt(max(cov[1, 1], 0.0))
    return DecayFit(C=float(np.exp(coef[0])), gamma=0.0, alpha=a, band=(a - half, a + half),
                    npoints=int(ok.sum()), residual=float(np.sqrt(rss / ok.sum())),
                    window=(float(t.min()), float(t.max())),
                    extra={"beta": float(coef[2]) if correction else 0.0})


def lattice_vs_continuum(model: HomogenizedModel, horizon: int = 256, t_min: int = 16,
                         slack: float = 0.1) -> DifferenceLadder:
    """Decay in ``t`` of lattice-minus-continuum differences of orders 0, 1, 2 at ``x = 0``.

    Continuum differences are unit-step forward differences of the Gaussian.
    Exponents come from a fit with a ``1/t`` correction term; the uncorrected
    log-log slopes are kept in ``extra['plain_exponents']``.
    Passes when the fitted exponents reach ``(d + k + 1)/2 - slack`` and do not
    decrease with the order.
    """
    times = np.arange(t_min, horizon + 1)
    if len(times) < 16:
        raise ValueError("horizon too short: need at least 16 time points")
    d = model.d
    lat = model.with_flavor(LATTICE)
    cont = model.with_flavor(CONTINUUM)
    box = _lattice_box(lat, horizon)
    table = lattice_hom_table(lat, times, box)
    pts = np.stack(np.meshgrid(*([np.arange(3)] * d), indexing="ij"), axis=-1)
    diffs = np.empty((3, len(times)))
    for k, t in enumerate(times):
        gl = _forward_stencils(table[k], lambda e: tuple(np.asarray(e) % np.asarray(box.sides)))
        gc_vals = continuum_green(cont, pts, float(t))
        gc = _forward_stencils(gc_vals, lambda e: tuple(e))
        diffs[0, k] = abs(gl[0] - gc[0])
        diffs[1, k] = np.max(np.abs(gl[1] - gc[1]))
        diffs[2, k] = np.max(np.abs(gl[2] - gc[2]))
    fits = [_time_power_fit(times.astype(float), diffs[o]) for o in range(3)]
    plain = [_time_power_fit(times.astype(float), diffs[o], correction=False).alpha for o in range(3)]
    thr = np.array([(d + o + 1) / 2 for o in range(3)])
    ex = np.array([f.alpha for f in fits])
    monotone = bool(np.all(np.diff(ex) >= -slack))
    ok = bool(np.all(ex >= thr - slack)) and monotone
    return DifferenceLadder(times=times, differences=diffs, fits=fits, thresholds=thr, monotone=monotone,
                            verdict=PASS if ok else FAIL, extra={"plain_exponents": plain})
