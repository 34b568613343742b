"""Random coefficient environments.

Two families are supported: space-time i.i.d. fields (discrete time) and
coefficients ``a = a_tilde(phi)`` driven by a lattice Langevin field
(continuous time). Every draw is keyed on ``(seed, stream, purpose)`` so a
sample can be regenerated in isolation, and i.i.d. site values are addressed
by a counter that depends only on ``(t, site)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import EllipticityError, StabilityError
from .lattice import EllipticityBounds, LatticeBox, check_ellipticity, is_matrix_field

CONSTANT = "constant"
IID_BERNOULLI = "iid-bernoulli"
IID_GENERAL = "iid-general"
LANGEVIN = "langevin-field"
KINDS = (CONSTANT, IID_BERNOULLI, IID_GENERAL, LANGEVIN)

# purpose ids mixed into the RNG key
_SITES, _NOISE, _INIT = 1, 2, 3


def stream_key(seed: int, stream: int, purpose: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(stream), int(purpose)]).generate_state(2, np.uint64)


def site_words(seed: int, stream: int, box: LatticeBox, t0: int, t1: int) -> np.ndarray:
    """Raw 64-bit words for sites of time slices ``t0 <= t < t1``.

    Word ``(t, site)`` is Philox output number ``t * S4 + site`` where ``S4``
    rounds the site count up to a multiple of four, so any time window can be
    regenerated without producing the slices before it.
    """
    S = box.n_sites
    S4 = 4 * ((S + 3) // 4)
    bg = np.random.Philox(key=stream_key(seed, stream, _SITES), counter=[t0 * S4 // 4, 0, 0, 0])
    w = bg.random_raw((t1 - t0) * S4).reshape(t1 - t0, S4)[:, :S]
    return w.reshape((t1 - t0,) + box.sides)


def words_to_uniform(w: np.ndarray) -> np.ndarray:
    return (w >> np.uint64(11)).astype(np.float64) * (1.0 / 2 ** 53)


def words_to_sign(w: np.ndarray) -> np.ndarray:
    return np.where(w >> np.uint64(63), 1.0, -1.0)


@dataclass(frozen=True)
class LangevinSpec:
    """Massive lattice field with potential ``V`` and coefficient map ``a_tilde``.

    ``V(z) = a_V |z|^2 / 2 + eps * sum_j sqrt(1 + z_j^2)``; ``eps = 0`` is the
    Gaussian (quadratic) case. ``a_tilde(s) = kappa (c0 + c1 tanh s) I``.
    """

    L: int = 16
    d: int = 1
    mass: float = 1.0
    a_V: float = 1.0
    eps: float = 0.0
    kappa: float = 1.0
    c0: float = 1.0
    c1: float = 0.5
    dt: float = 0.01
    T_burn: float = 20.0
    grid: float = 0.25

    def __post_init__(self):
        if self.mass <= 0 or self.a_V <= 0 or self.eps < 0:
            raise ValueError("need mass > 0, a_V > 0, eps >= 0")
        if not (0 <= self.c1 < self.c0) or self.kappa <= 0:
            raise EllipticityError("a_tilde needs kappa > 0 and 0 <= c1 < c0")
        if self.grid < self.dt or abs(self.grid / self.dt - round(self.grid / self.dt)) > 1e-9:
            raise ValueError("grid spacing must be a positive multiple of dt")

    @property
    def V_curvature(self):
        """Analytic bounds on ``V''``: ``[a_V, a_V + eps]``."""
        return self.a_V, self.a_V + self.eps

    @property
    def bounds(self) -> EllipticityBounds:
        return EllipticityBounds(self.kappa * (self.c0 - self.c1), self.kappa * (self.c0 + self.c1), self.d)

    @property
    def Lambda_1(self) -> float:
        """Sup norm of ``D a_tilde``."""
        return self.kappa * self.c1

    def max_dt(self) -> float:
        return 1.0 / (4 * self.d * self.V_curvature[1] + self.mass ** 2)

    def a_tilde(self, s):
        return self.kappa * (self.c0 + self.c1 * np.tanh(s))

    def box(self) -> LatticeBox:
        return LatticeBox.cube(self.d, self.L)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Declarative description of a random environment."""

    kind: str
    d: int = 1
    kappa: float = 1 / 8
    gamma: float = 0.0
    family: str = "uniform-scalar"
    low: float = 0.0
    high: float = 0.0
    langevin: Optional[LangevinSpec] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.kind == IID_BERNOULLI and not (0 <= self.gamma < 1):
            raise ValueError("Bernoulli contrast must satisfy 0 <= gamma < 1")
        if self.kind == IID_GENERAL:
            if self.family not in ("point", "uniform-scalar", "uniform-diagonal"):
                raise ValueError(f"unsupported site distribution {self.family!r}")
            if self.family != "point" and not (0 < self.low <= self.high):
                raise EllipticityError("site distribution must live in [low, high] with low > 0")
        if self.kind == LANGEVIN and self.langevin is None:
            raise ValueError("langevin environment needs a LangevinSpec")

    # convenience constructors
    @classmethod
    def constant(cls, d=1, kappa=1 / 8, seed=0):
        return cls(CONSTANT, d=d, kappa=kappa, seed=seed)

    @classmethod
    def bernoulli(cls, d=1, kappa=1 / 12, gamma=0.5, seed=0):
        return cls(IID_BERNOULLI, d=d, kappa=kappa, gamma=gamma, seed=seed)

    @classmethod
    def iid(cls, d=1, family="uniform-scalar", low=1 / 24, high=1 / 8, seed=0):
        if family == "point":
            return cls(IID_GENERAL, d=d, family=family, kappa=low, low=low, high=low, seed=seed)
        return cls(IID_GENERAL, d=d, family=family, low=low, high=high, seed=seed)

    @classmethod
    def langevin_field(cls, spec: LangevinSpec, seed=0):
        return cls(LANGEVIN, d=spec.d, kappa=spec.kappa, langevin=spec, seed=seed)

    def with_seed(self, seed: int) -> "EnvironmentSpec":
        return replace(self, seed=int(seed))

    @property
    def continuous(self) -> bool:
        return self.kind == LANGEVIN

    @property
    def bounds(self) -> EllipticityBounds:
        if self.kind == CONSTANT:
            return EllipticityBounds(self.kappa, self.kappa, self.d)
        if self.kind == IID_BERNOULLI:
            return EllipticityBounds(self.kappa * (1 - self.gamma), self.kappa * (1 + self.gamma), self.d)
        if self.kind == IID_GENERAL:
            return EllipticityBounds(self.low, self.high, self.d)
        return self.langevin.bounds

    def mean_coefficient(self) -> Optional[np.ndarray]:
        """Exact ``<a>`` when the site law makes it available in closed form."""
        eye = np.eye(self.d)
        if self.kind in (CONSTANT, IID_BERNOULLI):
            return self.kappa * eye
        if self.kind == IID_GENERAL:
            return (self.low if self.family == "point" else 0.5 * (self.low + self.high)) * eye
        return None

    def check(self):
        b = self.bounds
        if not self.continuous:
            b.check_discrete()
        return b


@dataclass
class CoefficientPath:
    """Coefficient slices ``a(., t_k)`` on a time grid.

    ``values`` is ``(n_t, *sides)`` for scalar multiples of the identity or
    ``(n_t, *sides, d, d)`` for matrices. Continuous-time paths are piecewise
    constant: slice ``k`` holds on ``[times[k], times[k+1])``.
    """

    box: LatticeBox
    times: np.ndarray
    values: np.ndarray
    continuous: bool = False
    spec: Optional[EnvironmentSpec] = None
    stream: int = 0
    field: Optional["FieldPath"] = None

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("one coefficient slice per time point required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def n_t(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_t > 1 else 1.0

    @property
    def is_matrix(self) -> bool:
        return self.values.ndim == 1 + self.box.d + 2

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]

    def matrices(self) -> np.ndarray:
        if self.is_matrix:
            return self.values
        return self.values[..., None, None] * np.eye(self.box.d)

    def check(self, bounds: EllipticityBounds, tol: float = 1e-12):
        check_ellipticity(self.values, bounds, self.box, tol)

    def to_csv(self, path):
        d = self.box.d
        mats = self.matrices()
        coords = self.box.coords().reshape(-1, d)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(d)] + ["t"]
                       + [f"a{i + 1}{j + 1}" for i in range(d) for j in range(d)])
            for k, t in enumerate(self.times):
                flat = mats[k].reshape(-1, d * d)
                for x, row in zip(coords, flat):
                    w.writerow([*map(int, x), repr(float(t)), *map(lambda v: repr(float(v)), row)])


@dataclass
class FieldPath:
    box: LatticeBox
    times: np.ndarray
    values: np.ndarray  # (n_t, *sides)


def sample_constant(spec: EnvironmentSpec, box: LatticeBox, T: int, stream: int = 0) -> CoefficientPath:
    if spec.kind != CONSTANT:
        raise ValueError("sample_constant needs a constant environment")
    vals = np.full((T,) + box.sides, float(spec.kappa))
    return CoefficientPath(box, np.arange(T), vals, spec=spec, stream=stream)


def sample_iid_bernoulli(spec: EnvironmentSpec, box: LatticeBox, T: int, stream: int = 0,
                         t0: int = 0) -> CoefficientPath:
    """``a(x,t) = kappa (1 + gamma Y_{x,t}) I`` with independent fair signs ``Y``."""
    if spec.kind != IID_BERNOULLI:
        raise ValueError("sample_iid_bernoulli needs an iid-bernoulli environment")
    spec.check()
    Y = words_to_sign(site_words(spec.seed, stream, box, t0, t0 + T))
    vals = spec.kappa * (1.0 + spec.gamma * Y)
    return CoefficientPath(box, np.arange(t0, t0 + T), vals, spec=spec, stream=stream)


def sample_iid_general(spec: EnvironmentSpec, box: LatticeBox, T: int, stream: int = 0,
                       t0: int = 0) -> CoefficientPath:
    """Independent site draws from one of the supported matrix families."""
    if spec.kind != IID_GENERAL:
        raise ValueError("sample_iid_general needs an iid-general environment")
    spec.check()
    shape = (T,) + box.sides
    if spec.family == "point":
        vals = np.full(shape, float(spec.low))
    elif spec.family == "uniform-scalar":
        U = words_to_uniform(site_words(spec.seed, stream, box, t0, t0 + T))
        vals = spec.low + (spec.high - spec.low) * U
    else:
        # one independent uniform per diagonal entry: use d consecutive streams
        diag = []
        for j in range(box.d):
            U = words_to_uniform(site_words(spec.seed, stream * box.d + j, box, t0, t0 + T))
            diag.append(spec.low + (spec.high - spec.low) * U)
        vals = np.zeros(shape + (box.d, box.d))
        for j in range(box.d):
            vals[..., j, j] = diag[j]
    path = CoefficientPath(box, np.arange(t0, t0 + T), vals, spec=spec, stream=stream)
    path.check(spec.bounds)
    return path


# --- Langevin field ---------------------------------------------------------------

def gaussian_covariance_symbol(spec: LangevinSpec, box: Optional[LatticeBox] = None) -> np.ndarray:
    """Fourier symbol ``1 / (a_V |e(zeta)|^2 + m^2)`` of the quadratic-V Gibbs covariance."""
    box = box or spec.box()
    z = box.frequencies()
    return 1.0 / (spec.a_V * np.sum(2 - 2 * np.cos(z), axis=-1) + spec.mass ** 2)


def exact_covariance(spec: LangevinSpec, box: Optional[LatticeBox] = None) -> np.ndarray:
    """``<phi(0) phi(x)>`` for quadratic ``V`` on the periodic box (FFT order)."""
    box = box or spec.box()
    return np.fft.ifftn(gaussian_covariance_symbol(spec, box)).real


def euler_maruyama_covariance(spec: LangevinSpec, dt: Optional[float] = None,
                              box: Optional[LatticeBox] = None) -> np.ndarray:
    """Stationary covariance of the Euler-Maruyama chain for quadratic ``V``.

    Each Fourier mode is an AR(1) process ``phi' = (1 - dt A/2) phi + sqrt(dt) N``
    whose stationary variance is ``1 / (A (1 - dt A / 4))``.
    """
    box = box or spec.box()
    dt = spec.dt if dt is None else dt
    A = 1.0 / gaussian_covariance_symbol(spec, box)
    return np.fft.ifftn(1.0 / (A * (1 - dt * A / 4))).real


def _drift(phi: np.ndarray, spec: LangevinSpec, box: LatticeBox) -> np.ndarray:
    """``-(1/2) dH/dphi`` with ``H = sum V(grad phi) + m^2 phi^2 / 2``."""
    d = box.d
    axes = [phi.ndim - d + i for i in range(d)]
    out = -spec.mass ** 2 * phi
    for ax in axes:
        z = np.roll(phi, -1, axis=ax) - phi
        dV = spec.a_V * z
        if spec.eps:
            dV = dV + spec.eps * z / np.sqrt(1 + z * z)
        out += dV - np.roll(dV, 1, axis=ax)
    return 0.5 * out


def gibbs_initial(spec: LangevinSpec, seed: int, stream: int = 0, batch: Optional[int] = None) -> np.ndarray:
    """Draw ``phi(., 0)`` from the finite-volume Gibbs measure.

    Quadratic ``V`` is sampled exactly in Fourier space; otherwise the field
    is relaxed from zero by ``T_burn`` of Langevin dynamics.
    """
    box = spec.box()
    gen = np.random.Generator(np.random.Philox(key=stream_key(seed, stream, _INIT)))
    shape = ((batch,) if batch else ()) + box.sides
    if spec.eps == 0:
        white = gen.standard_normal(shape)
        axes = tuple(range(len(shape) - box.d, len(shape)))
        root = np.sqrt(gaussian_covariance_symbol(spec, box))
        return np.fft.ifftn(np.fft.fftn(white, axes=axes) * root, axes=axes).real
    phi = np.zeros(shape)
    n = int(round(spec.T_burn / spec.dt))
    sq = np.sqrt(spec.dt)
    for _ in range(n):
        phi = phi + spec.dt * _drift(phi, spec, box) + sq * gen.standard_normal(shape)
    return phi


def langevin_path(spec: LangevinSpec, init: np.ndarray, horizon: float, seed: int, stream: int = 0,
                  dt: Optional[float] = None, grid: Optional[float] = None,
                  noise: Optional[np.ndarray] = None) -> FieldPath:
    """Euler-Maruyama integration of the field SDE, stored every ``grid`` time units.

    ``init`` may carry leading batch axes; all batch members then share the
    stream (pass distinct streams for independent samples). ``noise`` lets a
    caller supply the standard normal increments, shape ``(n_steps, *init.shape)``.
    """
    box = spec.box()
    dt = spec.dt if dt is None else dt
    grid = spec.grid if grid is None else grid
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if dt * (4 * box.d * spec.V_curvature[1] + spec.mass ** 2) / 2 >= 0.5:
        raise StabilityError(f"dt={dt:g} too large for the drift contraction condition")
    every = int(round(grid / dt))
    if abs(every * dt - grid) > 1e-9 * grid:
        raise ValueError("grid spacing must be a multiple of dt")
    n_steps = int(round(horizon / dt))
    if noise is None:
        gen = np.random.Generator(np.random.Philox(key=stream_key(seed, stream, _NOISE)))
    phi = np.array(init, float)
    out = [phi.copy()]
    sq = np.sqrt(dt)
    for k in range(n_steps):
        dB = noise[k] if noise is not None else gen.standard_normal(phi.shape)
        phi = phi + dt * _drift(phi, spec, box) + sq * dB
        if (k + 1) % every == 0:
            out.append(phi.copy())
    vals = np.asarray(out)
    times = grid * np.arange(len(out))
    return FieldPath(box, times, vals)


def coefficients_of_field(path: FieldPath, a_tilde: Callable, spec: Optional[EnvironmentSpec] = None,
                          stream: int = 0) -> CoefficientPath:
    vals = a_tilde(path.values)
    return CoefficientPath(path.box, path.times, vals, continuous=True, spec=spec, stream=stream, field=path)


def sample_langevin(spec: EnvironmentSpec, horizon: float, stream: int = 0) -> CoefficientPath:
    """Stationary coefficient path on ``[0, horizon)`` for the field environment."""
    ls = spec.langevin
    phi0 = gibbs_initial(ls, spec.seed, stream)
    fp = langevin_path(ls, phi0, horizon, spec.seed, stream)
    n = int(round(horizon / ls.grid))
    fp = FieldPath(fp.box, fp.times[:n], fp.values[:n])
    path = coefficients_of_field(fp, ls.a_tilde, spec, stream)
    path.check(ls.bounds)
    return path


def sample_path(spec: EnvironmentSpec, box: Optional[LatticeBox], T, stream: int = 0) -> CoefficientPath:
    """Dispatch on ``spec.kind``; ``T`` is a step count (discrete) or horizon (continuous)."""
    if spec.kind == CONSTANT:
        return sample_constant(spec, box, int(T), stream)
    if spec.kind == IID_BERNOULLI:
        return sample_iid_bernoulli(spec, box, int(T), stream)
    if spec.kind == IID_GENERAL:
        return sample_iid_general(spec, box, int(T), stream)
    if box is not None and box.sides != spec.langevin.box().sides:
        raise ValueError("Langevin environments live on their own box Q_L")
    return sample_langevin(spec, float(T), stream)


def sample_langevin_batch(spec: EnvironmentSpec, horizon: float, streams, block: int = 256):
    """Coefficient values for several streams at once, shape ``(B, n_t, *sides)``.

    Each stream keeps its own generator and draws its increments in the same
    order as :func:`sample_langevin`, so row ``b`` equals the single-stream
    path for ``streams[b]`` bit for bit; only the stepping is vectorized.
    """
    ls = spec.langevin
    box = ls.box()
    streams = list(streams)
    phi = np.stack([gibbs_initial(ls, spec.seed, s) for s in streams])
    gens = [np.random.Generator(np.random.Philox(key=stream_key(spec.seed, s, _NOISE))) for s in streams]
    if ls.dt * (4 * box.d * ls.V_curvature[1] + ls.mass ** 2) / 2 >= 0.5:
        raise StabilityError(f"dt={ls.dt:g} too large for the drift contraction condition")
    every = int(round(ls.grid / ls.dt))
    n_keep = int(round(horizon / ls.grid))
    n_steps = (n_keep - 1) * every
    out = [phi.copy()]
    sq = np.sqrt(ls.dt)
    k = 0
    while k < n_steps:
        m = min(block, n_steps - k)
        noise = np.stack([g.standard_normal((m,) + box.sides) for g in gens], axis=1)
        for j in range(m):
            phi = phi + ls.dt * _drift(phi, ls, box) + sq * noise[j]
            k += 1
            if k % every == 0:
                out.append(phi.copy())
    vals = ls.a_tilde(np.stack(out, axis=1))
    check_ellipticity(vals, ls.bounds, box)
    return vals, ls.grid * np.arange(n_keep)


def sample_values(spec: EnvironmentSpec, box: Optional[LatticeBox], T, streams):
    """Stacked coefficient values ``(B, n_t, ...)`` and the time grid for a list of streams."""
    streams = list(streams)
    if spec.continuous:
        return sample_langevin_batch(spec, float(T), streams)
    paths = [sample_path(spec, box, T, stream=s) for s in streams]
    return np.stack([p.values for p in paths]), paths[0].times


# --- stationary moments of the field dynamics ---------------------------------------

@dataclass
class LangevinCheck:
    """Site-averaged variance and lag-1 covariance after Euler-Maruyama evolution."""

    n_samples: int
    horizon: float
    dt: float
    measured: np.ndarray        # (variance, lag-1 covariance) at step dt
    stderr: np.ndarray
    exact: np.ndarray           # continuum-time Gibbs values
    em_predicted: np.ndarray    # stationary values of the chain at step dt
    measured_half: np.ndarray   # same increments refined to dt/2
    paired_diff: np.ndarray     # measured - measured_half
    paired_stderr: np.ndarray
    predicted_diff: np.ndarray  # em(dt) - em(dt/2)

    def within_budget(self, sigmas: float = 3.0, bias_budget: float = 0.02) -> np.ndarray:
        return np.abs(self.measured - self.exact) <= sigmas * self.stderr + bias_budget * np.abs(self.exact)

    def halving_consistent(self, sigmas: float = 3.0) -> np.ndarray:
        """Paired dt vs dt/2 shift matches the predicted bias change.

        The sign is only demanded where the predicted shift is resolvable
        above ``sigmas`` standard errors; below that it carries no information.
        """
        close = np.abs(self.paired_diff - self.predicted_diff) <= sigmas * self.paired_stderr
        resolvable = np.abs(self.predicted_diff) > sigmas * self.paired_stderr
        same_sign = np.sign(self.paired_diff) == np.sign(self.predicted_diff)
        return close & (same_sign | ~resolvable)


def _two_point(phi, d):
    """Per-sample site averages of ``phi(x)^2`` and ``phi(x) phi(x + e_1)``."""
    ax = tuple(range(phi.ndim - d, phi.ndim))
    return np.stack([np.mean(phi * phi, axis=ax),
                     np.mean(phi * np.roll(phi, -1, axis=phi.ndim - d), axis=ax)], axis=-1)


def langevin_moment_check(spec: LangevinSpec, n_samples: int, seed: int, horizon: float = 20.0,
                          batch: int = 1000) -> LangevinCheck:
    """Run ``n_samples`` chains from exact Gibbs draws with steps ``dt`` and ``dt/2``.

    Both chains of a sample share their initial field and Brownian path: each
    coarse increment is the normalized sum of two fine ones. The difference of
    the two estimates therefore isolates the step-size bias.
    """
    if spec.eps != 0:
        raise ValueError("exact moments are only available for quadratic V")
    box = spec.box()
    d = box.d
    dt = spec.dt
    n_coarse = int(round(horizon / dt))
    stats, stats_h = [], []
    for b0 in range(0, n_samples, batch):
        B = min(batch, n_samples - b0)
        phi0 = gibbs_initial(spec, seed, stream=b0 // batch, batch=B)
        gen = np.random.Generator(np.random.Philox(key=stream_key(seed, b0 // batch, _NOISE)))
        phi, phh = phi0.copy(), phi0.copy()
        sq, sqh = np.sqrt(dt), np.sqrt(dt / 2)
        for _ in range(n_coarse):
            w = gen.standard_normal((2,) + phi.shape)
            phh = phh + (dt / 2) * _drift(phh, spec, box) + sqh * w[0]
            phh = phh + (dt / 2) * _drift(phh, spec, box) + sqh * w[1]
            phi = phi + dt * _drift(phi, spec, box) + sq * (w[0] + w[1]) / np.sqrt(2)
        stats.append(_two_point(phi, d))
        stats_h.append(_two_point(phh, d))
    s = np.concatenate(stats)
    sh = np.concatenate(stats_h)
    n = len(s)
    exact = exact_covariance(spec, box)
    em = euler_maruyama_covariance(spec, dt, box)
    emh = euler_maruyama_covariance(spec, dt / 2, box)
    e1 = (1,) + (0,) * (d - 1)
    o = (0,) * d
    pick = lambda C: np.array([C[o], C[e1]])
    return LangevinCheck(
        n_samples=n, horizon=horizon, dt=dt,
        measured=s.mean(axis=0), stderr=s.std(axis=0, ddof=1) / np.sqrt(n),
        exact=pick(exact), em_predicted=pick(em), measured_half=sh.mean(axis=0),
        paired_diff=(s - sh).mean(axis=0), paired_stderr=(s - sh).std(axis=0, ddof=1) / np.sqrt(n),
        predicted_diff=pick(em) - pick(emh))
