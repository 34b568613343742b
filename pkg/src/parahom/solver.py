"""Time evolution of the random parabolic equation and Monte Carlo Green's functions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environments import EnvironmentSpec, sample_path, sample_values
from .errors import StabilityError
from .fitting import linear_fit
from .lattice import LatticeBox, apply_divergence_form, gradient, is_matrix_field, phase_vector
from .parallel import RunningStats, chunks, ordered_map


# --- initial data -----------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Smooth profile ``f`` on ``R^d`` with a known Fourier transform.

    ``gaussian``: ``amplitude * exp(-|x|^2 / (2 width^2))``.
    ``bump``: product of ``exp(-1 / (1 - (x_i/width)^2))`` on ``|x_i| < width``.
    Fourier convention: ``f_hat(xi) = int f(y) exp(i y.xi) dy``.
    """

    kind: str = "gaussian"
    width: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "bump"):
            raise ValueError(f"unknown profile {self.kind!r}")
        if self.width <= 0:
            raise ValueError("profile width must be positive")

    def __call__(self, x):
        x = np.asarray(x, float)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-np.sum(x * x, axis=-1) / (2 * self.width ** 2))
        s = x / self.width
        inside = np.abs(s) < 1
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            f = np.where(inside, np.exp(-1.0 / (1.0 - np.where(inside, s * s, 0.0))), 0.0)
        return self.amplitude * np.prod(f, axis=-1)

    @property
    def support_radius(self) -> float:
        """Radius beyond which ``|f| < 1e-17 * amplitude``."""
        return self.width * (np.sqrt(2 * 17 * np.log(10)) if self.kind == "gaussian" else 1.0)

    def fourier_1d(self, xi):
        xi = np.asarray(xi, float)
        if self.kind == "gaussian":
            return np.sqrt(2 * np.pi) * self.width * np.exp(-(self.width * xi) ** 2 / 2)
        # Gauss-Legendre on the support; the bump is smooth so this converges fast
        n_nodes = max(200, int(1.5 * self.width * float(np.max(np.abs(xi), initial=0.0))) + 100)
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
        y = self.width * nodes
        f = np.exp(-1.0 / (1.0 - nodes ** 2))
        return self.width * np.tensordot(np.cos(np.multiply.outer(xi, y)), weights * f, axes=1)

    def fourier(self, xi):
        """``f_hat`` at points of shape ``(..., d)``."""
        xi = np.asarray(xi, float)
        out = self.fourier_1d(xi[..., 0])
        for j in range(1, xi.shape[-1]):
            out = out * self.fourier_1d(xi[..., j])
        return self.amplitude * out


@dataclass(frozen=True)
class InitialData:
    """Lattice data ``h(x)``, either explicit or ``h(x) = f(eps x)``."""

    values: Optional[np.ndarray] = None
    profile: Optional[Profile] = None
    eps: float = 1.0

    def __post_init__(self):
        if (self.values is None) == (self.profile is None):
            raise ValueError("give exactly one of values or profile")
        if not (0 < self.eps <= 1):
            raise ValueError("eps must lie in (0, 1]")

    @classmethod
    def delta(cls, box: LatticeBox):
        return cls(values=box.delta())

    def on_box(self, box: LatticeBox) -> np.ndarray:
        if self.values is not None:
            v = np.asarray(self.values, float)
            if v.shape != box.sides:
                raise ValueError("initial data does not match box")
            return v
        return self.profile(self.eps * box.coords())


# --- single steps and evolution ---------------------------------------------------

def _sup_coefficient(a, box) -> float:
    a = np.asarray(a)
    if is_matrix_field(a, box):
        return float(np.max(np.linalg.eigvalsh(a)))
    return float(np.max(a))


def step_discrete(u, a, box: LatticeBox, check: bool = True) -> np.ndarray:
    """One step ``u' = u - grad*(a grad u)``."""
    if check and 4 * box.d * _sup_coefficient(a, box) > 1 + 1e-12:
        raise StabilityError("4 d Lambda > 1 for this coefficient slice")
    return u - apply_divergence_form(a, u, box)


def evolve_discrete(h, path, T: int, snapshots=None) -> np.ndarray:
    """Iterate :func:`step_discrete` with slice ``a(., t)`` at step ``t``.

    Returns ``u(., t)`` for each requested snapshot time (default ``0..T``).
    """
    box = path.box
    if path.n_t < T:
        raise ValueError(f"path covers {path.n_t} steps, need {T}")
    u = h.on_box(box) if isinstance(h, InitialData) else np.asarray(h, float)
    snaps = np.arange(T + 1) if snapshots is None else np.asarray(snapshots, int)
    if 4 * box.d * _sup_coefficient(path.values[:T], box) > 1 + 1e-12:
        raise StabilityError("4 d Lambda > 1 somewhere on the path")
    if u.shape != box.sides:
        raise ValueError("initial data does not match box")
    return _evolve_discrete_batch(u, path.values[None, :T], box, snaps)[:, 0]


def _evolve_discrete_batch(u, coeffs, box, snaps, callback=None):
    """``u``: (B, *sides) or (*sides); ``coeffs``: (B, T, ...) slices. Returns (n_snap, B, *sides)."""
    u = np.array(u, float)
    if u.ndim == box.d:
        u = np.broadcast_to(u, (coeffs.shape[0],) + u.shape).copy()
    T = coeffs.shape[1]
    want = {int(s): i for i, s in enumerate(snaps)}
    if max(want) > T:
        raise ValueError("snapshot beyond path length")
    out = np.empty((len(snaps),) + u.shape)
    for t in range(T + 1):
        if t in want:
            out[want[t]] = u
            if callback is not None:
                callback(want[t], u)
        if t < T and t < max(want):
            u = u - apply_divergence_form(coeffs[:, t], u, box)
    return out


def _rk4_cell(u, a, box, tau, n_sub):
    h = tau / n_sub
    f = lambda v: -apply_divergence_form(a, v, box)
    for _ in range(n_sub):
        k1 = f(u)
        k2 = f(u + 0.5 * h * k1)
        k3 = f(u + 0.5 * h * k2)
        k4 = f(u + h * k3)
        u = u + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def _euler_cell(u, a, box, tau, n_sub):
    h = tau / n_sub
    for _ in range(n_sub):
        u = u - h * apply_divergence_form(a, u, box)
    return u


@dataclass
class ContinuousEvolution:
    times: np.ndarray
    values: np.ndarray
    substeps: int
    substep: float


def evolve_continuous(h, path, times, safety: float = 0.1, method: str = "rk4",
                      refine: int = 1) -> ContinuousEvolution:
    """Integrate ``du/dt = -grad*(a grad u)`` with ``a`` piecewise constant on the path grid.

    Inside each grid cell the equation is linear with frozen coefficients and
    is advanced by explicit substeps of length at most
    ``safety / (4 d Lambda) / refine``.
    """
    times = np.asarray(times, float)
    if times.size == 0:
        raise ValueError("empty time list")
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be nonnegative and nondecreasing")
    box = path.box
    coeffs = path.values
    u = h.on_box(box) if isinstance(h, InitialData) else np.asarray(h, float)
    vals, n_total, hmax = _evolve_continuous_batch(u[None] if u.ndim == box.d else u,
                                                   coeffs[None], path.times, box, times,
                                                   safety, method, refine)
    vals = vals[:, 0] if u.ndim == box.d else vals
    return ContinuousEvolution(times, vals, n_total, hmax)


def _evolve_continuous_batch(u, coeffs, grid, box, times, safety=0.1, method="rk4", refine=1):
    """``coeffs``: (B, n_t, ...) piecewise constant on ``grid``."""
    grid = np.asarray(grid, float)
    cell = grid[1] - grid[0] if len(grid) > 1 else np.inf
    if times.max() > grid[-1] + cell + 1e-12:
        raise ValueError("requested time beyond coefficient path")
    Lam = _sup_coefficient(coeffs, box)
    hmax = safety / (4 * box.d * Lam) / refine
    stepper = _rk4_cell if method == "rk4" else _euler_cell
    u = np.array(u, float)
    if u.shape[0] != coeffs.shape[0]:
        u = np.broadcast_to(u, (coeffs.shape[0],) + u.shape[1:]).copy()
    out = np.empty((len(times),) + u.shape)
    t_now, k, n_total = 0.0, 0, 0
    for i, t_target in enumerate(times):
        while t_now < t_target - 1e-13:
            while k + 1 < len(grid) and grid[k + 1] <= t_now + 1e-13:
                k += 1
            cell_end = grid[k + 1] if k + 1 < len(grid) else np.inf
            tau = min(cell_end, t_target) - t_now
            n_sub = max(1, int(np.ceil(tau / hmax - 1e-12)))
            u = stepper(u, coeffs[:, k], box, tau, n_sub)
            n_total += n_sub
            t_now += tau
        out[i] = u
    return out, n_total, hmax


# --- Monte Carlo Green's function -------------------------------------------------

def mc_box_side(Lambda: float, T: float) -> int:
    """Default box side ``nextpow2(12 sqrt(Lambda T + 1))`` for Monte Carlo runs."""
    return int(2 ** np.ceil(np.log2(12 * np.sqrt(Lambda * T + 1))))


@dataclass
class GreenEstimate:
    """Monte Carlo mean and standard error of the averaged Green's function."""

    box: LatticeBox
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    N: int
    spec: EnvironmentSpec
    continuous: bool = False
    modes: list = field(default_factory=list)
    mode_samples: Optional[np.ndarray] = None  # (N, n_modes, n_t)
    diff: dict = field(default_factory=dict)   # order -> (mean, stderr)

    @property
    def seed(self) -> int:
        return self.spec.seed

    def total_mass(self):
        axes = tuple(range(1, 1 + self.box.d))
        return self.mean.sum(axis=axes), np.sqrt((self.stderr ** 2).sum(axis=axes))

    def to_csv(self, path):
        d = self.box.d
        coords = self.box.coords().reshape(-1, d)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(d)] + ["t", "mean", "stderr", "N", "seed"])
            for k, t in enumerate(self.times):
                for x, m, s in zip(coords, self.mean[k].ravel(), self.stderr[k].ravel()):
                    w.writerow([*map(int, x), repr(float(t)), repr(float(m)), repr(float(s)),
                                self.N, self.seed])


def differences(u, box: LatticeBox, order: int) -> np.ndarray:
    """Forward differences of ``u``: order 1 -> (..., d), order 2 -> (..., d, d)."""
    if order == 0:
        return u
    g = gradient(u, box)
    if order == 1:
        return g
    if order == 2:
        comps = [gradient(g[..., i], box) for i in range(box.d)]
        return np.stack(comps, axis=-2)
    raise ValueError("order must be 0, 1 or 2")


def mode_weights(box: LatticeBox, modes) -> np.ndarray:
    """``exp(i xi . x)`` on the centred box coordinates, shape (n_modes, *sides)."""
    x = box.coords()
    return np.stack([np.exp(1j * (x @ np.asarray(xi, float))) for xi in modes])


def green_mc_estimate(spec: EnvironmentSpec, box: Optional[LatticeBox], times, N: int, chunk: int = 64,
                      workers=None, modes=(), diff_orders=(), h=None, safety: float = 0.1) -> GreenEstimate:
    """Average the Green's function over ``N`` environment samples.

    Sample ``n`` uses RNG stream ``n``. Samples are processed in fixed-size
    chunks whose statistics are merged in chunk order, so the result does not
    depend on the number of worker threads.
    """
    if N < 1:
        raise ValueError("need at least one sample")
    times = np.asarray(times)
    continuous = spec.continuous
    if continuous:
        box = spec.langevin.box()
    if box is None:
        box = LatticeBox.cube(spec.d, mc_box_side(spec.bounds.Lam, float(times.max())))
    if not continuous:
        spec.check()
        times = times.astype(int)
    h0 = box.delta() if h is None else (h.on_box(box) if isinstance(h, InitialData) else np.asarray(h, float))
    modes = [np.atleast_1d(np.asarray(m, float)) for m in modes]
    W = mode_weights(box, modes) if modes else None
    sp_axes = tuple(range(-box.d, 0))

    def run_chunk(bounds):
        n0, n1 = bounds
        if continuous:
            horizon = float(times.max()) + spec.langevin.grid
            coeffs, grid = sample_values(spec, box, horizon, range(n0, n1))
            snaps, _, _ = _evolve_continuous_batch(h0[None], coeffs, grid, box, times.astype(float), safety)
        else:
            T = int(times.max())
            coeffs = np.stack([sample_path(spec, box, T, stream=n).values for n in range(n0, n1)])
            snaps = _evolve_discrete_batch(h0, coeffs, box, times)
        snaps = np.swapaxes(snaps, 0, 1)  # (B, n_t, *sides)
        stats = RunningStats()
        stats.add_batch(snaps)
        dstats = {}
        for o in diff_orders:
            s = RunningStats()
            s.add_batch(differences(snaps, box, o))
            dstats[o] = s
        ms = None
        if W is not None:
            sp = list(range(2, 2 + box.d))
            ms = np.moveaxis(np.tensordot(snaps, W, axes=(sp, list(range(1, 1 + box.d)))), -1, 1)
        return stats, dstats, ms

    results = ordered_map(run_chunk, chunks(N, chunk), workers)
    total = RunningStats()
    dtotal = {o: RunningStats() for o in diff_orders}
    mode_parts = []
    for stats, dstats, ms in results:
        total.merge(stats.n, stats.mean, stats.m2)
        for o in diff_orders:
            dtotal[o].merge(dstats[o].n, dstats[o].mean, dstats[o].m2)
        if ms is not None:
            mode_parts.append(ms)
    return GreenEstimate(box=box, times=times, mean=total.mean, stderr=total.stderr, N=N, spec=spec,
                         continuous=continuous, modes=modes,
                         mode_samples=np.concatenate(mode_parts) if mode_parts else None,
                         diff={o: (dtotal[o].mean, dtotal[o].stderr) for o in diff_orders})


# --- effective symbol from Fourier-mode decay ---------------------------------------

@dataclass
class ModeDecay:
    xi: np.ndarray
    times: np.ndarray
    ghat: np.ndarray
    ghat_stderr: np.ndarray
    slope: float
    q_direct: float
    q_stderr: float
    npoints: int


def fourier_mode_decay(estimate: GreenEstimate, modes=None, t_min=None, t_max=None):
    """Fit ``log Re G_hat(xi, t)`` linearly in ``t`` and convert the rate to a symbol.

    Discrete time: ``G_hat ~ (1 - q |e(xi)|^2)^t``; continuous time:
    ``G_hat ~ exp(-q |e(xi)|^2 t)``. For ``d > 1`` the returned ``q_direct``
    is the quadratic form ``e* q e / |e|^2`` along the mode.
    """
    box = estimate.box
    modes = estimate.modes if modes is None else [np.atleast_1d(np.asarray(m, float)) for m in modes]
    t = np.asarray(estimate.times, float)
    sel = np.ones_like(t, bool)
    if t_min is not None:
        sel &= t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    if sel.sum() < 3:
        raise ValueError("fit window shorter than 3 points")
    rows = []
    for xi in modes:
        samples = None
        if estimate.mode_samples is not None:
            for j, m in enumerate(estimate.modes):
                if m.shape == xi.shape and np.allclose(m, xi):
                    samples = estimate.mode_samples[:, j, :].real
        if samples is not None:
            ghat = samples.mean(axis=0)
            cov = np.cov(samples, rowvar=False) / samples.shape[0] if samples.shape[0] > 1 else \
                np.zeros((len(t), len(t)))
            se = np.sqrt(np.clip(np.diag(cov), 0, None))
        else:
            w = mode_weights(box, [xi])[0].real
            ghat = np.tensordot(estimate.mean, w, axes=box.d)
            se = np.sqrt(np.tensordot(estimate.stderr ** 2, w ** 2, axes=box.d))
            cov = np.diag(se ** 2)
        e2 = float(np.sum(np.abs(phase_vector(xi)) ** 2))
        tt, gg = t[sel], ghat[sel]
        if np.any(gg <= 0):
            raise ValueError("Fourier mode not positive on the fit window; shorten it")
        coef, _, _, _ = linear_fit(tt, np.log(gg))
        slope = float(coef[1])
        c = (tt - tt.mean()) / np.sum((tt - tt.mean()) ** 2)
        grad = np.zeros_like(t)
        grad[sel] = c / gg
        var_slope = float(grad @ cov @ grad)
        if estimate.continuous:
            q, dq = -slope / e2, 1.0 / e2
        else:
            q, dq = (1 - np.exp(slope)) / e2, np.exp(slope) / e2
        rows.append(ModeDecay(xi=xi, times=t, ghat=ghat, ghat_stderr=se, slope=slope, q_direct=float(q),
                              q_stderr=float(dq * np.sqrt(max(var_slope, 0.0))), npoints=int(sel.sum())))
    return rows
