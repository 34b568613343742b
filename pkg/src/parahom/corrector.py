"""Corrector equation on a space-time box and the effective matrix ``q(xi, eta)``.

Stationary fields are realized on a periodic space-time box with the time
axis first: a scalar field has shape ``(n_t, *sides)`` and a vector field
``(n_t, *sides, d)``, optionally with leading batch axes. The operator
``T(xi, eta)`` is diagonal in space-time Fourier variables, which is how it is
applied; a kernel-sum route is kept as an independent cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environments import EnvironmentSpec, sample_path, sample_values
from .errors import ConvergenceError, TailToleranceError
from .fitting import INCONCLUSIVE, DecayFit, _verdict, linear_fit, t_quantile
from .heat_kernel import continuous_symbol, discrete_kernel
from .lattice import LatticeBox, phase_norm2, phase_vector
from .parallel import chunks, ordered_map

# corrector samples draw from streams disjoint from the Green's-function ones
CORRECTOR_STREAM_BASE = 2 ** 40


def _as_xi(xi, d: int) -> np.ndarray:
    xi = np.atleast_1d(np.asarray(xi, float))
    if xi.shape != (d,):
        raise ValueError(f"xi must have {d} components, got shape {xi.shape}")
    return xi


def _spatial_axes(ndim: int, d: int, trailing: int):
    return [ndim - trailing - d + i for i in range(d)]


def twisted_gradient(psi, xi, box: LatticeBox) -> np.ndarray:
    """``(d_{j,xi} psi)(x) = exp(-i xi_j) psi(x + e_j) - psi(x)`` on the trailing spatial axes."""
    psi = np.asarray(psi)
    if psi.shape[psi.ndim - box.d:] != box.sides:
        raise ValueError(f"field of shape {psi.shape} does not live on box {box.sides}")
    xi = _as_xi(xi, box.d)
    axes = _spatial_axes(psi.ndim, box.d, 0)
    return np.stack([np.exp(-1j * xi[j]) * np.roll(psi, -1, axis=ax) - psi
                     for j, ax in enumerate(axes)], axis=-1)


def twisted_divergence(g, xi, box: LatticeBox) -> np.ndarray:
    """Adjoint of :func:`twisted_gradient`: ``sum_j exp(i xi_j) g_j(x - e_j) - g_j(x)``."""
    g = np.asarray(g)
    if g.shape[-1] != box.d or g.shape[g.ndim - 1 - box.d:-1] != box.sides:
        raise ValueError(f"vector field of shape {g.shape} does not live on box {box.sides}")
    xi = _as_xi(xi, box.d)
    axes = _spatial_axes(g.ndim, box.d, 1)
    out = np.zeros(g.shape[:-1], dtype=complex)
    for j, ax in enumerate(axes):
        out += np.exp(1j * xi[j]) * np.roll(g[..., j], 1, axis=ax) - g[..., j]
    return out


# --- the operator T ---------------------------------------------------------------

def time_frequencies(n_t: int) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n_t)


def _scalar_propagator(e2, theta, eta, Lam, continuous: bool, h: float):
    """Time-convolution weights of ``T`` in Fourier variables.

    Discrete time: ``Lambda / (exp(eta + i theta) - 1 + Lambda |e|^2)``.
    Continuous time, fields piecewise constant on cells of length ``h``: the
    cell average of ``Lambda int_0^inf exp(-(eta + Lambda |e|^2) s) f(t - s) ds``,
    evaluated in closed form (Galerkin projection onto cell-constant fields).
    """
    theta = theta.reshape((-1,) + (1,) * e2.ndim)
    if not continuous:
        return Lam / (np.exp(eta + 1j * theta) - 1.0 + Lam * e2)
    c = eta + Lam * e2
    ch = c * h
    one_m_E = -np.expm1(-ch)
    E = np.exp(-ch)
    z = np.exp(-1j * theta)
    same_cell = (1.0 - one_m_E / ch) / c
    earlier = one_m_E ** 2 * z / (c * c * h * (1.0 - E * z))
    return Lam * (same_cell + earlier)


@dataclass
class TOperator:
    """``T(xi, eta) g = Lambda d_xi R d*_xi g`` on a periodic space-time box.

    ``R`` is the resolvent of the constant-coefficient equation with
    coefficient ``Lambda``. Calling the operator with ``project=True``
    additionally removes the space-time mean (the projection off constants).
    """

    box: LatticeBox
    n_t: int
    xi: np.ndarray
    eta: complex
    Lam: float
    continuous: bool = False
    h: float = 1.0

    def __post_init__(self):
        self.xi = _as_xi(self.xi, self.box.d)
        if not np.real(self.eta) > 0:
            raise ValueError("Re eta must be positive")
        zeta = self.box.frequencies()
        self.e = phase_vector(self.xi - zeta)
        e2 = phase_norm2(self.xi - zeta)
        self.prop = _scalar_propagator(e2, time_frequencies(self.n_t), complex(self.eta), self.Lam,
                                       self.continuous, self.h)

    @property
    def axes(self):
        d = self.box.d
        return tuple(range(-(d + 2), -1))

    def __call__(self, g, project: bool = False) -> np.ndarray:
        g = np.asarray(g)
        if g.shape[-(self.box.d + 2):] != (self.n_t,) + self.box.sides + (self.box.d,):
            raise ValueError(f"field of shape {g.shape} does not match the space-time box")
        gh = np.fft.fftn(g, axes=self.axes)
        s = np.einsum("...j,...j->...", np.conj(self.e), gh) * self.prop
        out = s[..., None] * self.e
        if project:
            out[(Ellipsis,) + (0,) * (self.box.d + 1) + (slice(None),)] = 0.0
        return np.fft.ifftn(out, axes=self.axes)

    def constant_response(self, v) -> np.ndarray:
        """Closed-form image of the constant field ``v`` (no projection)."""
        e = phase_vector(self.xi)
        v = np.asarray(v, complex)
        if self.continuous:
            prop = _scalar_propagator(np.asarray(phase_norm2(self.xi)), np.zeros(1), complex(self.eta),
                                      self.Lam, True, self.h)[0]
            return prop * (np.conj(e) @ v) * e
        return (np.conj(e) @ v) * e / ((np.exp(self.eta) - 1) / self.Lam + np.sum(np.abs(e) ** 2))


def apply_T(g, xi, eta, box: LatticeBox, Lam: float, continuous: bool = False, h: float = 1.0,
            project: bool = False) -> np.ndarray:
    """Apply ``T(xi, eta)`` to a vector field of shape ``(..., n_t, *sides, d)``."""
    n_t = np.shape(g)[-(box.d + 2)]
    return TOperator(box, n_t, xi, eta, Lam, continuous, h)(g, project=project)


def kernel_tail_bound(eta, Lam: float, d: int, T_ker: int, continuous: bool = False, h: float = 1.0) -> float:
    """Operator-norm bound on the part of ``T`` discarded by truncating at ``T_ker`` terms."""
    r = np.real(eta) * (h if continuous else 1.0)
    scale = Lam * h if continuous else Lam
    return float(4 * d * scale * np.exp(-r * T_ker) / -np.expm1(-r))


def apply_T_kernel(g, xi, eta, box: LatticeBox, Lam: float, continuous: bool = False, h: float = 1.0,
                   T_ker: Optional[int] = None, tail_tol: float = 1e-8, project: bool = False,
                   quad_nodes: int = 12):
    """Real-space evaluation of ``T`` from tabulated heat kernels.

    The time sum is truncated after ``T_ker`` terms (default ``ceil(8 / Re eta)``
    in units of the time step); the discarded part is bounded by
    :func:`kernel_tail_bound` and must stay below ``tail_tol``. On a periodic
    box this agrees with the Fourier route up to that tail when ``xi`` is a
    box frequency, and up to periodization images otherwise.

    Returns ``(Tg, tail_bound)``.
    """
    g = np.asarray(g)
    d = box.d
    xi = _as_xi(xi, d)
    if not np.real(eta) > 0:
        raise ValueError("Re eta must be positive")
    n_t = g.shape[-(d + 2)]
    step = h if continuous else 1.0
    if T_ker is None:
        T_ker = int(np.ceil(8.0 / (np.real(eta) * step)))
    tail = kernel_tail_bound(eta, Lam, d, T_ker, continuous, h)
    if tail > tail_tol:
        raise TailToleranceError(f"discarded tail {tail:.3e} exceeds {tail_tol:g}; raise T_ker")

    x = box.coords()
    twist = np.exp(1j * (x @ xi))
    if continuous:
        sym = continuous_symbol(box)
        nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)

        def K(t):
            return np.fft.ifftn(np.exp(-Lam * sym * t)).real

        W = []
        for j in range(T_ker + 1):
            acc = np.zeros(box.sides)
            for a0, a1, rising in (((j - 1) * h, j * h, True), (j * h, (j + 1) * h, False)):
                if a1 <= 0:
                    continue
                tq = 0.5 * (a1 - a0) * nodes + 0.5 * (a0 + a1)
                wq = 0.5 * (a1 - a0) * weights
                hat = (tq - a0) / h if rising else (a1 - tq) / h
                for t_, w_, k_ in zip(tq, wq, hat):
                    acc = acc + w_ * k_ * np.exp(-eta * t_) * K(t_)
            W.append(Lam * acc)
    else:
        table = discrete_kernel(d, Lam, box, max(T_ker - 1, 0), periodic=True)
        W = [np.zeros(box.sides)] + [Lam * np.exp(-eta * j) * table.full[j - 1] for j in range(1, T_ker + 1)]

    sp_axes = tuple(range(-d, 0))
    f = twisted_divergence(g, xi, box)
    F = np.fft.fftn(f, axes=sp_axes)
    taxis = F.ndim - d - 1
    psi = np.zeros_like(F)
    for j, Wj in enumerate(W):
        Kj = np.fft.fftn(Wj * twist)
        psi += Kj * np.roll(F, j, axis=taxis)
    out = twisted_gradient(np.fft.ifftn(psi, axes=sp_axes), xi, box)
    if project:
        out = out - out.mean(axis=tuple(range(out.ndim - d - 2, out.ndim - 1)), keepdims=True)
    return out, tail


# --- Neumann series ---------------------------------------------------------------

@dataclass
class CorrectorField:
    """``psi_v = d_xi Phi v`` for each probe vector ``v`` on one sampled box."""

    psi: np.ndarray          # (n_v, n_t, *sides, d)
    vectors: np.ndarray      # (n_v, d)
    xi: np.ndarray
    eta: complex
    iterations: int
    residual: float
    ratios: np.ndarray       # successive update-norm ratios

    def rms(self) -> np.ndarray:
        ax = tuple(range(1, self.psi.ndim))
        return np.sqrt(np.mean(np.sum(np.abs(self.psi) ** 2, axis=-1), axis=ax[:-1]))


def _apply_b(b, x, d):
    """Multiply a vector field batch ``x`` (B, n_v, n_t, *sides, d) by ``b`` (B, n_t, *sides[, d, d])."""
    if b.ndim == x.ndim:  # matrix field
        return np.einsum("b...ij,bv...j->bv...i", b, x)
    return b[:, None, ..., None] * x


def _neumann_batch(op: TOperator, b, V, tol, max_iter, psi0=None):
    """Iterate ``psi <- P T[b (psi + v)]`` on a batch; returns psi, iterations, residual, ratios."""
    B = b.shape[0]
    d = op.box.d
    shape = (B, V.shape[0], op.n_t) + op.box.sides + (d,)
    vfield = V.reshape((1, V.shape[0]) + (1,) * (d + 1) + (d,)).astype(complex)
    psi = np.zeros(shape, complex) if psi0 is None else np.array(psi0, complex)
    red = tuple(range(1, len(shape)))
    n_cells = np.prod(shape[2:-1])
    prev = None
    ratios = []
    for it in range(1, max_iter + 1):
        new = op(_apply_b(b, psi + vfield, d), project=True)
        upd = np.sqrt(np.sum(np.abs(new - psi) ** 2, axis=red) / (n_cells * V.shape[0]))
        psi = new
        if prev is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios.append(np.where(prev > 0, upd / prev, 0.0))
        prev = upd
        if np.all(upd < tol):
            return psi, it, float(upd.max()), np.array(ratios).reshape(-1, B)
    raise ConvergenceError(f"Neumann iteration did not reach {tol:g} in {max_iter} steps "
                           f"(last update {prev.max():.3e}); check the ellipticity ratio")


def default_max_iter(contraction: float, tol: float) -> int:
    if contraction <= 0:
        return 3
    return int(np.ceil(np.log(tol) / np.log(contraction))) * 2 + 20


def neumann_solve(path, xi, eta, v=None, tol: float = 1e-8, Lam: Optional[float] = None,
                  lam: Optional[float] = None, max_iter: Optional[int] = None) -> CorrectorField:
    """Solve the corrector equation on one sampled space-time box.

    ``path`` is a :class:`CoefficientPath` whose time grid is the periodic time
    axis. ``v`` is a vector or a stack of vectors (default: the unit basis).
    """
    box = path.box
    d = box.d
    if Lam is None or lam is None:
        b_ = path.spec.bounds if path.spec is not None else None
        if b_ is None:
            raise ValueError("give lam and Lam or a path with an environment spec")
        lam, Lam = (b_.lam if lam is None else lam), (b_.Lam if Lam is None else Lam)
    V = np.eye(d) if v is None else np.atleast_2d(np.asarray(v, complex))
    op = TOperator(box, path.n_t, xi, eta, Lam, path.continuous, path.dt if path.continuous else 1.0)
    b = _b_field(path.values[None], Lam, box)
    max_iter = default_max_iter(1 - lam / Lam, tol) if max_iter is None else max_iter
    psi, it, res, ratios = _neumann_batch(op, b, V, tol, max_iter)
    return CorrectorField(psi=psi[0], vectors=V, xi=op.xi, eta=eta, iterations=it, residual=res,
                          ratios=ratios[:, 0] if ratios.size else np.zeros(0))


def _b_field(a, Lam, box):
    a = np.asarray(a, float)
    if a.ndim == box.d + 4:  # (B, n_t, *sides, d, d)
        return np.eye(box.d) - a / Lam
    return 1.0 - a / Lam


# --- effective matrix -------------------------------------------------------------

@dataclass
class EffectiveMatrix:
    """Estimate of ``q(xi, eta)`` with per-entry standard errors."""

    q: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    xi: np.ndarray
    eta: complex
    N: int
    iterations: int = 0
    residual: float = 0.0
    max_ratio: float = 0.0
    samples: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def stderr(self) -> np.ndarray:
        return np.hypot(self.stderr_re, self.stderr_im)

    def hermitian_part(self) -> np.ndarray:
        return 0.5 * (self.q + self.q.conj().T)

    def quadratic_form_range(self):
        ev = np.linalg.eigvalsh(self.hermitian_part())
        return float(ev.min()), float(ev.max())

    def to_csv(self, path):
        d = self.q.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "re", "im", "stderr_re", "stderr_im"]
                       + [f"xi{k + 1}" for k in range(d)]
                       + ["eta_re", "eta_im", "N", "iterations", "residual"])
            for i in range(d):
                for j in range(d):
                    w.writerow([i + 1, j + 1, repr(float(self.q[i, j].real)), repr(float(self.q[i, j].imag)),
                                repr(float(self.stderr_re[i, j])), repr(float(self.stderr_im[i, j]))]
                               + [repr(float(x)) for x in self.xi]
                               + [repr(float(np.real(self.eta))), repr(float(np.imag(self.eta))),
                                  self.N, self.iterations, repr(float(self.residual))])


@dataclass(frozen=True)
class CorrectorBox:
    """Space-time box used for corrector solves."""

    L: int = 16
    n_t: Optional[int] = None
    time_factor: float = 16.0  # n_t >= time_factor / (Re eta * h)


def _n_t_for(eta, cbox: CorrectorBox, h: float) -> int:
    if cbox.n_t is not None:
        return int(cbox.n_t)
    need = cbox.time_factor / (np.real(eta) * h)
    return int(2 ** np.ceil(np.log2(max(need, 2))))


def _sample_q(spec: EnvironmentSpec, points, N: int, cbox: CorrectorBox, tol: float,
              chunk: int, workers, max_iter=None):
    """Per-sample ``q`` at each ``(xi, eta)`` point, sharing one environment path per sample.

    Returns ``(q, diag)`` with ``q`` of shape ``(N, n_points, d, d)``.
    """
    d = spec.d
    bnd = spec.bounds
    if not spec.continuous:
        spec.check()
    h = spec.langevin.grid if spec.continuous else 1.0
    box = spec.langevin.box() if spec.continuous else LatticeBox.cube(d, cbox.L)
    n_ts = [_n_t_for(eta, cbox, h) for _, eta in points]
    n_max = max(n_ts)
    ops = [TOperator(box, n, xi, eta, bnd.Lam, spec.continuous, h) for (xi, eta), n in zip(points, n_ts)]
    mean_a = spec.mean_coefficient()
    V = np.eye(d)
    max_iter = default_max_iter(bnd.contraction, tol) if max_iter is None else max_iter

    def run(bounds):
        n0, n1 = bounds
        streams = range(CORRECTOR_STREAM_BASE + n0, CORRECTOR_STREAM_BASE + n1)
        T = n_max * h if spec.continuous else n_max
        a, _ = sample_values(spec, None if spec.continuous else box, T, streams)
        q = np.empty((n1 - n0, len(points), d, d), complex)
        its, res, rmax = [], [], []
        psi_prev, n_prev = None, None
        for k, op in enumerate(ops):
            ak = a[:, :op.n_t]
            b = _b_field(ak, bnd.Lam, box)
            warm = psi_prev if n_prev == op.n_t else None
            psi, it, r, ratios = _neumann_batch(op, b, V, tol, max_iter, warm)
            psi_prev, n_prev = psi, op.n_t
            its.append(it)
            res.append(r)
            rmax.append(float(ratios.max()) if ratios.size else 0.0)
            # (a psi_v)_i averaged over the box -> column v of the correction
            if ak.ndim == box.d + 4:
                apsi = np.einsum("b...ij,bv...j->bv...i", ak, psi)
                abar = ak.mean(axis=tuple(range(1, 2 + box.d)))
            else:
                apsi = ak[:, None, ..., None] * psi
                abar = ak.mean(axis=tuple(range(1, 2 + box.d)))[:, None, None] * np.eye(d)
            corr = apsi.mean(axis=tuple(range(2, apsi.ndim - 1)))  # (B, v, i)
            base = abar if mean_a is None else np.broadcast_to(mean_a, abar.shape)
            q[:, k] = base + np.swapaxes(corr, 1, 2)
        return q, its, res, rmax

    out = ordered_map(run, chunks(N, chunk), workers)
    q = np.concatenate([o[0] for o in out])
    diag = {
        "iterations": int(max(max(o[1]) for o in out)),
        "residual": float(max(max(o[2]) for o in out)),
        "max_ratio": float(max(max(o[3]) for o in out)),
        "n_t": n_ts,
        "L": box.sides[0],
    }
    return q, diag


def _mean_se(samples):
    N = samples.shape[0]
    m = samples.mean(axis=0)
    if N < 2:
        z = np.zeros(m.shape)
        return m, z, z
    se_re = samples.real.std(axis=0, ddof=1) / np.sqrt(N)
    se_im = samples.imag.std(axis=0, ddof=1) / np.sqrt(N)
    return m, se_re, se_im


def effective_matrix(spec: EnvironmentSpec, xi, eta, N: int, tol: float = 1e-8,
                     cbox: CorrectorBox = CorrectorBox(), chunk: int = 16, workers=None,
                     keep_samples: bool = False) -> EffectiveMatrix:
    """``q(xi, eta) = <a> + <a d_xi Phi>`` averaged over ``N`` sampled boxes.

    When the site law gives ``<a>`` in closed form it is used directly and
    only the correction is estimated by sampling.
    """
    if N < 2:
        raise ValueError("need at least two samples")
    xi = _as_xi(xi, spec.d)
    q, diag = _sample_q(spec, [(xi, eta)], N, cbox, tol, chunk, workers)
    m, se_re, se_im = _mean_se(q[:, 0])
    return EffectiveMatrix(q=m, stderr_re=se_re, stderr_im=se_im, xi=xi, eta=eta, N=N,
                           iterations=diag["iterations"], residual=diag["residual"],
                           max_ratio=diag["max_ratio"], samples=q[:, 0] if keep_samples else None,
                           extra={"n_t": diag["n_t"][0], "L": diag["L"]})


def eta_ladder(Lam: float, K: int = 5, k0: int = 2) -> np.ndarray:
    return Lam * 2.0 ** -np.arange(k0, K + 1)


def extrapolate_q00(spec: EnvironmentSpec, etas=None, N: int = 200, tol: float = 1e-8,
                    cbox: CorrectorBox = CorrectorBox(), chunk: int = 16, workers=None) -> EffectiveMatrix:
    """Fit ``q(0, eta_k) = c0 + c1 sqrt(eta_k)`` and report ``c0`` as ``q(0, 0)``.

    Every sample is reused across the ladder, so the intercept is a fixed
    linear combination of per-sample values and its Monte Carlo error is
    exact. The reported ``stderr`` combines that with the regression
    standard error of the intercept.
    """
    etas = eta_ladder(spec.bounds.Lam) if etas is None else np.asarray(etas, float)
    if len(etas) < 2 or np.any(np.diff(etas) >= 0) or np.any(etas <= 0):
        raise ValueError("eta ladder must be positive and strictly decreasing")
    if N < 2:
        raise ValueError("need at least two samples")
    d = spec.d
    xi0 = np.zeros(d)
    q, diag = _sample_q(spec, [(xi0, e) for e in etas], N, cbox, tol, chunk, workers)
    X = np.stack([np.ones_like(etas), np.sqrt(etas)], axis=1)
    c = np.linalg.pinv(X)[0]                       # intercept weights
    icpt = np.einsum("k,nkij->nij", c, q)          # per-sample intercepts
    m, se_re, se_im = _mean_se(icpt)
    qm = q.mean(axis=0)
    fit_re = np.zeros((d, d))
    fit_im = np.zeros((d, d))
    if len(etas) > 2:
        for i in range(d):
            for j in range(d):
                for part, dst in ((qm[:, i, j].real, fit_re), (qm[:, i, j].imag, fit_im)):
                    _, cov, _, _ = linear_fit(np.sqrt(etas), part)
                    dst[i, j] = np.sqrt(max(cov[0, 0], 0.0))
    ladder_m = [_mean_se(q[:, k]) for k in range(len(etas))]
    return EffectiveMatrix(q=m, stderr_re=np.hypot(se_re, fit_re), stderr_im=np.hypot(se_im, fit_im),
                           xi=xi0, eta=0.0, N=N, iterations=diag["iterations"], residual=diag["residual"],
                           max_ratio=diag["max_ratio"],
                           extra={"etas": etas, "ladder": [lm[0] for lm in ladder_m],
                                  "ladder_stderr": [np.hypot(lm[1], lm[2]) for lm in ladder_m],
                                  "mc_stderr": np.hypot(se_re, se_im), "fit_stderr": np.hypot(fit_re, fit_im),
                                  "n_t": diag["n_t"], "L": diag["L"]})


def holder_probe(spec: EnvironmentSpec, xi0, eta0, xi_offsets=(), eta_offsets=(), N: int = 200,
                 tol: float = 1e-8, cbox: CorrectorBox = CorrectorBox(), chunk: int = 16, workers=None,
                 noise_sigmas: float = 3.0) -> DecayFit:
    """Measure ``|q(xi', eta') - q(xi, eta)|`` along offset ladders and fit a Hölder exponent.

    Offset ``k`` is summarized by ``r_k = max(|dxi|, |deta / Lambda|^(1/2))``
    (the model ``C [|dxi|^a + |deta/Lambda|^(a/2)]`` lies within a factor 2 of
    ``C r^a``). Differences use the same environment samples at both points.
    The exponent is fitted to the upper confidence limit
    ``|mean difference| + noise_sigmas * stderr``, which bounds the true
    difference with high probability; a second fit restricted to offsets whose
    difference clears the noise floor is reported in ``extra['signal_fit']``.
    """
    d = spec.d
    xi0 = _as_xi(xi0, d)
    Lam = spec.bounds.Lam
    offs = [(_as_xi(o, d), 0.0) for o in xi_offsets] + [(np.zeros(d), complex(o)) for o in eta_offsets]
    if not offs:
        raise ValueError("no offsets given")
    points = [(xi0, eta0)] + [(xi0 + dx, eta0 + de) for dx, de in offs]
    for _, e in points:
        if not (0 < np.real(e)):
            raise ValueError("offset point leaves Re eta > 0")
        if not spec.continuous and np.real(e) >= Lam:
            raise ValueError("offset point leaves Re eta < Lambda")
    r = np.array([max(np.linalg.norm(dx), np.sqrt(abs(de) / Lam)) for dx, de in offs])
    if np.any(r <= 0):
        raise ValueError("zero offset in the probe ladder")
    q, diag = _sample_q(spec, points, N, cbox, tol, chunk, workers)
    diffs = q[:, 1:] - q[:, :1]                     # (N, K, d, d)
    m, se_re, se_im = _mean_se(diffs)
    D = np.sqrt(np.sum(np.abs(m) ** 2, axis=(1, 2)))
    sigma = np.sqrt(np.sum(se_re ** 2 + se_im ** 2, axis=(1, 2)))
    U = D + noise_sigmas * sigma
    extra = {"r": r, "diff": D, "stderr": sigma, "upper": U, "n_t": diag["n_t"], "max_ratio": diag["max_ratio"]}
    if np.all(U <= 1e-14):
        return DecayFit(0.0, 0.0, np.nan, npoints=0, degenerate=True, verdict=INCONCLUSIVE,
                        extra={**extra, "reason": "differences vanish: at the noise floor"})
    fit = _loglog(r, U)
    sig = D >= noise_sigmas * sigma
    sfit = _loglog(r[sig], D[sig]) if sig.sum() >= 4 else None
    verdict = _verdict(fit.band_lo, np.inf)
    if sfit is not None and sfit.band_hi < 0:
        verdict = "fail"
    fit.verdict = verdict
    fit.n_excluded = int((~sig).sum())
    fit.extra.update(extra, signal_fit=sfit)
    return fit


def _loglog(r, v, level: float = 0.95) -> DecayFit:
    ok = v > 0
    x, y = np.log(r[ok]), np.log(v[ok])
    if ok.sum() < 3:
        return DecayFit(np.nan, 0.0, np.nan, npoints=int(ok.sum()), degenerate=True)
    coef, cov, rss, dof = linear_fit(x, y)
    half = t_quantile(dof, level) * np.sqrt(max(cov[1, 1], 0.0))
    a = float(coef[1])
    return DecayFit(C=float(np.exp(coef[0])), gamma=0.0, alpha=a, band=(a - half, a + half),
                    npoints=int(ok.sum()), residual=float(np.sqrt(rss / ok.sum())),
                    verdict=_verdict(a - half, a + half), window=(float(r[ok].min()), float(r[ok].max())))
