"""Empirical checks of the homogenization rate and of averaged Green's-function bounds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .corrector import EffectiveMatrix, extrapolate_q00
from .environments import EnvironmentSpec
from .fitting import (FAIL, INCONCLUSIVE, PASS, BoundTemplate, DecayFit, _verdict, envelope_fit,
                      linear_fit, spatial_exponent, t_quantile)
from .homogenized import CONTINUUM, LATTICE, HomogenizedModel, lattice_hom_table, u_hom
from .lattice import LatticeBox
from .solver import GreenEstimate, InitialData, Profile, differences, green_mc_estimate

__all__ = ["RateReport", "rate_experiment", "green_bound_check", "envelope_fit", "normalized_ratio",
           "doubling_stability", "holder_x_ratio", "total_exponent_band", "ladder_nondecreasing"]


# --- homogenization rate ----------------------------------------------------------

@dataclass
class RateReport:
    eps: np.ndarray
    E: np.ndarray
    stderr: np.ndarray
    status: list
    fit: DecayFit
    monotone: bool
    a_hom: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.eps) >= 0):
            raise ValueError("eps list must be strictly decreasing")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "E", "stderr", "status"])
            for e, E, s, st in zip(self.eps, self.E, self.stderr, self.status):
                w.writerow([repr(float(e)), repr(float(E)), repr(float(s)), st])


def rate_box_side(profile: Profile, eps: float, Lambda: float, T: float) -> int:
    reach = profile.support_radius / eps + 8.5 * np.sqrt(2 * Lambda * T + 1) + 12
    return int(2 ** np.ceil(np.log2(2 * reach)))


def rate_experiment(spec: EnvironmentSpec, profile: Profile, eps_list, t_grid, N: int,
                    a_hom=None, q_samples: int = 200, chunk: int = 64, workers=None,
                    noise_sigmas: float = 3.0) -> RateReport:
    """``E(eps) = sup |<u_eps(x/eps, t/eps^2)> - u_hom(x, t)|`` over lattice sites and ``t_grid``.

    ``a_hom`` may be a matrix, a :class:`HomogenizedModel` or an
    :class:`EffectiveMatrix`; by default it is extrapolated from the corrector.
    An ``eps`` whose error does not clear ``noise_sigmas`` standard errors is
    marked ``inconclusive``.
    """
    eps_list = np.asarray(eps_list, float)
    if eps_list.size == 0:
        raise ValueError("empty eps list")
    if np.any(np.diff(eps_list) >= 0):
        raise ValueError("eps list must be strictly decreasing")
    t_grid = np.asarray(t_grid, float)
    if a_hom is None:
        a_hom = extrapolate_q00(spec, N=q_samples, workers=workers)
    if isinstance(a_hom, EffectiveMatrix):
        model = HomogenizedModel.from_effective(a_hom, CONTINUUM)
    elif isinstance(a_hom, HomogenizedModel):
        model = a_hom.with_flavor(CONTINUUM)
    else:
        model = HomogenizedModel(np.atleast_2d(a_hom), CONTINUUM)
    Lam = spec.bounds.Lam
    E, S, status = [], [], []
    for eps in eps_list:
        steps = t_grid / eps ** 2
        if spec.continuous:
            box = spec.langevin.box()
            times = steps
        else:
            if np.any(np.abs(steps - np.round(steps)) > 1e-9):
                raise ValueError(f"t / eps^2 must be integers for discrete time (eps={eps})")
            times = np.round(steps).astype(int)
            box = LatticeBox.cube(spec.d, rate_box_side(profile, eps, Lam, float(times.max())))
        h = InitialData(profile=profile, eps=float(eps))
        est = green_mc_estimate(spec, box, times, N, chunk=chunk, workers=workers, h=h)
        x = eps * box.coords()
        worst, se_at = 0.0, 0.0
        for k, t in enumerate(t_grid):
            ref, _ = u_hom(model, profile, x, float(t))
            diff = np.abs(est.mean[k] - ref)
            i = np.unravel_index(np.argmax(diff), diff.shape)
            if diff[i] > worst:
                worst, se_at = float(diff[i]), float(est.stderr[k][i])
        E.append(worst)
        S.append(se_at)
        status.append("ok" if worst >= noise_sigmas * se_at else INCONCLUSIVE)
    E, S = np.array(E), np.array(S)
    fit = _rate_fit(eps_list, E)
    tol = noise_sigmas * np.sqrt(S[1:] ** 2 + S[:-1] ** 2)
    monotone = bool(np.all(E[1:] <= E[:-1] + tol + 1e-15))
    return RateReport(eps=eps_list, E=E, stderr=S, status=status, fit=fit, monotone=monotone,
                      a_hom=model.a_hom, config={"t_grid": t_grid.tolist(), "N": N, "kind": spec.kind,
                                                 "seed": spec.seed})


def _rate_fit(eps, E, level: float = 0.95) -> DecayFit:
    ok = E > 0
    if ok.sum() < 3:
        return DecayFit(np.nan, 0.0, np.nan, npoints=int(ok.sum()), degenerate=True,
                        extra={"reason": "fewer than three positive errors"})
    coef, cov, rss, dof = linear_fit(np.log(eps[ok]), np.log(E[ok]))
    a = float(coef[1])
    half = t_quantile(dof, level) * np.sqrt(max(cov[1, 1], 0.0))
    return DecayFit(C=float(np.exp(coef[0])), gamma=0.0, alpha=a, band=(a - half, a + half),
                    npoints=int(ok.sum()), residual=float(np.sqrt(rss / ok.sum())),
                    verdict=_verdict(a - half, a + half), window=(float(eps.min()), float(eps.max())))


# --- Green's-function bounds -------------------------------------------------------

def _order_fields(estimate: GreenEstimate, model: HomogenizedModel, order: int):
    box = estimate.box
    ref = lattice_hom_table(model.with_flavor(LATTICE), estimate.times, box)
    if order == 0:
        return estimate.mean, estimate.stderr, ref
    if order not in estimate.diff:
        raise ValueError(f"estimate carries no order-{order} differences; request diff_orders")
    m, s = estimate.diff[order]
    return m, s, differences(ref, box, order)


def green_bound_check(estimate: GreenEstimate, reference: HomogenizedModel, order: int = 0,
                      noise_sigmas: float = 3.0, bulk: float = 4.0, t_min: Optional[float] = None,
                      gamma_grid=None) -> DecayFit:
    """Fit ``D = |diff^k G_a - diff^k G_hom|`` to ``C (Lt+1)^(-(d+k+alpha)/2) exp(-gamma m(x,t))``.

    ``D`` is only known up to Monte Carlo error, so the primary fit uses the
    upper confidence limit ``U = D + noise_sigmas * stderr`` on the bulk
    window ``|x| <= bulk sqrt(Lt + 1)``, ``t >= t_min`` (default ``1/L``).
    Its verdict is ``pass`` when the band on ``alpha`` lies above 0. A second
    fit using only points where ``D`` clears the noise floor is kept in
    ``extra['signal_fit']``; the verdict becomes ``fail`` if that fit puts
    ``alpha`` below 0 with confidence and the largest ``D / stderr`` in the
    window exceeds the Bonferroni level for the number of points examined.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    box = estimate.box
    d = box.d
    Lam = estimate.spec.bounds.Lam
    m, s, ref = _order_fields(estimate, reference, order)
    D = np.abs(m - ref)
    sig = s
    if order:
        ax = tuple(range(d + 1, D.ndim))
        D = np.sqrt(np.sum(D ** 2, axis=ax))
        sig = np.sqrt(np.sum(s ** 2, axis=ax))
    t = np.asarray(estimate.times, float).reshape((-1,) + (1,) * d)
    xn = box.radius()[None]
    t_lo = 1.0 / Lam if t_min is None else t_min
    win = (t >= t_lo) & (t > 0) & (xn <= bulk * np.sqrt(Lam * t + 1))
    win = np.broadcast_to(win, D.shape)
    tt = np.broadcast_to(t, D.shape)[win]
    xx = np.broadcast_to(xn, D.shape)[win]
    Dw, Sw = D[win], sig[win]
    extra = {"max_D": float(D.max()), "max_stderr": float(sig.max()), "order": order,
             "window_points": int(win.sum())}
    if np.all(Dw + noise_sigmas * Sw <= 1e-13):
        return DecayFit(0.0, 0.0, np.nan, npoints=0, degenerate=True, verdict=INCONCLUSIVE,
                        extra={**extra, "reason": "difference vanishes identically"})
    form = BoundTemplate(Lambda=Lam, base=d + order,
                         **({} if gamma_grid is None else {"gamma_grid": tuple(gamma_grid)}))
    U = Dw + noise_sigmas * Sw
    fit = envelope_fit(U, tt, xx, form=form)
    sfit = envelope_fit(Dw, tt, xx, stderr=Sw, form=form, noise_sigmas=noise_sigmas)
    verdict = PASS if fit.band_lo > 0 else INCONCLUSIVE
    # a contradiction needs a signal that survives the multiple comparisons
    z = np.where(Sw > 0, Dw / np.where(Sw > 0, Sw, 1), np.where(Dw > 0, np.inf, 0))
    z_family = max(noise_sigmas, float(stats.norm.isf(0.025 / max(Dw.size, 1))))
    significant = bool(z.max() >= z_family)
    if significant and sfit.npoints >= 4 and sfit.band_hi < 0:
        verdict = FAIL
    fit.verdict = verdict
    fit.n_excluded = sfit.n_excluded
    # time after which the noise floor dominates every point of the window
    noisy = np.array([np.all(Dw[tt == tv] < noise_sigmas * Sw[tt == tv]) for tv in np.unique(tt)])
    t_noise = float(np.unique(tt)[np.argmax(noisy)]) if noisy.any() else np.nan
    fit.extra.update(extra, signal_fit=sfit, noise_time=t_noise, max_z=float(z.max()), z_family=z_family,
                     significant=significant,
                     ratio=float(np.max(U / _envelope(tt, xx, Lam, d + order, fit.alpha, fit.gamma))),
                     points={"t": tt, "x": xx, "U": U, "D": Dw, "stderr": Sw}, Lambda=Lam, base=d + order)
    return fit


def _envelope(t, x, Lam, base, alpha, gamma):
    return (Lam * t + 1) ** (-(base + alpha) / 2) * np.exp(-gamma * spatial_exponent(x, t, Lam))


def normalized_ratio(fit: DecayFit, alpha: Optional[float] = None, gamma: Optional[float] = None) -> float:
    """``max U / envelope`` with the envelope exponents of ``fit`` or the ones given."""
    p = fit.extra["points"]
    a = fit.alpha if alpha is None else alpha
    g = fit.gamma if gamma is None else gamma
    return float(np.max(p["U"] / _envelope(p["t"], p["x"], fit.extra["Lambda"], fit.extra["base"], a, g)))


def doubling_stability(fit_T: DecayFit, fit_2T: DecayFit, tol: float = 0.2):
    """Ratio of normalized maxima at horizons ``T`` and ``2T`` using the ``T`` exponents."""
    r1 = normalized_ratio(fit_T)
    r2 = normalized_ratio(fit_2T, fit_T.alpha, fit_T.gamma)
    rel = r2 / r1
    return rel, bool(abs(rel - 1) <= tol)


def holder_x_ratio(estimate: GreenEstimate, reference: HomogenizedModel, delta: float = 0.5,
                   t_index: int = -1, bulk: float = 4.0) -> float:
    """Largest ``|D1(x') - D1(x)| / (|x'-x|^(1-delta) (Lt+1)^(-(d+1)/2) (|x|+1)^(-1))``.

    ``D1`` is the signed order-1 difference of averaged and homogenized kernels;
    pairs satisfy ``1/2 <= (|x'|+1)/(|x|+1) <= 2`` within the bulk window.
    """
    box = estimate.box
    d = box.d
    Lam = estimate.spec.bounds.Lam
    m, _, ref = _order_fields(estimate, reference, 1)
    D1 = (m - ref)[t_index]
    t = float(estimate.times[t_index])
    X = box.coords().reshape(-1, d)
    V = D1.reshape(-1, d)
    r = np.linalg.norm(X, axis=1)
    sel = r <= bulk * np.sqrt(Lam * t + 1)
    X, V, r = X[sel], V[sel], r[sel]
    dist = np.linalg.norm(X[:, None] - X[None], axis=-1)
    q = (r[None] + 1) / (r[:, None] + 1)
    ok = (dist > 0) & (q >= 0.5) & (q <= 2)
    num = np.linalg.norm(V[:, None] - V[None], axis=-1)
    den = dist ** (1 - delta) * (Lam * t + 1) ** (-(d + 1) / 2) / (r[:, None] + 1)
    return float(np.max(np.where(ok, num / np.where(ok, den, 1), 0.0)))


def total_exponent_band(fit: DecayFit):
    """Band on the full temporal exponent ``(base + alpha) / 2``."""
    b = fit.extra["base"]
    return (b + fit.band_lo) / 2, (b + fit.alpha) / 2, (b + fit.band_hi) / 2


def ladder_nondecreasing(fits) -> bool:
    """Full exponents of orders ``0, 1, 2`` do not decrease beyond their confidence bands."""
    bands = [total_exponent_band(f) for f in fits]
    return all(hi_next >= lo for (lo, _, _), (_, _, hi_next) in zip(bands[:-1], bands[1:]))
