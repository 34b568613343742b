"""Log-space regression engine shared by the decay and bound checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats

PASS, INCONCLUSIVE, FAIL = "pass", "inconclusive", "fail"


@dataclass
class DecayFit:
    """Fitted envelope ``C (Lambda t + 1)^(-(base + alpha)/2) exp(-gamma m)``.

    ``band`` is a 95% confidence interval on ``alpha``.
    """

    C: float
    gamma: float
    alpha: float
    band: tuple = (np.nan, np.nan)
    npoints: int = 0
    residual: float = np.nan
    verdict: str = INCONCLUSIVE
    window: tuple = (np.nan, np.nan)
    n_excluded: int = 0
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def band_lo(self) -> float:
        return self.band[0]

    @property
    def band_hi(self) -> float:
        return self.band[1]

    def summary(self) -> str:
        return (f"C={self.C:.4g} gamma={self.gamma:.4g} alpha={self.alpha:.4g} "
                f"band=[{self.band[0]:.4g}, {self.band[1]:.4g}] n={self.npoints} "
                f"excluded={self.n_excluded} verdict={self.verdict}")


def linear_fit(x, y, w=None, level: float = 0.95):
    """Weighted least squares ``y = c0 + c1 x``.

    Returns ``(coef, cov, rss, dof)``. With weights the covariance is scaled by
    the reduced chi-square, i.e. the usual regression covariance.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.ones_like(x) if w is None else np.asarray(w, float)
    X = np.stack([np.ones_like(x), x], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    r = (y - X @ coef) * sw
    rss = float(r @ r)
    dof = len(x) - 2
    xtwx = X.T @ (X * w[:, None])
    cov = np.linalg.pinv(xtwx) * (rss / dof if dof > 0 else np.nan)
    return coef, cov, rss, dof


def t_quantile(dof: int, level: float = 0.95) -> float:
    if dof <= 0:
        return np.inf
    return float(stats.t.ppf(0.5 + level / 2, dof))


def power_law_fit(t, values, Lambda: float = 1.0, level: float = 0.95) -> DecayFit:
    """Fit ``values ~ C (Lambda t + 1)^(-alpha)``; ``alpha`` is the decay exponent."""
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    ok = v > 0
    if ok.sum() < 3:
        return DecayFit(np.nan, 0.0, np.nan, npoints=int(ok.sum()), degenerate=True)
    X = np.log(Lambda * t[ok] + 1)
    coef, cov, rss, dof = linear_fit(X, np.log(v[ok]))
    slope = coef[1]
    half = t_quantile(dof, level) * np.sqrt(max(cov[1, 1], 0.0))
    alpha = -slope
    return DecayFit(C=float(np.exp(coef[0])), gamma=0.0, alpha=float(alpha),
                    band=(float(alpha - half), float(alpha + half)), npoints=int(ok.sum()),
                    residual=float(np.sqrt(rss / max(len(X), 1))),
                    verdict=_verdict(alpha - half, alpha + half),
                    window=(float(t[ok].min()), float(t[ok].max())),
                    extra={"slope": float(slope)})


def _verdict(lo, hi):
    if lo > 0:
        return PASS
    if hi < 0:
        return FAIL
    return INCONCLUSIVE


@dataclass(frozen=True)
class BoundTemplate:
    """Shape of a heat-kernel-type bound.

    ``base`` is the baseline exponent numerator, so values decay like
    ``(Lambda t + 1)^(-(base + alpha)/2)``; for a Green's-function difference of
    order ``k`` in dimension ``d`` use ``base = d + k``.
    """

    Lambda: float
    base: float = 0.0
    gamma_grid: tuple = tuple(np.linspace(0.0, 2.0, 41))
    fit_gamma: bool = True


def spatial_exponent(x_norm, t, Lambda):
    """``min{|x|, |x|^2 / (Lambda t + 1)}``."""
    x_norm = np.asarray(x_norm, float)
    return np.minimum(x_norm, x_norm ** 2 / (Lambda * np.asarray(t, float) + 1))


def envelope_fit(values, t, x_norm=None, stderr=None, form: Optional[BoundTemplate] = None,
                 noise_sigmas: float = 3.0, min_points: int = 4, level: float = 0.95) -> DecayFit:
    """Fit ``(log C, alpha)`` by weighted least squares in log space.

    ``gamma`` is chosen on ``form.gamma_grid`` by residual and then refined
    with a bounded scalar search. Points whose value is below
    ``noise_sigmas * stderr`` are dropped and counted in ``n_excluded``;
    fewer than ``min_points`` survivors make the fit inconclusive.
    """
    form = form or BoundTemplate(Lambda=1.0)
    v = np.asarray(values, float).ravel()
    t = np.broadcast_to(np.asarray(t, float), np.shape(values)).ravel()
    m = (np.zeros_like(v) if x_norm is None else
         spatial_exponent(np.broadcast_to(x_norm, np.shape(values)).ravel(), t, form.Lambda))
    se = None if stderr is None else np.broadcast_to(np.asarray(stderr, float), np.shape(values)).ravel()

    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite values passed to envelope_fit")
    if np.all(v == 0):
        return DecayFit(0.0, np.nan, np.nan, npoints=0, degenerate=True,
                        verdict=INCONCLUSIVE, extra={"reason": "all-zero data"})

    keep = v > 0
    if se is not None:
        keep &= v >= noise_sigmas * se
    n_excl = int(v.size - keep.sum())
    if keep.sum() < min_points:
        return DecayFit(np.nan, np.nan, np.nan, npoints=int(keep.sum()), n_excluded=n_excl,
                        verdict=INCONCLUSIVE, extra={"reason": "too few points above noise floor"})
    v, t, m = v[keep], t[keep], m[keep]
    w = None
    if se is not None:
        rel = np.where(se[keep] > 0, se[keep] / v, 0.0)
        floor = max(rel.max() * 1e-3, 1e-12)
        w = 1.0 / np.maximum(rel, floor) ** 2
    X = np.log(form.Lambda * t + 1)
    if np.ptp(X) == 0:
        raise ValueError("underdetermined: all points share one time")
    y0 = np.log(v) + 0.5 * form.base * X

    def solve(gamma):
        return linear_fit(X, y0 + gamma * m, w)

    gamma = 0.0
    if form.fit_gamma and np.ptp(m) > 0:
        rss = [solve(g)[2] for g in form.gamma_grid]
        k = int(np.argmin(rss))
        grid = np.asarray(form.gamma_grid)
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, len(grid) - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(lambda g: solve(g)[2], bounds=(lo, hi),
                                           method="bounded", options={"xatol": 1e-12})
            gamma = float(res.x) if res.fun <= rss[k] else float(grid[k])
        else:
            gamma = float(grid[k])
    coef, cov, rss, dof = solve(gamma)
    alpha = -2.0 * coef[1]
    half = 2.0 * t_quantile(dof, level) * np.sqrt(max(cov[1, 1], 0.0)) if dof > 0 else np.inf
    band = (float(alpha - half), float(alpha + half))
    return DecayFit(C=float(np.exp(coef[0])), gamma=gamma, alpha=float(alpha), band=band,
                    npoints=int(v.size), residual=float(np.sqrt(rss / v.size)),
                    verdict=_verdict(*band), window=(float(t.min()), float(t.max())),
                    n_excluded=n_excl)


DECAYFIT_HEADER = ["C", "gamma", "alpha", "band_lo", "band_hi", "npoints", "verdict"]


def decayfit_rows(fits):
    return [[repr(float(f.C)), repr(float(f.gamma)), repr(float(f.alpha)), repr(float(f.band_lo)),
             repr(float(f.band_hi)), int(f.npoints), f.verdict] for f in fits]


def decayfit_to_csv(fits, path, labels=None):
    """Write one or more fits; ``labels`` adds a leading ``label`` column."""
    import csv

    fits = [fits] if isinstance(fits, DecayFit) else list(fits)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if labels is None:
            w.writerow(DECAYFIT_HEADER)
            w.writerows(decayfit_rows(fits))
        else:
            w.writerow(["label"] + DECAYFIT_HEADER)
            for lab, row in zip(labels, decayfit_rows(fits)):
                w.writerow([lab] + row)
