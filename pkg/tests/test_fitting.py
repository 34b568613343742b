import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahom.fitting import (FAIL, INCONCLUSIVE, PASS, BoundTemplate, DecayFit, decayfit_to_csv,
                             envelope_fit, linear_fit, power_law_fit, spatial_exponent)


def _synthetic(C, gamma, alpha, base=1.0, lam=0.125):
    t = np.repeat(np.arange(8, 200, 8.0), 5)
    x = np.tile(np.arange(5.0) * 3, len(t) // 5)
    m = spatial_exponent(x, t, lam)
    v = C * (lam * t + 1) ** (-(base + alpha) / 2) * np.exp(-gamma * m)
    return v, t, x


def test_envelope_roundtrip():
    v, t, x = _synthetic(2.5, 0.37, 0.8)
    fit = envelope_fit(v, t, x, form=BoundTemplate(Lambda=0.125, base=1.0))
    assert fit.C == pytest.approx(2.5, abs=1e-6)
    assert fit.gamma == pytest.approx(0.37, abs=1e-6)
    assert fit.alpha == pytest.approx(0.8, abs=1e-6)
    assert fit.verdict == PASS


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.05, 1.5), st.floats(-0.5, 2.0))
def test_envelope_roundtrip_property(C, gamma, alpha):
    v, t, x = _synthetic(C, gamma, alpha)
    fit = envelope_fit(v, t, x, form=BoundTemplate(Lambda=0.125, base=1.0))
    assert fit.alpha == pytest.approx(alpha, abs=1e-6)
    assert fit.gamma == pytest.approx(gamma, abs=1e-6)
    assert fit.C == pytest.approx(C, rel=1e-6)


def test_all_zero_degenerate():
    fit = envelope_fit(np.zeros(10), np.arange(10.0))
    assert fit.degenerate and fit.verdict == INCONCLUSIVE


def test_noise_only_inconclusive(rng):
    t = np.arange(1, 200, 2.0)
    v = np.abs(1 + 0.3 * rng.standard_normal(t.size))
    fit = envelope_fit(v, t, form=BoundTemplate(Lambda=1.0, base=0.0, fit_gamma=False))
    assert fit.band_lo <= 0 <= fit.band_hi
    assert fit.verdict == INCONCLUSIVE


def test_noise_floor_excludes_points():
    v = np.array([1.0, 0.5, 0.25, 0.01, 0.01, 0.01])
    se = np.full_like(v, 0.02)
    fit = envelope_fit(v, np.arange(1.0, 7.0), stderr=se)
    assert fit.n_excluded == 3 and fit.verdict == INCONCLUSIVE


def test_linear_fit_exact():
    x = np.linspace(0, 1, 10)
    coef, cov, rss, dof = linear_fit(x, 3 - 2 * x)
    assert coef == pytest.approx([3, -2]) and rss < 1e-25 and dof == 8


def test_power_law_fit():
    t = np.arange(1, 100.0)
    fit = power_law_fit(t, 4 * (0.5 * t + 1) ** -0.75, Lambda=0.5)
    assert fit.alpha == pytest.approx(0.75, abs=1e-12) and fit.C == pytest.approx(4)
    assert power_law_fit(t[:2], [1, 1]).degenerate


def test_decayfit_csv(tmp_path):
    p = tmp_path / "f.csv"
    decayfit_to_csv(DecayFit(1.0, 0.5, 0.2, band=(0.1, 0.3), npoints=7, verdict=FAIL), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "C,gamma,alpha,band_lo,band_hi,npoints,verdict"
    assert lines[1].endswith(",7,fail")
