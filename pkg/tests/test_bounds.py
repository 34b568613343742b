import numpy as np
import pytest

from parahom.bounds import (doubling_stability, green_bound_check, holder_x_ratio, ladder_nondecreasing,
                            rate_experiment)
from parahom.environments import EnvironmentSpec
from parahom.fitting import INCONCLUSIVE, PASS
from parahom.homogenized import HomogenizedModel
from parahom.lattice import LatticeBox
from parahom.solver import Profile, green_mc_estimate


def test_green_bound_constant_vanishes():
    spec = EnvironmentSpec.constant(kappa=0.125)
    est = green_mc_estimate(spec, LatticeBox.cube(1, 64), np.arange(65), N=2, diff_orders=[1])
    m = HomogenizedModel.scalar(0.125)
    for order in (0, 1):
        fit = green_bound_check(est, m, order)
        assert fit.extra["max_D"] < 1e-12
        assert fit.degenerate and fit.verdict == INCONCLUSIVE


def test_green_bound_bernoulli_order0():
    spec = EnvironmentSpec.bernoulli(seed=17)
    est = green_mc_estimate(spec, LatticeBox.cube(1, 128), np.arange(257), N=1000)
    fit = green_bound_check(est, HomogenizedModel.scalar(spec.kappa), 0)
    assert fit.verdict == PASS and fit.band_lo > 0


def test_holder_x_ratio_finite():
    spec = EnvironmentSpec.bernoulli(seed=3)
    est = green_mc_estimate(spec, LatticeBox.cube(1, 64), np.arange(65), N=200, diff_orders=[1])
    r = holder_x_ratio(est, HomogenizedModel.scalar(spec.kappa))
    assert np.isfinite(r) and r > 0


def test_doubling_stability_identical():
    spec = EnvironmentSpec.bernoulli(seed=1)
    est = green_mc_estimate(spec, LatticeBox.cube(1, 64), np.arange(65), N=300)
    fit = green_bound_check(est, HomogenizedModel.scalar(spec.kappa), 0)
    rel, ok = doubling_stability(fit, fit)
    assert rel == pytest.approx(1) and ok


def test_ladder_helper():
    from parahom.fitting import DecayFit
    mk = lambda base, a, lo, hi: DecayFit(1, 0, a, band=(lo, hi), extra={"base": base})
    assert ladder_nondecreasing([mk(1, 0.5, 0.4, 0.6), mk(2, 0.2, 0.1, 0.3), mk(3, 0.1, 0.0, 0.2)])
    assert not ladder_nondecreasing([mk(1, 3.0, 2.9, 3.1), mk(2, 0.0, -0.1, 0.1)])


def test_rate_constant_deterministic_and_decreasing():
    spec = EnvironmentSpec.constant(kappa=1 / 12)
    prof = Profile("gaussian", 1.0)
    kw = dict(eps_list=[0.5, 0.25, 0.125], t_grid=[0.25, 0.5, 1.0], N=2, a_hom=np.array([[1 / 12]]))
    r1 = rate_experiment(spec, prof, **kw)
    r2 = rate_experiment(spec, prof, **kw)
    assert r1.E.tobytes() == r2.E.tobytes()
    assert np.all(r1.stderr == 0)
    assert np.all(np.diff(r1.E) < 0)
    assert r1.fit.verdict == PASS


def test_rate_gamma_zero_matches_constant():
    prof = Profile("gaussian", 1.0)
    kw = dict(eps_list=[0.5, 0.25], t_grid=[0.25, 0.5], N=3, a_hom=np.array([[1 / 12]]))
    a = rate_experiment(EnvironmentSpec.bernoulli(gamma=0.0, kappa=1 / 12), prof, **kw)
    b = rate_experiment(EnvironmentSpec.constant(kappa=1 / 12), prof, **kw)
    assert a.E.tobytes() == b.E.tobytes()


def test_rate_rejects_bad_eps():
    with pytest.raises(ValueError):
        rate_experiment(EnvironmentSpec.constant(), Profile(), [], [0.5], 2, a_hom=np.eye(1) * 0.1)
    with pytest.raises(ValueError):
        rate_experiment(EnvironmentSpec.constant(), Profile(), [0.25, 0.5], [0.5], 2, a_hom=np.eye(1) * 0.1)
