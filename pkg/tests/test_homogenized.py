import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from parahom.errors import EllipticityError
from parahom.fitting import PASS
from parahom.heat_kernel import default_side, discrete_kernel
from parahom.homogenized import (CONTINUUM, HomogenizedModel, continuum_green, gaussian_u_hom,
                                 identity_check_P2, lattice_hom_green, lattice_hom_table, lattice_vs_continuum,
                                 u_hom)
from parahom.lattice import LatticeBox
from parahom.solver import Profile


def test_lattice_green_delta_and_mass():
    m = HomogenizedModel.scalar(0.125)
    assert lattice_hom_green(m, [0], 0) == pytest.approx(1, abs=1e-15)
    assert lattice_hom_green(m, [3], 0) == pytest.approx(0, abs=1e-15)
    tab = lattice_hom_table(m, [0, 5, 50])
    assert np.allclose(tab.sum(axis=1), 1, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_lattice_green_matches_time_stepping(d):
    kappa, T = 0.1, 60
    box = LatticeBox.cube(d, default_side(kappa, T))
    ref = discrete_kernel(d, kappa, box, T, periodic=True).full
    got = lattice_hom_table(HomogenizedModel.scalar(kappa, d), np.arange(T + 1), box)
    assert np.max(np.abs(ref - got)) < 1e-12


def test_model_validation():
    with pytest.raises(EllipticityError):
        HomogenizedModel(np.array([[1.0, 0.2], [0.0, 1.0]]))
    with pytest.raises(EllipticityError):
        HomogenizedModel(np.array([[-1.0]]))


def test_continuum_normalization():
    m = HomogenizedModel.scalar(1.0, flavor=CONTINUUM)
    for t in (0.1, 1.0, 7.0):
        assert continuum_green(m, [0.0], t) == pytest.approx((4 * np.pi * t) ** -0.5, rel=1e-14)
        val, _ = integrate.quad(lambda x: float(continuum_green(m, [x], t)), -np.inf, np.inf, epsabs=1e-12)
        assert abs(val - 1) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.05, 5), st.floats(0.02, 1))
def test_scaling(x, t, eps):
    m = HomogenizedModel.scalar(0.3, flavor=CONTINUUM)
    lhs = continuum_green(m, [x / eps], t / eps ** 2) / eps
    rhs = continuum_green(m, [x], t)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1e-300) + 1e-300


def test_u_hom_gaussian_closed_form():
    m = HomogenizedModel.scalar(0.125, flavor=CONTINUUM)
    f = Profile("gaussian", 0.8, 1.3)
    x = np.linspace(-4, 4, 41)
    for t in (0.0, 0.3, 2.0):
        got, err = u_hom(m, f, x, t)
        assert np.max(np.abs(got - gaussian_u_hom(m, 0.8, 1.3, x[:, None], t))) < 1e-8
    got, _ = u_hom(m, f, x, 0.0)
    assert np.max(np.abs(got - f(x[:, None]))) < 1e-8


def test_u_hom_bump_maximum_principle():
    m = HomogenizedModel.scalar(0.125, flavor=CONTINUUM)
    f = Profile("bump", 1.0)
    x = np.linspace(-3, 3, 61)
    sups = [np.max(np.abs(u_hom(m, f, x, t)[0])) for t in (0.0, 0.1, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(sups) <= 1e-10)
    assert sups[0] == pytest.approx(np.exp(-1), abs=1e-8)


def test_identity_p2_example():
    res, hist = identity_check_P2(0.125, 0.3, 1.0, 0.5, 0.1)
    assert res < 1e-6


def test_identity_p2_xi_zero():
    res, _ = identity_check_P2(0.125, 0.0, 1.0, 0.5, 0.1)
    assert res < 1e-10


def test_identity_p2_monotone_in_panels():
    res, hist = identity_check_P2(0.125, 1.1, 2.0, 0.25, 0.1, tol=1e-14)
    r = [h[1] for h in hist]
    # monotone until roundoff level
    above = [v for v in r if v > 1e-13]
    assert all(b <= a for a, b in zip(above[:-1], above[1:]))


def test_lattice_vs_continuum():
    lad = lattice_vs_continuum(HomogenizedModel.scalar(0.125), horizon=256, t_min=16)
    assert lad.verdict == PASS
    assert lad.exponents[0] >= 1.0 - 0.1
    assert lad.monotone
    assert lad.differences[0, -1] < lad.differences[0, 0]
