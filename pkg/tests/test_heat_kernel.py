import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from parahom.errors import BoxTooSmallError, StabilityError
from parahom.heat_kernel import (continuous_kernel, default_side, discrete_kernel, envelope_check)
from parahom.lattice import LatticeBox, laplacian


def test_one_step_values():
    box = LatticeBox.cube(1, 32)
    tab = discrete_kernel(1, 0.25, box, 1)
    assert tab.at([0], 1) == pytest.approx(0.5, abs=1e-15)
    assert tab.at([1], 1) == pytest.approx(0.25, abs=1e-15)
    assert tab.at([-1], 1) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("d", [1, 2])
def test_conservation_and_delta(d):
    box = LatticeBox.cube(d, default_side(0.125, 64))
    tab = discrete_kernel(d, 0.125, box, 64)
    assert np.max(np.abs(tab.mass - 1)) < 1e-12
    assert np.all(tab.min_value >= 0)
    G0 = tab.values[0]
    assert G0[(tab.radius,) * d] == 1 and G0.sum() == 1


def test_stability_and_box_guard():
    with pytest.raises(StabilityError):
        discrete_kernel(1, 0.3, LatticeBox.cube(1, 64), 4)
    with pytest.raises(BoxTooSmallError):
        discrete_kernel(1, 0.25, LatticeBox.cube(1, 16), 64)


def test_continuous_delta_and_mass():
    box = LatticeBox.cube(2, 64)
    tab = continuous_kernel(2, 0.125, box, [0.0, 0.5, 3.0, 40.0])
    R = tab.radius
    assert tab.values[0][R, R] == 1 and tab.values[0].sum() == 1
    assert np.max(np.abs(tab.mass - 1)) < 1e-12
    assert np.all(tab.min_value >= 0)


def test_continuous_matches_fine_ode():
    # independent oracle: integrate dG/dt = -Lambda grad* grad G with a tight adaptive solver
    box = LatticeBox.cube(1, 64)
    lam = 0.125
    times = [0.5, 2.0, 10.0]
    tab = continuous_kernel(1, lam, box, times)
    sol = solve_ivp(lambda t, g: -lam * laplacian(g, box), (0, 10), box.delta(), t_eval=times,
                    method="DOP853", rtol=1e-12, atol=1e-14)
    for k in range(len(times)):
        assert abs(tab.origin()[k] - sol.y[0, k]) < 1e-8


def test_envelope_slope_and_doubling():
    box = LatticeBox.cube(1, default_side(0.125, 512))
    f1 = envelope_check(discrete_kernel(1, 0.125, box, 256), 4.0)
    f2 = envelope_check(discrete_kernel(1, 0.125, box, 512), 4.0)
    assert -0.55 <= f1.extra["slope"] <= -0.45
    assert np.isfinite(f1.C) and abs(f2.C / f1.C - 1) <= 0.1


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 2), st.floats(0.02, 0.125), st.integers(1, 40))
def test_discrete_kernel_nonnegative_and_conservative(d, lam, T):
    lam = min(lam, 1 / (4 * d))
    box = LatticeBox.cube(d, default_side(lam, T))
    tab = discrete_kernel(d, lam, box, T)
    assert np.all(tab.min_value >= 0)
    assert np.max(np.abs(tab.mass - 1)) < 1e-12
    # symmetry under x -> -x
    v = tab.values[-1]
    assert np.allclose(v, np.flip(v), atol=1e-15)
