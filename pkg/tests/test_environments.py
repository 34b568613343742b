import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahom.environments import (EnvironmentSpec, LangevinSpec, coefficients_of_field, exact_covariance,
                                  gibbs_initial, langevin_path, sample_constant, sample_iid_bernoulli,
                                  sample_iid_general, sample_path, site_words)
from parahom.errors import EllipticityError, StabilityError
from parahom.lattice import LatticeBox


BOX = LatticeBox.cube(1, 16)


def test_constant_path():
    spec = EnvironmentSpec.constant(kappa=1 / 8)
    p = sample_constant(spec, BOX, 5)
    assert np.all(p.values == 1 / 8)
    p.check(spec.bounds)
    assert spec.bounds.lam == spec.bounds.Lam == 1 / 8
    q = sample_constant(spec.with_seed(99), BOX, 5)
    assert np.array_equal(p.values, q.values)


def test_bernoulli_gamma_zero_is_constant():
    spec = EnvironmentSpec.bernoulli(gamma=0.0, kappa=1 / 8)
    p = sample_iid_bernoulli(spec, BOX, 4)
    assert np.array_equal(p.values, sample_constant(EnvironmentSpec.constant(kappa=1 / 8), BOX, 4).values)


def test_bernoulli_values_and_mean():
    spec = EnvironmentSpec.bernoulli(kappa=1 / 12, gamma=0.5, seed=11)
    box = LatticeBox.cube(1, 1000)
    v = sample_iid_bernoulli(spec, box, 100).values
    k = 1 / 12
    assert set(np.unique(v)) <= {k / 2, 3 * k / 2}
    se = v.std(ddof=1) / np.sqrt(v.size)
    assert abs(v.mean() - k) <= 3 * se


def test_bernoulli_determinism():
    spec = EnvironmentSpec.bernoulli(seed=5)
    a = sample_iid_bernoulli(spec, BOX, 10, stream=3).values
    b = sample_iid_bernoulli(spec, BOX, 10, stream=3).values
    assert a.tobytes() == b.tobytes()
    c = sample_iid_bernoulli(spec, BOX, 10, stream=4).values
    assert not np.array_equal(a, c)


def test_time_window_regeneration():
    # the counter layout lets any window be produced on its own
    spec = EnvironmentSpec.bernoulli(seed=2)
    box = LatticeBox.cube(2, 3)
    full = site_words(spec.seed, 0, box, 0, 8)
    part = site_words(spec.seed, 0, box, 5, 8)
    assert np.array_equal(full[5:], part)


def test_iid_point_mass_reproduces_constant():
    spec = EnvironmentSpec.iid(family="point", low=0.1)
    p = sample_iid_general(spec, BOX, 3)
    assert np.array_equal(p.values, sample_constant(EnvironmentSpec.constant(kappa=0.1), BOX, 3).values)


def test_iid_uniform_mean_and_bounds():
    spec = EnvironmentSpec.iid(low=1 / 24, high=1 / 8, seed=3)
    box = LatticeBox.cube(1, 1000)
    v = sample_iid_general(spec, box, 100).values
    assert v.min() >= 1 / 24 and v.max() <= 1 / 8
    se = v.std(ddof=1) / np.sqrt(v.size)
    assert abs(v.mean() - (1 / 24 + 1 / 8) / 2) <= 3 * se


def test_iid_diagonal_bounds():
    spec = EnvironmentSpec.iid(d=2, family="uniform-diagonal", low=0.02, high=0.12, seed=1)
    p = sample_iid_general(spec, LatticeBox.cube(2, 6), 4)
    assert p.is_matrix
    ev = np.linalg.eigvalsh(p.values)
    assert ev.min() >= 0.02 and ev.max() <= 0.12


def test_bad_specs():
    with pytest.raises(ValueError):
        EnvironmentSpec("nope")
    with pytest.raises(ValueError):
        EnvironmentSpec.bernoulli(gamma=1.0)
    with pytest.raises(EllipticityError):
        EnvironmentSpec.iid(low=0.0, high=0.1)
    with pytest.raises(StabilityError):
        sample_iid_bernoulli(EnvironmentSpec.bernoulli(kappa=0.3, gamma=0.5), BOX, 2)


def test_gibbs_variance_matches_spectral():
    ls = LangevinSpec(L=16, d=1, a_V=1.0, mass=1.0)
    phi = gibbs_initial(ls, seed=7, batch=10_000)
    zeta = 2 * np.pi * np.arange(16) / 16
    exact = np.mean(1 / (2 - 2 * np.cos(zeta) + 1))
    assert exact == pytest.approx(exact_covariance(ls)[0], abs=1e-14)
    x = phi[:, 0] ** 2
    assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / np.sqrt(x.size)
    m = phi[:, 0]
    assert abs(m.mean()) <= 3 * m.std(ddof=1) / np.sqrt(m.size)


@pytest.mark.parametrize("m", [4.0, 8.0, 16.0])
def test_large_mass_limit(m):
    v = exact_covariance(LangevinSpec(mass=m, dt=0.001, grid=0.001))[0]
    assert abs(v - 1 / m ** 2) <= 4 / m ** 4


def test_langevin_stationarity():
    ls = LangevinSpec(L=16, d=1)
    B = 2000
    phi0 = gibbs_initial(ls, seed=3, batch=B)
    fp = langevin_path(ls, phi0, 2.0, seed=3)
    v = fp.values[..., 0] ** 2          # (n_t, B)
    exact = exact_covariance(ls)[0]
    for row in v:
        se = row.std(ddof=1) / np.sqrt(B)
        assert abs(row.mean() - exact) <= 3 * se + 0.02 * exact


def test_langevin_coefficients_elliptic_and_seeds_differ():
    ls = LangevinSpec(L=16, d=1, kappa=0.1, c0=1.0, c1=0.5)
    spec = EnvironmentSpec.langevin_field(ls, seed=1)
    p1 = sample_path(spec, None, 2.0, stream=0)
    p2 = sample_path(spec.with_seed(2), None, 2.0, stream=0)
    p1.check(ls.bounds)
    p2.check(ls.bounds)
    assert p1.continuous and not np.array_equal(p1.values, p2.values)
    s1, s2 = p1.field.values.ravel(), p2.field.values.ravel()
    # same law: means agree within a generous 3 sigma (paths are correlated in time)
    se = np.hypot(s1.std(), s2.std()) / np.sqrt(len(s1) / 40)
    assert abs(s1.mean() - s2.mean()) <= 3 * se


def test_langevin_dt_guard():
    with pytest.raises(StabilityError):
        langevin_path(LangevinSpec(dt=0.25, grid=0.25), np.zeros(16), 1.0, seed=0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.1), st.floats(0, 0.99), st.integers(0, 2 ** 63 - 1), st.integers(0, 1000))
def test_bernoulli_slices_always_elliptic(kappa, gamma, seed, stream):
    spec = EnvironmentSpec.bernoulli(kappa=kappa, gamma=gamma, seed=seed)
    p = sample_iid_bernoulli(spec, LatticeBox.cube(1, 8), 3, stream=stream)
    p.check(spec.bounds)


@settings(max_examples=20, deadline=None)
@given(st.floats(-50, 50, allow_nan=False), st.floats(0.5, 3), st.floats(0, 0.9))
def test_a_tilde_within_bounds(s, c0, frac):
    ls = LangevinSpec(kappa=0.1, c0=c0, c1=frac * c0)
    a = ls.a_tilde(np.array([s]))
    assert ls.bounds.lam - 1e-15 <= a[0] <= ls.bounds.Lam + 1e-15


def test_batched_langevin_matches_single_streams():
    from parahom.environments import sample_langevin, sample_langevin_batch
    spec = EnvironmentSpec.langevin_field(LangevinSpec(), seed=12)
    vals, grid = sample_langevin_batch(spec, 3.0, [0, 5, 9], block=7)
    for b, s in enumerate([0, 5, 9]):
        p = sample_langevin(spec, 3.0, s)
        assert vals[b].tobytes() == p.values.tobytes()
        assert np.array_equal(grid, p.times)
