import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahom.corrector import (CorrectorBox, TOperator, apply_T, apply_T_kernel, effective_matrix, eta_ladder,
                               extrapolate_q00, holder_probe, neumann_solve, twisted_divergence,
                               twisted_gradient)
from parahom.environments import CoefficientPath, EnvironmentSpec, sample_path
from parahom.errors import TailToleranceError
from parahom.lattice import LatticeBox, divergence, gradient, inner

BOX = LatticeBox.cube(1, 16)


def _rand_field(rng, n_t, box, complex_=True):
    shape = (n_t,) + box.sides + (box.d,)
    g = rng.standard_normal(shape)
    return g + 1j * rng.standard_normal(shape) if complex_ else g


def test_twisted_reduces_at_zero(rng):
    box = LatticeBox.cube(2, 6)
    f = rng.standard_normal(box.sides)
    v = rng.standard_normal(box.sides + (2,))
    assert np.array_equal(twisted_gradient(f, [0, 0], box).real, gradient(f, box))
    assert np.array_equal(twisted_divergence(v, [0, 0], box).real, divergence(v, box))


def test_twisted_adjoint(rng):
    box = LatticeBox.cube(2, 6)
    xi = [0.7, -1.9]
    f = rng.standard_normal(box.sides) + 1j * rng.standard_normal(box.sides)
    g = rng.standard_normal(box.sides + (2,)) + 1j * rng.standard_normal(box.sides + (2,))
    assert abs(inner(twisted_gradient(f, xi, box), g) - inner(f, twisted_divergence(g, xi, box))) < 1e-12


def test_twisted_constant():
    xi = np.array([0.4])
    out = twisted_gradient(np.full(BOX.sides, 2.0 + 0j), xi, BOX)
    assert np.allclose(out[..., 0], (np.exp(-0.4j) - 1) * 2.0)


@pytest.mark.parametrize("eta", [0.05, 0.1 + 0.3j])
def test_T_on_constant_matches_closed_form(eta):
    Lam, xi, v = 0.125, np.array([0.9]), np.array([1.0 + 0.5j])
    n_t = 32
    g = np.broadcast_to(v, (n_t,) + BOX.sides + (1,)).astype(complex)
    out = apply_T(g, xi, eta, BOX, Lam)
    e = np.exp(-1j * xi) - 1
    ref = (np.conj(e) @ v) * e / ((np.exp(eta) - 1) / Lam + np.sum(np.abs(e) ** 2))
    assert np.allclose(out, ref, atol=1e-14)
    assert np.allclose(TOperator(BOX, n_t, xi, eta, Lam).constant_response(v), ref)


def test_T_zero():
    assert np.all(apply_T(np.zeros((8, 16, 1)), [0.3], 0.1, BOX, 0.125) == 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(0.01, 1.0), st.floats(-3, 3), st.integers(0, 2 ** 32 - 1),
       st.booleans())
def test_T_contraction(xi, re_eta, im_eta, seed, continuous):
    r = np.random.default_rng(seed)
    box = LatticeBox.cube(2, 4)
    g = _rand_field(r, 8, box)
    out = apply_T(g, [xi, -xi / 2], complex(re_eta, im_eta), box, 0.125, continuous=continuous, h=0.5)
    assert np.linalg.norm(out) <= np.linalg.norm(g) * (1 + 1e-12)


def test_kernel_route_matches_symbol(rng):
    # xi a box frequency: both routes see the same periodic problem, up to the tail bound
    Lam, eta, n_t = 0.125, 0.5, 32
    xi = np.array([2 * np.pi * 3 / 16])
    g = _rand_field(rng, n_t, BOX)
    Tk, tail = apply_T_kernel(g, xi, eta, BOX, Lam, T_ker=n_t - 1, tail_tol=1e-3)
    Ts = apply_T(g, xi, eta, BOX, Lam)
    # time-periodic wrap adds factors e^{-eta n_t}; both are below 1e-6 here
    assert np.max(np.abs(Tk - Ts)) <= tail * np.max(np.abs(g)) + 1e-6


def test_kernel_route_continuous(rng):
    Lam, eta, h, n_t = 0.125, 1.0, 0.5, 64
    xi = np.array([2 * np.pi / 16])
    g = _rand_field(rng, n_t, BOX)
    Tk, tail = apply_T_kernel(g, xi, eta, BOX, Lam, continuous=True, h=h, T_ker=n_t - 2, tail_tol=1e-6)
    Ts = apply_T(g, xi, eta, BOX, Lam, continuous=True, h=h)
    assert np.max(np.abs(Tk - Ts)) < 1e-6


def test_kernel_tail_guard(rng):
    with pytest.raises(TailToleranceError):
        apply_T_kernel(_rand_field(rng, 8, BOX), [0.1], 0.01, BOX, 0.125, T_ker=4)


def test_neumann_constant_environment():
    spec = EnvironmentSpec.constant(kappa=0.125)
    path = sample_path(spec, BOX, 32)
    cf = neumann_solve(path, [0.3], 0.1)
    assert cf.iterations == 1 and cf.residual == 0
    assert np.all(cf.psi == 0)


def test_neumann_contraction_and_norm():
    spec = EnvironmentSpec.bernoulli(seed=4)
    path = sample_path(spec, BOX, 64)
    b = spec.bounds
    cf = neumann_solve(path, [0.0], 0.02, tol=1e-10)
    assert np.all(cf.ratios <= b.contraction + 0.05)
    assert np.all(cf.rms() <= np.sqrt(b.Lam / b.lam) * 1.0 + 1e-10)


def test_neumann_solves_corrector_equation():
    # psi = P T b (psi + v) at convergence
    spec = EnvironmentSpec.bernoulli(seed=8)
    path = sample_path(spec, BOX, 32)
    cf = neumann_solve(path, [0.5], 0.2, tol=1e-12)
    op = TOperator(BOX, 32, [0.5], 0.2, spec.bounds.Lam)
    b = 1 - path.values / spec.bounds.Lam
    rhs = op(b[..., None] * (cf.psi[0] + 1.0), project=True)
    assert np.max(np.abs(rhs - cf.psi[0])) < 1e-10


def test_effective_matrix_constant():
    em = effective_matrix(EnvironmentSpec.constant(kappa=0.1), [0.4], 0.05, N=4)
    assert np.allclose(em.q, 0.1, atol=1e-15) and np.all(em.stderr == 0)


def test_effective_matrix_bernoulli_below_mean():
    spec = EnvironmentSpec.bernoulli(seed=5)
    em = effective_matrix(spec, [0.0], 0.02, N=32)
    assert em.q[0, 0].real <= spec.kappa + 3 * em.stderr_re[0, 0]


def test_extrapolate_constant_exact():
    em = extrapolate_q00(EnvironmentSpec.constant(kappa=0.125), N=4)
    assert abs(em.q[0, 0] - 0.125) < 1e-15


def test_extrapolate_rejects_bad_ladder():
    with pytest.raises(ValueError):
        extrapolate_q00(EnvironmentSpec.constant(), etas=[0.01, 0.02, 0.04])


def test_eta_ladder():
    lad = eta_ladder(0.125)
    assert np.all(np.diff(lad) < 0) and lad[0] == 0.125 / 4 and len(lad) == 4


def test_holder_probe_constant_floor():
    fit = holder_probe(EnvironmentSpec.constant(kappa=0.1), [0.0], 0.05, xi_offsets=[[0.1], [0.2], [0.4]], N=4)
    assert fit.degenerate and np.all(fit.extra["diff"] == 0)


def test_holder_probe_zero_offset_rejected():
    with pytest.raises(ValueError):
        holder_probe(EnvironmentSpec.constant(), [0.0], 0.05, xi_offsets=[[0.0]], N=4)


def test_matrix_environment_runs():
    spec = EnvironmentSpec.iid(d=2, family="uniform-diagonal", low=0.04, high=0.12, seed=1)
    em = effective_matrix(spec, [0.0, 0.0], 0.03, N=4, cbox=CorrectorBox(L=4))
    lo, hi = em.quadratic_form_range()
    assert 0.04 - 1e-3 <= lo <= hi <= 0.12 + 1e-3
