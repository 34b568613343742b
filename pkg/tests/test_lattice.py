import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahom.errors import EllipticityError, StabilityError
from parahom.lattice import (EllipticityBounds, LatticeBox, apply_divergence_form, check_ellipticity,
                             divergence, gradient, inner, laplacian, phase_norm2, phase_vector)


def test_gradient_of_constant_is_zero():
    box = LatticeBox.cube(2, 6)
    assert np.all(gradient(np.full(box.sides, 7.0), box) == 0)


def test_gradient_wraps_at_seam():
    box = LatticeBox.cube(1, 4)
    g = gradient(np.array([0.0, 1, 2, 3]), box)
    np.testing.assert_array_equal(g[:, 0], [1, 1, 1, -3])


def test_gradient_of_delta_support():
    box = LatticeBox.cube(1, 8)
    g = gradient(box.delta(), box)[:, 0]
    nz = {int(x) for x in box.coords()[..., 0][g != 0]}
    assert nz == {-1, 0}


def test_divergence_of_constant_vector_is_zero():
    box = LatticeBox.cube(2, 5)
    v = np.broadcast_to(np.array([0.3, -1.2]), box.sides + (2,))
    assert np.allclose(divergence(v, box), 0)


def test_adjointness_random(rng):
    box = LatticeBox.cube(2, 8)
    f = rng.standard_normal(box.sides)
    v = rng.standard_normal(box.sides + (2,))
    lhs = inner(gradient(f, box), v)
    rhs = inner(f, divergence(v, box))
    assert abs(lhs - rhs) < 1e-12 * np.linalg.norm(f) * np.linalg.norm(v)


def test_laplacian_of_delta_stencil():
    box = LatticeBox.cube(1, 8)
    u = laplacian(box.delta(), box)
    assert u[0] == 2 and u[1] == -1 and u[-1] == -1
    assert np.count_nonzero(u) == 3


def test_apply_divergence_form_constant_u():
    box = LatticeBox.cube(2, 4)
    a = np.full(box.sides, 0.1)
    assert np.allclose(apply_divergence_form(a, np.ones(box.sides), box), 0)


def test_scalar_coefficient_commutes(rng):
    box = LatticeBox.cube(2, 6)
    u = rng.standard_normal(box.sides)
    kappa = 0.15
    out = apply_divergence_form(np.full(box.sides, kappa), u, box)
    ref = kappa * laplacian(u, box)
    assert np.max(np.abs(out - ref)) <= 1e-13 * np.max(np.abs(ref))


def test_divergence_form_delta():
    box = LatticeBox.cube(1, 8)
    kappa = 0.125
    out = apply_divergence_form(np.full(box.sides, kappa), box.delta(), box)
    assert out[0] == pytest.approx(2 * kappa) and out[1] == pytest.approx(-kappa)
    assert out[-1] == pytest.approx(-kappa)


def test_matrix_field_matches_scalar(rng):
    box = LatticeBox.cube(2, 5)
    s = rng.uniform(0.05, 0.1, box.sides)
    A = s[..., None, None] * np.eye(2)
    u = rng.standard_normal(box.sides)
    assert np.allclose(apply_divergence_form(A, u, box), apply_divergence_form(s, u, box), atol=1e-15)


def test_ellipticity_violation():
    box = LatticeBox.cube(1, 4)
    with pytest.raises(EllipticityError):
        check_ellipticity(np.full(box.sides, 0.5), EllipticityBounds(0.1, 0.2), box)
    with pytest.raises(EllipticityError):
        EllipticityBounds(0.0, 1.0)
    with pytest.raises(StabilityError):
        EllipticityBounds(0.1, 0.3, d=1).check_discrete()


def test_nonsymmetric_matrix_rejected():
    box = LatticeBox.cube(2, 3)
    A = np.zeros(box.sides + (2, 2))
    A[..., 0, 0] = A[..., 1, 1] = 0.1
    A[..., 0, 1] = 0.05
    with pytest.raises(EllipticityError):
        check_ellipticity(A, EllipticityBounds(0.01, 0.2, 2), box)


def test_box_validation():
    with pytest.raises(ValueError):
        LatticeBox((1,))
    box = LatticeBox((4, 6))
    assert box.n_sites == 24
    idx = box.flat_index(np.array([[-1, 0], [0, 7]]))
    np.testing.assert_array_equal(box.site(idx), [[3, 0], [0, 1]])


def test_phase_vector_values():
    assert np.all(phase_vector([0.0]) == 0)
    assert phase_vector([np.pi])[0] == pytest.approx(-2)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=3))
def test_phase_norm_bounded(xi):
    assert phase_norm2(xi) <= 4 * len(xi) + 1e-12
    assert phase_norm2(xi) == pytest.approx(np.sum(np.abs(phase_vector(xi)) ** 2), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_summation_by_parts_property(d, L, seed):
    r = np.random.default_rng(seed)
    box = LatticeBox.cube(d, L)
    f = r.standard_normal(box.sides)
    v = r.standard_normal(box.sides + (d,))
    assert abs(inner(gradient(f, box), v) - inner(f, divergence(v, box))) < 1e-10 * (1 + np.abs(f).sum() * np.abs(v).sum())
    # the generator kills constants and sums to zero
    a = r.uniform(0.01, 0.05, box.sides)
    out = apply_divergence_form(a, f, box)
    assert abs(out.sum()) < 1e-12 * max(1.0, np.abs(out).sum())
