import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exitrate import (DiffusionField, GainTuple, SystemModel, closed_loop_drift,
                      closed_loop_matrix, diffusion_at, is_hurwitz)
from exitrate.errors import EllipticityError, ShapeError

from conftest import scalar_gain, scalar_model


def rotation_model():
    return SystemModel(np.array([[0.0, 1.0], [-1.0, 0.0]]), (np.array([[0.0], [1.0]]),),
                       DiffusionField.constant(np.eye(2)))


def test_scalar_drift():
    m = scalar_model(0.0)
    assert closed_loop_drift(m, scalar_gain(-2.0), [3.0]).tolist() == [-6.0]
    assert closed_loop_matrix(m, scalar_gain(-2.0)).tolist() == [[-2.0]]


def test_rotation_drift_and_matrix():
    m = rotation_model()
    K = GainTuple((np.array([[-1.0, -1.0]]),))
    assert closed_loop_drift(m, K, [1.0, 0.0]).tolist() == [0.0, -2.0]
    assert closed_loop_matrix(m, K).tolist() == [[0.0, 1.0], [-2.0, -1.0]]


def test_zero_gains_give_A():
    m = rotation_model()
    np.testing.assert_array_equal(closed_loop_matrix(m, GainTuple.zeros(m)), m.A)
    assert np.all(closed_loop_drift(m, GainTuple.zeros(m), [0.0, 0.0]) == 0)


def test_channel_shape_error_names_channel():
    m = SystemModel(np.zeros((2, 2)), (np.ones((2, 1)), np.ones((2, 2))),
                    DiffusionField.constant(np.eye(2)))
    bad = GainTuple((np.ones((1, 2)), np.ones((1, 2))))
    with pytest.raises(ShapeError, match="channel 1"):
        closed_loop_matrix(m, bad)


def test_diffusion_examples():
    sig, cert = diffusion_at(DiffusionField.constant(np.eye(2)), [4.0, -1.0])
    np.testing.assert_array_equal(sig, np.eye(2))
    assert cert == pytest.approx(1.0)
    sig, cert = diffusion_at(DiffusionField.diagonal_affine([1, 1], [0, 0]), [7.0, -3.0])
    np.testing.assert_array_equal(sig, np.eye(2))
    assert cert == pytest.approx(1.0)
    sig, cert = diffusion_at(DiffusionField.diagonal_affine([2.0], [1.0]), [-3.0])
    assert sig.tolist() == [[5.0]]
    assert cert == pytest.approx(25.0)


def test_ellipticity_violation_reports_point():
    field = DiffusionField.diagonal_affine([-1.0], [1.0])
    with pytest.raises(EllipticityError) as info:
        diffusion_at(field, [1.0])
    assert info.value.eigenvalue == pytest.approx(0.0)
    assert list(info.value.x) == [1.0]


@pytest.mark.parametrize("matrix, expected", [
    ([[-2.0]], True),
    ([[1.0]], False),
    ([[0.0]], False),
    ([[0.0, 1.0], [-2.0, -1.0]], True),
])
def test_hurwitz(matrix, expected):
    assert is_hurwitz(np.array(matrix)) is expected


def test_hurwitz_quadratic_oracle():
    # roots of z^2 + z + 2
    disc = complex(1 - 8) ** 0.5
    roots = [(-1 + disc) / 2, (-1 - disc) / 2]
    assert max(r.real for r in roots) == pytest.approx(-0.5)
    assert is_hurwitz(np.array([[0.0, 1.0], [-2.0, -1.0]]))
    # margin: real part -1e-10 is not accepted
    assert not is_hurwitz(np.array([[-1e-10]]))


mats = arrays(float, (2, 2), elements=st.floats(-5, 5))
vecs = arrays(float, (2,), elements=st.floats(-10, 10))


@settings(max_examples=60, deadline=None)
@given(mats, mats, vecs, vecs)
def test_drift_linear_and_matches_matrix(A, Kf, x, y):
    m = SystemModel(A, (np.eye(2),), DiffusionField.constant(np.eye(2)))
    K = GainTuple((Kf,))
    M = closed_loop_matrix(m, K)
    fx, fy = closed_loop_drift(m, K, x), closed_loop_drift(m, K, y)
    scale = 1.0 + np.abs(M).sum() * (np.abs(x).max() + np.abs(y).max())
    assert np.max(np.abs(closed_loop_drift(m, K, x + y) - fx - fy)) <= 1e-12 * scale
    assert np.max(np.abs(M @ x - fx)) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-3, 3)), vecs)
def test_constant_sigma_never_raises(L, x):
    S = L + 2.0 * np.eye(2) * (1 + np.abs(L).sum())
    field = DiffusionField.constant(S, kappa=1e-10)
    _, cert = diffusion_at(field, x)
    assert cert >= 1e-10
