import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from rotorbits.errors import DimensionError, ValidationError
from rotorbits.symplectic import (TWO_PI, eval_number, fixed_projection, matrix_from_preset, normal_form,
                                  parse_matrix_text, random_symplectic_orthogonal, reconstruct, rotation_matrix,
                                  rotation_path, symplectic_form, tilde_angles, validate_symplectic_orthogonal)


@given(n=st.integers(1, 6), seed=st.integers(0, 2 ** 32 - 1))
def test_reconstruction_of_random_rotations(n, seed):
    Q = random_symplectic_orthogonal(n, seed)
    sr = normal_form(Q)
    assert np.linalg.norm(reconstruct(sr) - Q) <= 1e-10
    assert np.linalg.norm(sr.P.T @ sr.P - np.eye(2 * n)) <= 1e-10
    assert np.all((sr.theta >= 0) & (sr.theta < TWO_PI))


@given(n=st.integers(1, 5), seed=st.integers(0, 2 ** 32 - 1))
def test_frames_are_eigenvectors_of_Q_and_J(n, seed):
    Q = random_symplectic_orthogonal(n, seed)
    sr = normal_form(Q)
    J = symplectic_form(n)
    V = sr.frames
    assert np.allclose(J @ V, 1j * V, atol=1e-10)
    assert np.allclose(Q @ V, V * np.exp(1j * sr.theta), atol=1e-10)
    assert np.allclose(V.conj().T @ V, np.eye(n), atol=1e-10)


def test_identity_and_negative_identity():
    sr = normal_form(np.eye(4))
    assert np.array_equal(sr.theta, [0.0, 0.0])
    assert sr.fixed_basis.shape == (4, 4)
    sr = normal_form(-np.eye(6))
    assert np.allclose(sr.theta, np.pi, atol=1e-12)
    assert sr.fixed_basis.shape == (6, 0)


@pytest.mark.parametrize("angle", [np.pi / 3, 1.0, 2 * np.pi / 3, 5.5])
def test_single_plane_rotation_against_matrix_exponential(angle):
    Q = sla.expm(angle * symplectic_form(1))
    sr = normal_form(Q)
    assert sr.theta[0] == pytest.approx(angle, abs=1e-12)
    assert np.allclose(rotation_matrix([angle]), Q, atol=1e-14)


def test_repeated_angles_with_random_frame(rng):
    n = 4
    W = random_symplectic_orthogonal(n, rng)
    Q = W @ rotation_matrix([0.7, 0.7, 0.7, 2.0]) @ W.T
    sr = normal_form(Q)
    assert np.linalg.norm(reconstruct(sr) - Q) <= 1e-10
    assert np.sort(sr.theta) == pytest.approx([0.7, 0.7, 0.7, 2.0], abs=1e-10)


def test_non_symplectic_matrix_rejected():
    Q = np.diag([2.0, 0.5])
    rep = validate_symplectic_orthogonal(Q)
    assert not rep.passed and rep.orth_defect > 1
    with pytest.raises(ValidationError) as exc:
        normal_form(Q)
    assert exc.value.defects["orth_defect"] > 1
    with pytest.raises(DimensionError):
        normal_form(np.eye(3))


def test_tilde_angles_replace_zero_and_sort():
    tl = tilde_angles(np.array([0.0, 1.0, 3.0]))
    assert tl.values.tolist() == [1.0, 3.0, TWO_PI]
    assert tl.order.tolist() == [1, 2, 0]
    assert tl.by_plane.tolist() == [TWO_PI, 1.0, 3.0]


@given(n=st.integers(1, 4), seed=st.integers(0, 10 ** 6), s=st.floats(0, 3), t=st.floats(0, 3))
def test_rotation_path_endpoints_and_group_law(n, seed, s, t):
    Q = random_symplectic_orthogonal(n, seed)
    sr = normal_form(Q)
    tl = tilde_angles(sr)
    T = 1.7
    assert np.allclose(rotation_path(sr, tl, 0.0, T), np.eye(2 * n), atol=1e-13)
    assert np.allclose(rotation_path(sr, tl, T, T), Q, atol=1e-10)
    lhs = rotation_path(sr, tl, s + t, T)
    rhs = rotation_path(sr, tl, s, T) @ rotation_path(sr, tl, t, T)
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(seed=st.integers(0, 10 ** 6))
def test_fixed_projection(seed):
    rng = np.random.default_rng(seed)
    W = random_symplectic_orthogonal(3, rng)
    Q = W @ rotation_matrix([0.0, 0.0, rng.uniform(0.1, 6.0)]) @ W.T
    sr = normal_form(Q)
    v = rng.normal(size=6)
    Pv, w = fixed_projection(sr, v)
    assert np.allclose(Q @ Pv, Pv, atol=1e-12)
    assert np.allclose((np.eye(6) - Q) @ w, v - Pv, atol=1e-12)
    assert np.allclose(fixed_projection(sr, Pv)[0], Pv, atol=1e-12)


def test_presets_and_parsing():
    assert np.array_equal(matrix_from_preset("identity", 2), np.eye(4))
    assert np.allclose(matrix_from_preset("rotation:[pi/3]", 2), rotation_matrix([np.pi / 3] * 2))
    assert eval_number("2*pi/3") == pytest.approx(2 * np.pi / 3)
    with pytest.raises(ValueError):
        eval_number("__import__('os')")
    with pytest.raises(ValueError):
        matrix_from_preset("identity")
    with pytest.raises(DimensionError):
        matrix_from_preset("rotation:[1, 2]", 3)
    assert np.array_equal(parse_matrix_text("# c\n1, 0\n0 1\n"), np.eye(2))
    with pytest.raises(DimensionError):
        parse_matrix_text("1 0\n0\n")
