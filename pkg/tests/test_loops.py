import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotorbits.errors import AliasingError, GridMismatchError
from rotorbits.loops import (RotatingLoop, analyze, apply_K, build_grid, evaluate, fit_rotating, loop_from_csv,
                             loop_to_csv, orbit_distance, pairing, quadratic_form, shift, synthesize)
from rotorbits.symplectic import normal_form, random_symplectic_orthogonal, rotation_matrix

from oracles import remove_fixed_mean, time_domain_K


def random_loop(grid, rng, decay=0.5):
    c = rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size)
    return RotatingLoop(grid, c * np.exp(-decay * np.abs(grid.k)))


MATRICES = [np.eye(4), -np.eye(4), rotation_matrix([2 * np.pi / 3, 1.0]), rotation_matrix([0.0, 1.0])]


@pytest.fixture(params=range(len(MATRICES)))
def sr(request):
    return normal_form(MATRICES[request.param])


def test_grid_excludes_zero_frequency(sr):
    grid = build_grid(sr, 2.0, 5)
    assert np.all(grid.omega != 0)
    assert grid.size == 11 * sr.n - len(sr.fixed_planes)


def test_round_trip_and_parseval(sr, rng):
    grid = build_grid(sr, 2.5, 8)
    y = random_loop(grid, rng)
    s = synthesize(y, 64)
    back, res = analyze(s, grid, return_residual=True)
    assert np.allclose(back.coeffs, y.coeffs, atol=1e-13)
    assert res < 1e-13
    assert np.mean(np.sum(s ** 2, axis=1)) == pytest.approx(y.mean_square(), rel=1e-12)


def test_synthesize_matches_direct_summation(sr, rng):
    grid = build_grid(sr, 1.3, 6)
    y = random_loop(grid, rng)
    t = np.arange(40) * 1.3 / 40
    assert np.allclose(synthesize(y, 40), evaluate(y, t), atol=1e-12)


@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 4), t=st.floats(-5, 5))
def test_rotating_boundary_condition(seed, n, t):
    rng = np.random.default_rng(seed)
    Q = random_symplectic_orthogonal(n, rng)
    sr = normal_form(Q)
    T = rng.uniform(0.5, 4.0)
    y = random_loop(build_grid(sr, T, 6), rng)
    lhs, rhs = evaluate(y, t + T)[0], Q @ evaluate(y, t)[0]
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_sampled_boundary_condition_wraps_through_Q(sr, rng):
    grid = build_grid(sr, 3.0, 8)
    y = random_loop(grid, rng)
    N = 48
    s = synthesize(y, N)
    shifted = synthesize(shift(y, 5 * 3.0 / N), N)
    expected = np.vstack([s[5:], s[:5] @ sr.Q.T])
    assert np.allclose(shifted, expected, atol=1e-12)


@given(seed=st.integers(0, 10 ** 6), a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_shift_group_law(seed, a, b):
    rng = np.random.default_rng(seed)
    sr = normal_form(rotation_matrix([1.0, 2 * np.pi / 3]))
    y = random_loop(build_grid(sr, 2.0, 6), rng)
    lhs = shift(shift(y, a), b).coeffs
    rhs = shift(y, a + b).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(y.coeffs))
    assert np.allclose(shift(y, 0.0).coeffs, y.coeffs, rtol=0, atol=0)


def test_shift_is_time_translation(sr, rng):
    grid = build_grid(sr, 2.0, 6)
    y = random_loop(grid, rng)
    t = np.linspace(0, 2, 13)
    assert np.allclose(evaluate(shift(y, 0.37), t), evaluate(y, t + 0.37), atol=1e-12)


def test_K_against_time_domain_definition(sr, rng):
    T = 2.2
    grid = build_grid(sr, T, 10)
    y = random_loop(grid, rng)
    Ky_time = time_domain_K(sr, lambda t: evaluate(y, t), T, M=64)
    Ky_spec = evaluate(apply_K(y), np.arange(64) * T / 64)
    assert np.allclose(remove_fixed_mean(sr, Ky_time), Ky_spec, atol=1e-11)


def test_pairing_and_quadratic_form_against_quadrature(sr, rng):
    T = 1.9
    grid = build_grid(sr, T, 6)
    y1, y2 = random_loop(grid, rng), random_loop(grid, rng)
    s1, s2, k1 = synthesize(y1, 64), synthesize(y2, 64), synthesize(apply_K(y1), 64)
    assert pairing(y1, y2) == pytest.approx(T * np.mean(np.sum(s1 * s2, axis=1)), rel=1e-11)
    assert quadratic_form(y1) == pytest.approx(T * np.mean(np.sum(s1 * k1, axis=1)), rel=1e-11)
    assert quadratic_form(y1) == pytest.approx(pairing(y1, apply_K(y1)), rel=1e-12)


def test_K_is_symmetric(sr, rng):
    grid = build_grid(sr, 1.5, 6)
    y1, y2 = random_loop(grid, rng), random_loop(grid, rng)
    assert pairing(apply_K(y1), y2) == pytest.approx(pairing(y1, apply_K(y2)), rel=1e-12)


def test_aliasing_and_grid_errors(sr, rng):
    grid = build_grid(sr, 1.0, 8)
    y = random_loop(grid, rng)
    with pytest.raises(AliasingError):
        synthesize(y, 17)
    other = build_grid(sr, 1.0, 7)
    with pytest.raises(GridMismatchError):
        y + RotatingLoop.zeros(other)
    with pytest.raises(GridMismatchError):
        RotatingLoop(grid, np.zeros(3))


def test_fit_rotating_recovers_offset():
    sr = normal_form(rotation_matrix([0.0, 1.0]))
    grid = build_grid(sr, 2.0, 5)
    y = random_loop(grid, np.random.default_rng(3))
    c = sr.fixed_basis @ np.array([0.3, -0.2])
    loop, offset = fit_rotating(synthesize(y, 32) + c, sr, 2.0)
    assert np.allclose(offset, c, atol=1e-13)
    t = np.linspace(0, 2, 7)
    assert np.allclose(evaluate(loop, t), evaluate(y, t), atol=1e-12)


def test_orbit_distance(sr, rng):
    grid = build_grid(sr, 2.0, 6)
    y = random_loop(grid, rng)
    assert orbit_distance(y, shift(y, 0.731)) <= 1e-7 * y.norm()
    z = random_loop(grid, rng)
    assert orbit_distance(y, z) > 0.1 * y.norm()


def test_loop_csv_round_trip(sr, rng):
    grid = build_grid(sr, 2.0, 4)
    y = random_loop(grid, rng)
    text = loop_to_csv(y)
    back = loop_from_csv(text, sr)
    assert np.array_equal(back.coeffs, y.coeffs)
    assert back.grid.T == y.grid.T
