import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotorbits import dual
from rotorbits.hamiltonian import GaugeProblem, ellipsoid, pinch_estimate, round_sphere
from rotorbits.loops import (RotatingLoop, apply_K, build_grid, evaluate, pairing, quadratic_form, shift,
                             synthesize)
from rotorbits.symplectic import normal_form, rotation_matrix, tilde_angles

from conftest import anharmonic

TWO_PI = 2 * np.pi


def setup(Q, raw, T=TWO_PI, K=16, q=4 / 3):
    sr = normal_form(Q)
    pe = pinch_estimate(raw)
    gp = GaugeProblem(raw, q, pe.r_in, pe.R_out)
    return sr, tilde_angles(sr), gp, build_grid(sr, T, K)


def random_loop(grid, rng, scale=0.3):
    c = rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size)
    return RotatingLoop(grid, scale * c * np.exp(-0.5 * np.abs(grid.k)))


CASES = {
    "round-identity": (np.eye(4), round_sphere(2)),
    "ellipsoid-irrational": (rotation_matrix([1.0, 1.0]), ellipsoid([1.0, 1.15])),
    "ellipsoid-antiperiodic": (-np.eye(4), ellipsoid([1.0, 1.1])),
    "anharmonic-identity": (np.eye(2), anharmonic()),
}


@pytest.fixture(params=list(CASES))
def case(request):
    Q, raw = CASES[request.param]
    return setup(Q, raw)


def test_energy_of_zero(case):
    _, _, gp, grid = case
    assert dual.energy(gp, RotatingLoop.zeros(grid)) == 0.0


# A non-polynomial H* is aliased by the trapezoid rule; 32 samples per mode keeps
# that below the invariance tolerance for these smooth loops.
FINE = 32


def test_energy_shift_invariance(case):
    _, _, gp, grid = case
    rng = np.random.default_rng(0)
    y = random_loop(grid, rng)
    N = FINE * grid.K_max
    E = dual.energy(gp, y, N)
    for s in rng.uniform(-5, 5, size=4):
        assert dual.energy(gp, shift(y, s), N) == pytest.approx(E, abs=1e-10 * (1 + abs(E)))


def test_gradient_matches_finite_differences(case):
    _, _, gp, grid = case
    rng = np.random.default_rng(1)
    eps = 1e-5
    for _ in range(5):
        y = random_loop(grid, rng)
        g = dual.gradient(gp, y)
        for _ in range(20):
            h = random_loop(grid, rng, scale=1.0)
            fd = (dual.energy(gp, y + eps * h) - dual.energy(gp, y - eps * h)) / (2 * eps)
            an = pairing(g, h)
            assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-3 * g.norm() * h.norm())


def test_gradient_equivariance(case):
    _, _, gp, grid = case
    y = random_loop(grid, np.random.default_rng(2))
    s = 0.731
    N = FINE * grid.K_max
    lhs = dual.gradient(gp, shift(y, s), N).coeffs
    rhs = shift(dual.gradient(gp, y, N), s).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))


class ZeroConjugate:
    p = 4.0

    def conjugate(self, y):
        return np.zeros(y.shape[:-1]), np.zeros_like(y)


def test_gradient_of_quadratic_part_only():
    sr, _, _, grid = setup(rotation_matrix([0.4]), round_sphere(1))
    y = random_loop(grid, np.random.default_rng(3))
    g = dual.gradient(ZeroConjugate(), y)
    assert np.allclose(g.coeffs, -apply_K(y).coeffs, atol=1e-15)
    assert dual.energy(ZeroConjugate(), y) == pytest.approx(-0.5 * quadratic_form(y))


@pytest.mark.parametrize("theta", [0.0, 1.0, np.pi])
def test_round_single_mode_energy_closed_form(theta):
    n = 1
    sr, tl, gp, grid = setup(rotation_matrix([theta]), round_sphere(n))
    p, T = gp.p, TWO_PI
    k = 0 if theta else 1
    w = (TWO_PI * k + theta) / T
    c = 0.4 - 0.3j
    for lam in (0.5, 1.0, 2.0):
        y = RotatingLoop.mode(grid, 0, k, lam * c)
        closed = T * 2 ** (p / 2) / p * abs(lam * c) ** p - T * lam ** 2 * abs(c) ** 2 / w
        t = np.linspace(0, T, 4001)
        ys = evaluate(y, t)
        Ks = evaluate(apply_K(y), t)
        dense = np.trapezoid(np.linalg.norm(ys, axis=1) ** p / p - 0.5 * np.sum(ys * Ks, axis=1), t)
        assert closed == pytest.approx(dense, rel=1e-9)
        assert dual.energy(gp, y) == pytest.approx(closed, rel=1e-12)


def test_round_minimum_formula_matches_minimum_over_amplitude():
    sr, tl, gp, grid = setup(rotation_matrix([1.0]), round_sphere(1))
    p, T = gp.p, TWO_PI
    mode = dual.seed_loop(grid, tl, 0)
    lams = np.linspace(0.01, 10, 20001)
    A, B = dual.conjugate_integral(gp, mode), quadratic_form(mode)
    brute = np.min(lams ** p * A - 0.5 * lams ** 2 * B)
    assert dual.round_minimum(p, T, tl.smallest) == pytest.approx(brute, rel=1e-6)


def test_seed_quadratic_form_and_radial_stationarity(case):
    sr, tl, gp, grid = case
    T = grid.T
    for j in range(sr.n):
        z = dual.seed_loop(grid, tl, j)
        assert z.mean_square() == pytest.approx(1.0)
        assert quadratic_form(z) == pytest.approx(T * T / tl.values[j], rel=1e-12)
        y = dual.seed(gp, tl, j, grid)
        assert pairing(dual.gradient(gp, y), z) == pytest.approx(0.0, abs=1e-10 * y.norm())
        lam = dual.critical_scaling(gp, z)
        E = dual.energy(gp, y)
        assert E == pytest.approx((1 / gp.p - 0.5) * lam ** 2 * quadratic_form(z), rel=1e-10)
        assert np.allclose((dual.critical_scaling(gp, 2 * z) * 2 * z).coeffs, y.coeffs, rtol=1e-12)


def test_seed_from_direction_matches_rotation_path():
    from rotorbits.symplectic import rotation_path

    sr, tl, gp, grid = setup(rotation_matrix([1.0, 2.0]), ellipsoid([1.0, 1.1]))
    xi = np.random.default_rng(4).normal(size=4)
    xi /= np.linalg.norm(xi)
    z = dual.direction_loop(grid, xi)
    for t in (0.0, 0.7, 3.1):
        assert np.allclose(evaluate(z, t)[0], rotation_path(sr, tl, t, grid.T) @ xi, atol=1e-12)
    assert z.mean_square() == pytest.approx(1.0)


@given(s=st.floats(-10, 10))
def test_scaling_identity_property(s):
    sr, tl, gp, grid = setup(rotation_matrix([1.0, 1.0]), ellipsoid([1.0, 1.15]))
    rng = np.random.default_rng(int(abs(s) * 1000))
    z = dual.direction_loop(grid, rng.normal(size=4))
    z = shift(z, s)
    lam = dual.critical_scaling(gp, z)
    assert dual.energy(gp, lam * z) == pytest.approx((1 / gp.p - 0.5) * lam ** 2 * quadratic_form(z), rel=1e-10)


def test_descent_from_exact_critical_point_takes_no_steps():
    sr, tl, gp, grid = setup(np.eye(2), round_sphere(1))
    st_ = dual.descend(gp, dual.seed(gp, tl, 0, grid))
    assert st_.steps == 0 and st_.converged


@pytest.mark.parametrize("theta", [0.0, 1.0, np.pi])
def test_round_descent_from_perturbed_seed(theta):
    sr, tl, gp, grid = setup(rotation_matrix([theta]), round_sphere(1))
    y0 = dual.seed(gp, tl, 0, grid) + random_loop(grid, np.random.default_rng(5), scale=0.02)
    st_ = dual.descend(gp, y0)
    assert st_.grad_norm <= 1e-8
    assert st_.E == pytest.approx(dual.round_minimum(gp.p, grid.T, tl.smallest), abs=1e-6)
    assert all(b <= a + 1e-13 * (1 + abs(a)) for a, b in zip(st_.history, st_.history[1:]))
    rec = dual.recover(gp, st_)
    assert rec.residual <= 1e-8
    radius = np.linalg.norm(rec.z, axis=1)
    assert np.ptp(radius) <= 1e-8
    H = gp.value(rec.z)
    assert np.ptp(H) <= 1e-8


def test_fixed_step_variant_also_converges():
    sr, tl, gp, grid = setup(np.eye(2), round_sphere(1))
    y0 = dual.seed(gp, tl, 0, grid) + random_loop(grid, np.random.default_rng(6), scale=0.02)
    st_ = dual.descend(gp, y0, dual.DescentOptions(initial_step="fixed"))
    assert st_.converged
    assert all(b <= a + 1e-13 * (1 + abs(a)) for a, b in zip(st_.history, st_.history[1:]))


def test_anharmonic_descent_and_recovery():
    sr, tl, gp, grid = setup(np.eye(2), anharmonic(), K=24)
    st_ = dual.descend(gp, dual.seed(gp, tl, 0, grid))
    assert st_.converged and st_.steps > 0
    rec = dual.recover(gp, st_)
    assert rec.residual <= 1e-6
    assert np.ptp(gp.value(rec.z)) <= 1e-8
    assert st_.E < 0


def test_recover_antiperiodic_has_zero_offset():
    sr, tl, gp, grid = setup(-np.eye(4), ellipsoid([1.0, 1.1]))
    rec = dual.recover(gp, dual.descend(gp, dual.seed(gp, tl, 0, grid)))
    assert np.array_equal(rec.z0, np.zeros(4))


def test_subperiod_detection():
    sr, tl, gp, grid = setup(np.eye(2), round_sphere(1))
    assert dual.rotating_subperiod(RotatingLoop.mode(grid, 0, 1)) == 1
    assert dual.rotating_subperiod(RotatingLoop.mode(grid, 0, 2)) == 2
    assert dual.rotating_subperiod(RotatingLoop.mode(grid, 0, 6)) == 6
    assert dual.subperiod_modes(grid) == [(0, 2, 2)]
    sr = normal_form(rotation_matrix([1.0]))
    assert dual.subperiod_modes(build_grid(sr, 1.0, 16)) == []
    sr = normal_form(-np.eye(2))
    assert dual.subperiod_modes(build_grid(sr, 1.0, 4)) == [(0, 1, 3)]


def test_value_checks_constants_and_round_case():
    p = 4.0
    assert dual.lower_constant(p, TWO_PI, TWO_PI) < 0
    sr, tl, gp, grid = setup(np.eye(2), round_sphere(1))
    m = dual.descend(gp, dual.seed(gp, tl, 0, grid)).E
    assert m == pytest.approx(dual.round_minimum(gp.p, TWO_PI, TWO_PI), abs=1e-6)
    m_star = dual.descend(gp, dual.subperiod_seeds(gp, grid)[0][0]).E
    ledger = dual.value_checks(gp.p, [m], [m_star], [m], tl, 1.0, TWO_PI)
    entries = {e["name"]: e for e in ledger}
    assert entries["b"]["value"] == pytest.approx(TWO_PI)
    assert all(e.get("status", "pass") == "pass" for e in ledger)
    assert entries["m_lower_bound"]["lhs"] == pytest.approx(entries["m_lower_bound"]["rhs"], rel=1e-12)
    assert entries["m_vs_subperiod"]["lhs"] == pytest.approx(entries["m_vs_subperiod"]["rhs"], rel=1e-12)
    skipped = {e["name"]: e.get("status") for e in dual.value_checks(gp.p, [m], [], [], tl, 1.0, TWO_PI)}
    assert skipped["m_vs_subperiod"] == "skipped" and skipped["seed_bound"] == "skipped"


@given(p=st.floats(2.2, 40.0), ratio=st.floats(1.0, 4.0))
def test_round_seed_bound_depends_only_on_angle_ratio(p, ratio):
    """Plane seeds on the unit sphere sit exactly at the single-mode minimum for
    their angle, so sup over seeds < 2^{p/(2-p)} c0 holds iff θ̃ₙ < 2θ̃₁, for any p."""
    T, t1 = TWO_PI, 0.6
    tn = ratio * t1
    c0 = dual.lower_constant(p, T, t1)
    sup = dual.round_minimum(p, T, tn)
    holds = sup < 2.0 ** (p / (2.0 - p)) * c0
    if abs(ratio - 2.0) > 1e-9:
        assert holds == (ratio < 2.0)


@pytest.mark.parametrize("angles", [[0.6, 1.0, 1.4], [1.0, 1.0, 1.0]])
def test_round_plane_seed_values_are_closed_form(angles):
    sr, tl, gp, grid = setup(rotation_matrix(angles), round_sphere(3))
    for j in range(3):
        E = dual.energy(gp, dual.seed(gp, tl, j, grid))
        assert E == pytest.approx(dual.round_minimum(gp.p, grid.T, tl.values[j]), rel=1e-12)
