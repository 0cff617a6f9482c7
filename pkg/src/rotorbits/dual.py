"""Dual action functional on rotating loops and its critical points.

E(y) = ∫₀ᵀ H*(y(t)) dt − ½ ∫₀ᵀ ⟨y, Ky⟩ dt, discretized with the N-point
trapezoid rule (exact for trigonometric polynomials of low enough degree).
``gradient`` returns the exact L² gradient of that discrete functional.
Critical loops give orbits of the gauge Hamiltonian through z = ∇H*(y).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, NumericalError, StalledError
from .loops import (TWO_PI, FrequencyGrid, RotatingLoop, analyze, apply_K, default_samples, pairing,
                    quadratic_form, synthesize)
from .symplectic import TildeAngles, fixed_projection

EPS = np.finfo(float).eps


def _samples(grid: FrequencyGrid, N: Optional[int]) -> int:
    return default_samples(grid) if N is None else int(N)


def energy_and_gradient(gp, y: RotatingLoop, N: Optional[int] = None):
    """(E(y), ∇E(y)); ``gp`` only needs ``conjugate(samples) -> (H*, ∇H*)``."""
    grid = y.grid
    N = _samples(grid, N)
    ys = synthesize(y, N)
    Hs, dHs = gp.conjugate(ys)
    E = grid.T / N * float(np.sum(Hs)) - 0.5 * quadratic_form(y)
    g = analyze(dHs, grid) - apply_K(y)
    if not math.isfinite(E) or not np.all(np.isfinite(g.coeffs)):
        raise NumericalError("non-finite dual action", best=y)
    return E, g


def energy(gp, y: RotatingLoop, N: Optional[int] = None) -> float:
    grid = y.grid
    N = _samples(grid, N)
    Hs, _ = gp.conjugate(synthesize(y, N))
    E = grid.T / N * float(np.sum(Hs)) - 0.5 * quadratic_form(y)
    if not math.isfinite(E):
        raise NumericalError("non-finite dual action", best=y)
    return E


def gradient(gp, y: RotatingLoop, N: Optional[int] = None) -> RotatingLoop:
    return energy_and_gradient(gp, y, N)[1]


def conjugate_integral(gp, y: RotatingLoop, N: Optional[int] = None) -> float:
    """∫₀ᵀ H*(y(t)) dt by the trapezoid rule."""
    N = _samples(y.grid, N)
    Hs, _ = gp.conjugate(synthesize(y, N))
    return y.grid.T / N * float(np.sum(Hs))


# ---------------------------------------------------------------------------
# seeds


def critical_scaling(gp, z: RotatingLoop, N: Optional[int] = None) -> float:
    """λ(z) > 0 solving p λᵖ ∫H*(z) = λ² ∫⟨z, Kz⟩."""
    A = conjugate_integral(gp, z, N)
    B = quadratic_form(z)
    if A <= 0:
        raise DomainError("∫H*(z) must be positive for a valid gauge")
    if B <= 0:
        raise DomainError("seed loop has non-positive ∫⟨z, Kz⟩; no critical scaling exists")
    return (B / (gp.p * A)) ** (1.0 / (gp.p - 2.0))


def lowest_mode(grid: FrequencyGrid, plane: int) -> int:
    """k of the smallest positive frequency θ̃_j/T in a plane."""
    return 0 if grid.theta[plane] != 0.0 else 1


def seed_loop(grid: FrequencyGrid, tilde: TildeAngles, j: int) -> RotatingLoop:
    """z(t) = Q(t)ξ_j for the j-th smallest θ̃ (0-based), unit mean square."""
    plane = int(tilde.order[j])
    return RotatingLoop.mode(grid, plane, lowest_mode(grid, plane), 1.0 / math.sqrt(2.0))


def seed(gp, tilde: TildeAngles, j: int, grid: FrequencyGrid, N: Optional[int] = None) -> RotatingLoop:
    z = seed_loop(grid, tilde, j)
    return critical_scaling(gp, z, N) * z


def direction_loop(grid: FrequencyGrid, xi) -> RotatingLoop:
    """z(t) = Q(t)ξ for an arbitrary ξ ∈ R²ⁿ (not normalized)."""
    xi = np.asarray(xi, dtype=float)
    alpha = grid.rotation.frames.conj().T @ xi
    coeffs = np.zeros(grid.size, dtype=complex)
    for plane in range(grid.n):
        coeffs[grid.index(plane, lowest_mode(grid, plane))] = alpha[plane]
    return RotatingLoop(grid, coeffs)


def seed_from_direction(gp, grid: FrequencyGrid, xi, N: Optional[int] = None) -> RotatingLoop:
    xi = np.asarray(xi, dtype=float)
    z = direction_loop(grid, xi / np.linalg.norm(xi))
    return critical_scaling(gp, z, N) * z


def subperiod_modes(grid: FrequencyGrid, l_max: int = 8):
    """Per plane, the smallest positive-frequency mode whose minimal rotating
    period is T/ℓ for some integer 2 ≤ ℓ ≤ l_max.  Returns [(plane, k, ℓ)]."""
    out = []
    for plane, th in enumerate(grid.theta):
        best = None
        for k in range(0, grid.K_max + 1):
            w = TWO_PI * k + th
            if w <= 0:
                continue
            for ell in range(2, l_max + 1):
                m = (w / ell - th) / TWO_PI
                if abs(m - round(m)) <= 1e-9:
                    best = (plane, k, ell)
                    break
            if best is not None:
                break
        if best is not None:
            out.append(best)
    return out


def subperiod_seeds(gp, grid: FrequencyGrid, l_max: int = 8, N: Optional[int] = None):
    seeds = []
    for plane, k, ell in subperiod_modes(grid, l_max):
        z = RotatingLoop.mode(grid, plane, k, 1.0 / math.sqrt(2.0))
        seeds.append((critical_scaling(gp, z, N) * z, ell))
    return seeds


def rotating_subperiod(y: RotatingLoop, l_max: int = 8, tol: float = 1e-8) -> int:
    """Largest ℓ ≤ l_max with y(t + T/ℓ) = Q y(t), detected from the spectral
    support; 1 when no proper sub-period exists."""
    grid = y.grid
    mass = np.abs(y.coeffs) ** 2
    total = float(mass.sum())
    if total == 0.0:
        return 1
    w = TWO_PI * grid.k + grid.theta[grid.plane]
    for ell in range(l_max, 1, -1):
        m = (w / ell - grid.theta[grid.plane]) / TWO_PI
        ok = np.abs(m - np.round(m)) <= 1e-9
        if float(mass[~ok].sum()) <= tol * total:
            return ell
    return 1


# ---------------------------------------------------------------------------
# descent


@dataclass(frozen=True)
class DescentOptions:
    gtol: float = 1e-9
    max_iter: int = 5000
    c1: float = 1e-4
    backtrack: float = 0.5
    alpha0: float = 1.0
    max_backtracks: int = 60
    N: Optional[int] = None
    norm_floor: float = 1e-8
    initial_step: str = "bb"  # "bb" (Barzilai-Borwein trial step) or "fixed" (always alpha0)


@dataclass
class DualState:
    y: RotatingLoop
    E: float
    grad: RotatingLoop
    steps: int = 0
    last_step: float = 0.0
    grad_norm: float = 0.0
    N: int = 0
    history: list = field(default_factory=list)
    below_floor: bool = False
    converged: bool = False


def _state(gp, y, N, **kw) -> DualState:
    E, g = energy_and_gradient(gp, y, N)
    return DualState(y=y, E=E, grad=g, grad_norm=g.norm(), N=N, **kw)


def descend(gp, y0: RotatingLoop, opts: DescentOptions = DescentOptions()) -> DualState:
    """Steepest descent with Armijo backtracking in the L² metric.

    Each line search starts from ``alpha0`` or, with ``initial_step="bb"``, from
    the Barzilai-Borwein step ⟨s, s⟩/⟨s, Δg⟩ of the previous iteration.

    Near round-off the Armijo decrease is no longer measurable.  A step is then
    accepted when E stays flat to a few ulps; among those, the one with the
    smallest ‖∇E‖ (at least 0.1% below the current value) is taken.
    """
    if y0.norm() <= 0:
        raise DomainError("descent needs a nonzero starting loop")
    N = _samples(y0.grid, opts.N)
    st = _state(gp, y0, N)
    st.history.append(st.E)
    floor = opts.norm_floor * y0.norm()
    if opts.initial_step not in ("bb", "fixed"):
        raise ValueError(f"unknown initial_step {opts.initial_step!r}")
    trial = opts.alpha0
    while st.grad_norm > opts.gtol and st.steps < opts.max_iter:
        g2 = st.grad_norm ** 2
        alpha = trial
        accepted = None
        best = None  # round-off regime: smallest gradient norm with E flat to a few ulps
        noise = 8 * EPS * (1 + abs(st.E))
        for _ in range(opts.max_backtracks):
            y_new = st.y - alpha * st.grad
            E_new, g_new = energy_and_gradient(gp, y_new, N)
            if E_new <= st.E - opts.c1 * alpha * g2:
                accepted = (y_new, E_new, g_new, alpha)
                break
            if E_new <= st.E + noise:
                gn = g_new.norm()
                if gn <= (1.0 - 1e-3) * st.grad_norm and (best is None or gn < best[4]):
                    best = (y_new, E_new, g_new, alpha, gn)
                elif best is not None:
                    break
            alpha *= opts.backtrack
        if accepted is None and best is not None:
            accepted = best[:4]
        if accepted is None:
            raise StalledError(
                f"line search failed after {st.steps} steps (‖∇E‖ = {st.grad_norm:.3e})", best=st)
        y_new, E_new, g_new, alpha = accepted
        trial = opts.alpha0
        if opts.initial_step == "bb":
            s_, dg = y_new - st.y, g_new - st.grad
            curv = pairing(s_, dg)
            if curv > 0:
                trial = min(max(pairing(s_, s_) / curv, 1e-6 * opts.alpha0), 1e6 * opts.alpha0)
        st = DualState(y=y_new, E=E_new, grad=g_new, steps=st.steps + 1, last_step=alpha,
                       grad_norm=g_new.norm(), N=N, history=st.history, below_floor=st.below_floor)
        st.history.append(E_new)
        if y_new.norm() < floor:
            st.below_floor = True
    st.converged = st.grad_norm <= opts.gtol
    return st


# ---------------------------------------------------------------------------
# orbit recovery


@dataclass
class RecoveredOrbit:
    z: np.ndarray
    z0: np.ndarray
    residual: float
    T: float
    d: float
    E: float
    y: RotatingLoop
    subperiod: int = 1

    @property
    def times(self) -> np.ndarray:
        N = self.z.shape[0]
        return np.arange(N) * (self.T / N)


def recover(gp, state: DualState, rtol: float = 1e-6) -> RecoveredOrbit:
    """z = ∇H*(y); z₀ = 𝒫(mean(z − Ky)); residual = max |z − Ky − z₀|."""
    y = state.y
    N = state.N or default_samples(y.grid)
    ys = synthesize(y, N)
    _, z = gp.conjugate(ys)
    diff = z - synthesize(apply_K(y), N)
    z0, _ = fixed_projection(y.grid.rotation, diff.mean(axis=0))
    residual = float(np.max(np.linalg.norm(diff - z0, axis=1)))
    if residual > rtol:
        warnings.warn(f"recovered loop is not critical: residual {residual:.3e} > {rtol:g}", RuntimeWarning)
    d = float(gp.value(z[0]))
    return RecoveredOrbit(z=z, z0=z0, residual=residual, T=y.grid.T, d=d, E=state.E, y=y,
                          subperiod=rotating_subperiod(y))


# ---------------------------------------------------------------------------
# value inequalities


def lower_constant(p: float, T: float, theta1: float) -> float:
    """c₀ = (1/p − ½) b^{p/(p−2)} T^{2/(2−p)} with b = T²/θ̃₁."""
    b = T * T / theta1
    return (1.0 / p - 0.5) * b ** (p / (p - 2.0)) * T ** (2.0 / (2.0 - p))


def round_minimum(p: float, T: float, theta1: float) -> float:
    """Minimum of E for 𝓗 = |z|^q/q: (1/p − ½) T (T/θ̃₁)^{p/(p−2)}."""
    return (1.0 / p - 0.5) * T * (T / theta1) ** (p / (p - 2.0))


def value_checks(p: float, full_values, sub_values, seed_values, tilde: TildeAngles,
                 r_in: float, T: float) -> list:
    """Inequality ledger as a list of dicts with status pass / fail / skipped."""
    full_values = [float(v) for v in full_values]
    sub_values = [float(v) for v in sub_values]
    seed_values = [float(v) for v in seed_values]
    b = T * T / tilde.smallest
    c0 = lower_constant(p, T, tilde.smallest)
    lower = c0 * r_in ** (2 * p / (2 - p))
    ledger = [
        {"name": "b", "value": b},
        {"name": "c0", "value": c0, "check": "c0 < 0", "status": "pass" if c0 < 0 else "fail"},
    ]
    if not full_values:
        for name in ("m_negative", "m_lower_bound", "m_vs_subperiod", "seed_bound"):
            ledger.append({"name": name, "status": "skipped", "reason": "no full-period solution"})
        return ledger
    m = min(full_values)
    slack = 1e-6 * (1.0 + abs(m))
    ledger.append({"name": "m_negative", "lhs": m, "rhs": 0.0, "relation": "<",
                   "status": "pass" if m < 0 else "fail"})
    ledger.append({"name": "m_lower_bound", "lhs": m, "rhs": lower, "relation": ">=", "slack": slack,
                   "status": "pass" if m >= lower - slack else "fail"})
    if sub_values:
        m_star = min(sub_values)
        rhs = 2.0 ** (p / (p - 2.0)) * m_star
        ledger.append({"name": "m_vs_subperiod", "lhs": m, "rhs": rhs, "m_star": m_star, "relation": "<=",
                       "slack": slack, "status": "pass" if m <= rhs + slack else "fail"})
    else:
        ledger.append({"name": "m_vs_subperiod", "status": "skipped", "reason": "no sub-period solution"})
    if seed_values:
        sup = max(seed_values)
        rhs = 2.0 ** (p / (2.0 - p)) * lower
        ledger.append({"name": "seed_bound", "lhs": sup, "rhs": rhs, "relation": "<",
                       "status": "pass" if sup < rhs else "fail"})
    else:
        ledger.append({"name": "seed_bound", "status": "skipped", "reason": "no seeds evaluated"})
    return ledger
