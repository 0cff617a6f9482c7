"""ODE-level checks of rotating orbits: integration, shooting refinement,
energy normalization, and a certificate that counts geometrically distinct
orbits.

Hamiltonians are duck-typed: anything with batched ``value(z)`` and
``grad(z)`` works (raw Hamiltonians and gauge problems alike).
"""
from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ContractError, DomainError, NumericalError
from .loops import build_grid, fit_rotating, orbit_distance
from .symplectic import symplectic_form

RTOL = 1e-12
ATOL = 1e-12


def _Q(sr_or_Q) -> np.ndarray:
    return np.asarray(getattr(sr_or_Q, "Q", sr_or_Q), dtype=float)


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    drift: float


def integrate(H, z0, T: float, t_eval=None, rtol: float = RTOL, atol: float = ATOL) -> Trajectory:
    """Solve z' = J∇H(z) on [0, T] (T may be negative) with DOP853.

    ``t_eval`` defaults to the two end points.  ``drift`` is the largest
    |H(z(t)) − H(z0)| over the returned points.
    """
    z0 = np.asarray(z0, dtype=float)
    J = symplectic_form(z0.size // 2)
    t_eval = np.array([0.0, T]) if t_eval is None else np.asarray(t_eval, dtype=float)
    if T == 0:
        z = np.repeat(z0[None], t_eval.size, axis=0)
        return Trajectory(t_eval, z, 0.0)
    sol = solve_ivp(lambda t, z: J @ H.grad(z), (0.0, float(T)), z0, method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise NumericalError(f"integration failed: {sol.message}")
    z = sol.y.T
    if not np.all(np.isfinite(z)):
        raise NumericalError("integration produced non-finite states")
    H0 = float(H.value(z0))
    drift = float(np.max(np.abs(H.value(z) - H0))) if z.size else 0.0
    return Trajectory(sol.t, z, drift)


def flow(H, z0, T: float, **kw) -> np.ndarray:
    return integrate(H, z0, T, **kw).z[-1]


def shooting_residual(H, sr_or_Q, z0, T: float, **kw) -> float:
    """|z(T; z0) − Q z0|."""
    z0 = np.asarray(z0, dtype=float)
    return float(np.linalg.norm(flow(H, z0, T, **kw) - _Q(sr_or_Q) @ z0))


@dataclass
class OrbitSolution:
    """Samples z(t_m), t_m = mT/N, of a (Q, T)-rotating orbit at energy d."""

    z: np.ndarray
    T: float
    d: float
    residual: float = math.nan
    drift: float = math.nan
    fingerprint: list = field(default_factory=list)
    source: str = "variational"
    failed: bool = False
    newton_steps: int = 0

    @property
    def N(self) -> int:
        return self.z.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N) * (self.T / self.N)


def assess(H, sr_or_Q, z, T: float, d: Optional[float] = None, source: str = "variational", sr=None,
           fp_rel: float = 1e-6) -> OrbitSolution:
    """Wrap samples as an :class:`OrbitSolution`, measuring residual, drift and fingerprint."""
    z = np.asarray(z, dtype=float)
    traj = integrate(H, z[0], T, t_eval=np.linspace(0.0, T, 65))
    res = float(np.linalg.norm(traj.z[-1] - _Q(sr_or_Q) @ z[0]))
    d = float(H.value(z[0])) if d is None else float(d)
    fp = fingerprint(z, sr, T, fp_rel) if sr is not None else []
    return OrbitSolution(z=z, T=float(T), d=d, residual=res, drift=traj.drift, fingerprint=fp, source=source)


# ---------------------------------------------------------------------------
# shooting refinement


def polish(H, sr_or_Q, orbit: OrbitSolution, level: Optional[float] = None, capture: float = 1e-2,
           target: float = 1e-10, max_iter: int = 25, fd_step: float = 1e-7, sr=None) -> OrbitSolution:
    """Gauss-Newton on F(z0, T) = (φ_T(z0) − Q z0, phase, H(z0) − level).

    The phase condition ⟨z0 − ẑ0, J∇H(ẑ0)⟩ = 0 fixes the time origin and the
    energy pin removes the drift along the family of orbits.  Returns a copy
    flagged ``failed`` (with the input samples) when the start lies outside the
    capture radius or Newton does not reach ``target``.
    """
    Q = _Q(sr_or_Q)
    z_hat = np.array(orbit.z[0], dtype=float)
    d = z_hat.size
    J = symplectic_form(d // 2)
    level = float(H.value(z_hat)) if level is None else float(level)
    scale = max(1.0, float(np.linalg.norm(z_hat)))
    tangent = J @ H.grad(z_hat)

    def F(x):
        z0, T = x[:d], x[d]
        zT = flow(H, z0, T)
        return np.concatenate([zT - Q @ z0, [tangent @ (z0 - z_hat), float(H.value(z0)) - level]]), zT

    x = np.concatenate([z_hat, [orbit.T]])
    Fx, zT = F(x)
    res = float(np.linalg.norm(Fx[:d]))
    if res > capture * scale:
        return replace(orbit, failed=True, residual=res)
    steps = 0
    while float(np.linalg.norm(Fx)) > target and steps < max_iter:
        z0, T = x[:d], x[d]
        Jac = np.zeros((d + 2, d + 1))
        h = fd_step * scale
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            Jac[:d, i] = (flow(H, z0 + e, T) - flow(H, z0 - e, T)) / (2 * h)
        Jac[:d, :d] -= Q
        Jac[:d, d] = J @ H.grad(zT)
        Jac[d, :d] = tangent
        Jac[d + 1, :d] = H.grad(z0)
        delta = np.linalg.lstsq(Jac, -Fx, rcond=None)[0]
        x_new = x + delta
        F_new, zT_new = F(x_new)
        steps += 1
        if not np.all(np.isfinite(F_new)) or x_new[d] <= 0:
            return replace(orbit, failed=True, newton_steps=steps)
        if np.linalg.norm(F_new) >= np.linalg.norm(Fx) and np.linalg.norm(Fx) <= 10 * target:
            break
        x, Fx, zT = x_new, F_new, zT_new
    if float(np.linalg.norm(Fx[:d])) > target:
        return replace(orbit, failed=True, newton_steps=steps, residual=float(np.linalg.norm(Fx[:d])))
    z0, T = x[:d], float(x[d])
    N = orbit.N
    t = np.arange(N + 1) * (T / N)
    traj = integrate(H, z0, T, t_eval=t)
    res = float(np.linalg.norm(traj.z[-1] - Q @ z0))
    fp = fingerprint(traj.z[:-1], sr, T) if sr is not None else orbit.fingerprint
    return OrbitSolution(z=traj.z[:-1], T=T, d=float(H.value(z0)), residual=res, drift=traj.drift,
                         fingerprint=fp, source="polished", failed=False, newton_steps=steps)


# ---------------------------------------------------------------------------
# energy normalization


def normalize_energy(gp, orbit: OrbitSolution) -> OrbitSolution:
    """Rescale an orbit of 𝓗 at level d to level 1/q: w = (qd)^{−1/q} z, T_w = (qd)^{(q−2)/q} T."""
    q = gp.q
    d = float(gp.value(orbit.z[0]))
    if not d > 0:
        raise DomainError(f"energy must be positive, got {d}")
    qd = q * d
    a = qd ** (-1.0 / q)
    return replace(orbit, z=a * orbit.z, T=qd ** ((q - 2.0) / q) * orbit.T, d=1.0 / q,
                   residual=a * orbit.residual if math.isfinite(orbit.residual) else orbit.residual)


# ---------------------------------------------------------------------------
# fingerprints and the distinctness certificate


def fingerprint(z, sr, T: float, rel: float = 1e-6) -> list:
    """Shift-invariant spectral signature [(plane, k, ω, |c|)] of sampled orbit
    z, keeping magnitudes above ``rel``·max.  The fixed-subspace offset appears
    as plane −1 with ω = 0 and magnitude |z₀|."""
    loop, offset = fit_rotating(z, sr, T)
    mags = np.abs(loop.coeffs)
    top = max(float(mags.max()), float(np.linalg.norm(offset)))
    cut = rel * top
    grid = loop.grid
    keep = np.flatnonzero(mags > cut)
    out = [(int(grid.plane[i]), int(grid.k[i]), float(grid.omega[i]), float(mags[i])) for i in keep]
    off = float(np.linalg.norm(offset))
    if off > cut:
        out.append((-1, 0, 0.0, off))
    return sorted(out, key=lambda e: (e[0], e[2]))


def fingerprint_gap(f1, f2, omega_tol: float = 1e-6) -> float:
    """ℓ² distance between fingerprints, matching entries by plane and frequency."""
    scale = max([abs(e[2]) for e in f1 + f2] + [1.0])
    used = set()
    total = 0.0
    for j, _, w, m in f1:
        match = None
        for idx, (j2, _, w2, m2) in enumerate(f2):
            if idx not in used and j2 == j and abs(w2 - w) <= omega_tol * scale:
                match = idx
                break
        if match is None:
            total += m * m
        else:
            used.add(match)
            total += (m - f2[match][3]) ** 2
    for idx, e in enumerate(f2):
        if idx not in used:
            total += e[3] ** 2
    return math.sqrt(total)


@dataclass(frozen=True)
class Certificate:
    count: int
    distinct: np.ndarray  # boolean decision matrix
    stage: np.ndarray  # 0 diagonal, 1 fingerprint, 2 orbit distance, 3 same (period mismatch)
    gaps: np.ndarray
    members: tuple

    def to_dict(self) -> dict:
        return {"count": int(self.count), "distinct": self.distinct.astype(int).tolist(),
                "stage": self.stage.astype(int).tolist(), "fingerprint_gap": self.gaps.tolist(),
                "members": list(self.members)}


def _max_pairwise_distinct(distinct: np.ndarray) -> tuple:
    m = distinct.shape[0]
    if m <= 16:
        for size in range(m, 0, -1):
            for combo in itertools.combinations(range(m), size):
                if all(distinct[a, b] for a, b in itertools.combinations(combo, 2)):
                    return combo
        return ()
    chosen = []
    for i in range(m):
        if all(distinct[i, j] for j in chosen):
            chosen.append(i)
    return tuple(chosen)


def distinctness_certificate(orbits, sr, fp_rel: float = 1e-6, dist_rel: float = 1e-4,
                             level_tol: float = 1e-6, period_rel: float = 1e-6, H=None) -> Certificate:
    """Lower bound on the number of geometrically distinct orbits.

    Pairs whose fingerprints differ by more than ``fp_rel``·max|c| are distinct.
    Otherwise, if the periods agree, both are fitted on a common grid and a
    minimal shift distance above ``dist_rel``·‖y‖ certifies them distinct.
    Agreeing fingerprints with different periods are conservatively counted
    as the same orbit.  The count is the largest pairwise-distinct subset.
    """
    orbits = list(orbits)
    m = len(orbits)
    if m == 0:
        return Certificate(0, np.zeros((0, 0), bool), np.zeros((0, 0), int), np.zeros((0, 0)), ())
    levels = np.array([float(H.value(o.z[0])) if H is not None else o.d for o in orbits])
    if np.max(np.abs(levels - levels[0])) > level_tol * (1.0 + abs(levels[0])):
        raise ContractError(f"orbits lie on different energy levels: {levels.tolist()}")
    fps = [o.fingerprint or fingerprint(o.z, sr, o.T, fp_rel) for o in orbits]
    distinct = np.zeros((m, m), dtype=bool)
    stage = np.zeros((m, m), dtype=int)
    gaps = np.zeros((m, m))
    for a, b in itertools.combinations(range(m), 2):
        top = max(e[3] for e in fps[a] + fps[b])
        gap = fingerprint_gap(fps[a], fps[b])
        gaps[a, b] = gaps[b, a] = gap
        if gap > fp_rel * top:
            dec, st = True, 1
        elif abs(orbits[a].T - orbits[b].T) > period_rel * max(orbits[a].T, orbits[b].T):
            dec, st = False, 3
        else:
            T = 0.5 * (orbits[a].T + orbits[b].T)
            N = min(orbits[a].N, orbits[b].N)
            K = (N - 1) // 2
            y1, o1 = fit_rotating(orbits[a].z, sr, T, K)
            y2, o2 = fit_rotating(orbits[b].z, sr, T, K)
            dist = math.hypot(orbit_distance(y1, y2), math.sqrt(T) * float(np.linalg.norm(o1 - o2)))
            size = max(math.hypot(y1.norm(), math.sqrt(T) * float(np.linalg.norm(o1))),
                       math.hypot(y2.norm(), math.sqrt(T) * float(np.linalg.norm(o2))))
            dec, st = dist > dist_rel * size, 2
        distinct[a, b] = distinct[b, a] = dec
        stage[a, b] = stage[b, a] = st
    members = _max_pairwise_distinct(distinct)
    return Certificate(len(members), distinct, stage, gaps, members)


# ---------------------------------------------------------------------------
# orbit files


def orbit_to_csv(orbit: OrbitSolution) -> str:
    """CSV with header ``t,z1,...,z2n``; '.' decimal separator, 17 significant digits."""
    buf = io.StringIO()
    d = orbit.z.shape[1]
    buf.write(",".join(["t"] + [f"z{i + 1}" for i in range(d)]) + "\n")
    for t, row in zip(orbit.times, orbit.z):
        buf.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")
    return buf.getvalue()


def orbit_from_csv(text: str, T: float, d: float = math.nan) -> OrbitSolution:
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    if header[0].strip() != "t" or len(header) < 3:
        raise ValueError("orbit CSV must start with a 't,z1,...' header row")
    data = np.array([[float(x) for x in line.split(",")] for line in lines[1:]], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError("orbit CSV rows do not match the header")
    return OrbitSolution(z=data[:, 1:], T=float(T), d=float(d), source="file")


def trajectory_residual(H, orbit: OrbitSolution) -> float:
    """Largest deviation of the stored samples from the integrated flow of their first row."""
    traj = integrate(H, orbit.z[0], orbit.T * (orbit.N - 1) / orbit.N, t_eval=orbit.times)
    return float(np.max(np.linalg.norm(traj.z - orbit.z, axis=1)))
