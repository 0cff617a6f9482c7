"""Convex Hamiltonians, their q-homogeneous gauge and its Legendre transform.

The gauge Hamiltonian of a strictly convex level set S = H⁻¹(β) is
𝓗(z) = G(z)^q / q with G the Minkowski gauge of C = {H ≤ β} (G = 1 on S).
Its conjugate is H*(y) = h_C(y)^p / p with h_C the support function of C and
p = q/(q − 1).

All evaluators work on batches: arrays of shape (..., 2n).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm as _normal, qmc

from .errors import (ConvexityError, DomainError, InfeasibleError, NumericalError,
                     UnboundedSurfaceError, ValidationError)
from .loops import evaluate, fit_rotating, sample_times

TOL_ROOT = 1e-12
TOL_SYM = 1e-8
RHO_MAX = 1e8


@dataclass(frozen=True, eq=False)
class RawHamiltonian:
    """Black-box Hamiltonian with level ``beta``.

    ``hess`` is optional (finite differences of ``grad`` otherwise).  When
    ``quadratic`` is set, H(z) = ½ zᵀ A z and closed forms are used for the
    radial gauge and the support function.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    beta: float
    dim: int
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quadratic: Optional[np.ndarray] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def hessian(self, z: np.ndarray) -> np.ndarray:
        if self.hess is not None:
            return self.hess(z)
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        h = 1e-5 * (1.0 + np.linalg.norm(z, axis=-1, keepdims=True))
        cols = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            cols.append((self.grad(z + h * e) - self.grad(z - h * e)) / (2 * h))
        Hm = np.stack(cols, axis=-1)
        return 0.5 * (Hm + np.swapaxes(Hm, -1, -2))

    def without_closed_form(self) -> "RawHamiltonian":
        return RawHamiltonian(self.value, self.grad, self.beta, self.dim, self.hess, None, self.name, self.params)


def quadratic_hamiltonian(A, beta: float = 0.5, name: str = "quadratic", params=None) -> RawHamiltonian:
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    if np.linalg.eigvalsh(A).min() <= 0:
        raise ConvexityError("quadratic form is not positive definite")
    return RawHamiltonian(
        value=lambda z: 0.5 * np.einsum("...i,ij,...j->...", z, A, z),
        grad=lambda z: z @ A,
        hess=lambda z: np.broadcast_to(A, np.shape(z)[:-1] + A.shape),
        beta=float(beta),
        dim=A.shape[0],
        quadratic=A,
        name=name,
        params=params or {},
    )


def ellipsoid(axes, beta: float = 0.5, per_coordinate: bool = False) -> RawHamiltonian:
    """H = ½⟨z, diag(a)⁻² z⟩.

    By default ``axes`` has length n and each a_j is shared by q_j and p_j, which
    makes H invariant under every plane rotation.  ``per_coordinate=True`` takes
    2n axes as given.
    """
    a = np.asarray(axes, dtype=float)
    if a.ndim != 1 or np.any(a <= 0):
        raise ValueError("axes must be a positive 1-d array")
    if per_coordinate and a.size % 2:
        raise ValueError("per-coordinate axes need an even count")
    full = a if per_coordinate else np.concatenate([a, a])
    return quadratic_hamiltonian(np.diag(full ** -2.0), beta, name="ellipsoid",
                                 params={"axes": a.tolist(), "beta": float(beta),
                                         "per_coordinate": bool(per_coordinate)})


def round_sphere(n: int, beta: float = 0.5) -> RawHamiltonian:
    return quadratic_hamiltonian(np.eye(2 * n), beta, name="round", params={"n": n, "beta": float(beta)})


def plane_quartic(omega, eps: float, beta: float = 0.5) -> RawHamiltonian:
    """H = ½ Σ ω_j ρ_j² + ε Σ ρ_j⁴ with ρ_j² = q_j² + p_j²; invariant under plane rotations."""
    w = np.asarray(omega, dtype=float)
    n = w.size
    if np.any(w <= 0) or eps < 0:
        raise ConvexityError("plane_quartic needs ω_j > 0 and ε ≥ 0")

    def rho2(z):
        return z[..., :n] ** 2 + z[..., n:] ** 2

    def value(z):
        r2 = rho2(z)
        return 0.5 * np.sum(w * r2, axis=-1) + eps * np.sum(r2 ** 2, axis=-1)

    def grad(z):
        f = w + 4.0 * eps * rho2(z)
        return z * np.concatenate([f, f], axis=-1)

    def hess(z):
        z = np.asarray(z, dtype=float)
        f = w + 4.0 * eps * rho2(z)
        out = np.zeros(z.shape[:-1] + (2 * n, 2 * n))
        idx = np.arange(2 * n)
        out[..., idx, idx] = np.concatenate([f, f], axis=-1)
        for j in range(n):
            ij = (j, j + n)
            for a in ij:
                for b in ij:
                    out[..., a, b] += 8.0 * eps * z[..., a] * z[..., b]
        return out

    return RawHamiltonian(value, grad, float(beta), 2 * n, hess=hess, name="plane-quartic",
                          params={"omega": w.tolist(), "eps": float(eps), "beta": float(beta)})


def check_invariance(raw: RawHamiltonian, Q, samples: int = 1000, tol: float = TOL_SYM, rng=0) -> float:
    """Sampled check of H(Qz) = H(z) and ∇H ≠ 0 on S; returns the worst relative defect."""
    rng = np.random.default_rng(rng)
    Q = np.asarray(Q, dtype=float)
    zeta = rng.normal(size=(samples, raw.dim))
    zeta /= np.linalg.norm(zeta, axis=1, keepdims=True)
    zs = radial_gauge(raw, zeta)[:, None] * zeta
    z = zs * rng.uniform(0.5, 1.5, size=(samples, 1))
    Hz = raw.value(z)
    defect = float(np.max(np.abs(raw.value(z @ Q.T) - Hz) / (1.0 + np.abs(Hz))))
    if defect > tol:
        raise ValidationError(f"Hamiltonian is not Q-invariant: sampled defect {defect:.3e}", sym_defect=defect)
    gnorm = np.linalg.norm(raw.grad(zs), axis=1)
    if np.any(gnorm <= 1e-12):
        raise ValidationError("∇H vanishes on the sampled energy surface")
    return defect


def radial_gauge(raw: RawHamiltonian, zeta) -> np.ndarray:
    """r(ζ) with H(r(ζ) ζ) = β along each unit direction ζ (batched)."""
    zeta = np.asarray(zeta, dtype=float)
    beta = raw.beta
    if raw.quadratic is not None:
        qf = np.einsum("...i,ij,...j->...", zeta, raw.quadratic, zeta)
        return np.sqrt(2.0 * beta / qf)
    shape = zeta.shape[:-1]
    Z = zeta.reshape(-1, zeta.shape[-1])
    m = Z.shape[0]
    if raw.value(np.zeros(raw.dim)) >= beta:
        raise DomainError("H(0) must lie below the level β")

    lo = np.zeros(m)
    hi = np.ones(m)
    prev = np.full(m, float(raw.value(np.zeros(raw.dim))))
    val = raw.value(hi[:, None] * Z)
    warned = False
    while True:
        below = val < beta
        if not below.any():
            break
        if not warned and np.any(val[below] < prev[below] - 1e-14 * (1 + abs(beta))):
            warnings.warn("H is not monotone along a ray; the level set may not be convex", RuntimeWarning)
            warned = True
        lo[below] = hi[below]
        prev[below] = val[below]
        hi[below] *= 2.0
        if np.any(hi > RHO_MAX):
            raise UnboundedSurfaceError(f"no crossing of level β={beta} below ρ={RHO_MAX:g}")
        val[below] = raw.value(hi[below, None] * Z[below])

    rho = 0.5 * (lo + hi)
    active = np.ones(m, dtype=bool)
    for _ in range(200):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x = rho[idx, None] * Z[idx]
        f = raw.value(x) - beta
        df = np.einsum("ij,ij->i", raw.grad(x), Z[idx])
        neg = f < 0
        lo[idx[neg]] = rho[idx[neg]]
        hi[idx[~neg]] = rho[idx[~neg]]
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = -f / df
        step = rho[idx] + newton
        tiny = np.abs(newton) <= 4e-16 * rho[idx]
        bad = ~np.isfinite(step) | (step < lo[idx]) | (step > hi[idx])
        step[bad] = 0.5 * (lo[idx[bad]] + hi[idx[bad]])
        done = (np.abs(f) <= TOL_ROOT * max(1.0, abs(beta))) & (tiny | (f == 0))
        done |= (hi[idx] - lo[idx]) <= 4e-16 * hi[idx]
        rho[idx] = np.where(done, rho[idx], step)
        active[idx[done]] = False
    return rho.reshape(shape)


@dataclass(frozen=True)
class PinchEstimate:
    r_in: float
    R_out: float

    @property
    def ratio(self) -> float:
        return self.R_out / self.r_in

    @property
    def pinched(self) -> bool:
        return self.R_out < math.sqrt(2.0) * self.r_in


def pinch_estimate(raw, samples: int = 1024, seed: int = 0, exact_quadratic: bool = True) -> PinchEstimate:
    """Inner / outer radii of C from quasi-random directions with local refinement."""
    raw = getattr(raw, "raw", raw)
    d = raw.dim
    if exact_quadratic and raw.quadratic is not None:
        ev = np.linalg.eigvalsh(raw.quadratic)
        return PinchEstimate(math.sqrt(2 * raw.beta / ev[-1]), math.sqrt(2 * raw.beta / ev[0]))
    m = 1 << max(4, int(math.ceil(math.log2(max(samples, 16)))))
    u = qmc.Sobol(d, scramble=True, seed=seed).random(m)
    zeta = _normal.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    zeta = np.vstack([zeta, np.eye(d), -np.eye(d)])
    zeta /= np.linalg.norm(zeta, axis=1, keepdims=True)
    r = radial_gauge(raw, zeta)

    def refine(sign):
        def f(v):
            nv = np.linalg.norm(v)
            return sign * float(radial_gauge(raw, (v / nv)[None])[0])

        cand = np.argsort(sign * r)[:4]
        values = []
        for i in cand:
            res = minimize(f, zeta[i], method="L-BFGS-B",
                           options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
            values.append(min(float(res.fun), sign * float(r[i])))
        return sign * min(values)

    return PinchEstimate(refine(1.0), refine(-1.0))


@dataclass(frozen=True, eq=False)
class GaugeProblem:
    raw: RawHamiltonian
    q: float
    r_in: float
    R_out: float
    tol_newton: float = 1e-14
    max_newton: int = 60

    def __post_init__(self):
        if not 1.0 < self.q < 2.0:
            raise DomainError(f"q must lie in (1, 2), got {self.q}")

    @property
    def p(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def dim(self) -> int:
        return self.raw.dim

    def gauge(self, z) -> np.ndarray:
        """Minkowski gauge G(z) = |z| / r(z/|z|) (G = 1 on S)."""
        z = np.asarray(z, dtype=float)
        raw = self.raw
        if raw.quadratic is not None:
            return np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", z, raw.quadratic, z), 0.0) / (2 * raw.beta))
        nz = np.linalg.norm(z, axis=-1)
        out = np.zeros_like(nz)
        nzm = nz > 0
        out[nzm] = nz[nzm] / radial_gauge(raw, z[nzm] / nz[nzm, None])
        return out

    def value_grad(self, z):
        return gauge_eval(self, z)

    def value(self, z):
        return self.gauge(z) ** self.q / self.q

    def grad(self, z):
        return gauge_eval(self, z)[1]

    def conjugate(self, y):
        return legendre(self, y)


def gauge_eval(gp: GaugeProblem, z):
    """(𝓗(z), ∇𝓗(z)) with 𝓗 = G^q/q and ∇G(z) = ∇H(z_S)/⟨z_S, ∇H(z_S)⟩, z_S = z/G(z)."""
    z = np.asarray(z, dtype=float)
    if np.any(np.linalg.norm(z, axis=-1) == 0.0):
        raise DomainError("∇𝓗 is requested at z = 0")
    G = gp.gauge(z)
    zs = z / G[..., None]
    gH = gp.raw.grad(zs)
    denom = np.einsum("...i,...i->...", zs, gH)
    if np.any(denom <= 0):
        raise ConvexityError("⟨z_S, ∇H(z_S)⟩ ≤ 0: surface is not star-shaped about 0")
    gradG = gH / denom[..., None]
    return G ** gp.q / gp.q, (G ** (gp.q - 1.0))[..., None] * gradG


def _support_point(raw: RawHamiltonian, y: np.ndarray, tol: float, max_iter: int):
    """Maximizer of ⟨x, y⟩ over S for nonzero rows y (m, d) by Newton on the KKT system."""
    m, d = y.shape
    if raw.quadratic is not None:
        Ainv_y = np.linalg.solve(raw.quadratic, y.T).T
        s = np.sqrt(np.einsum("ij,ij->i", y, Ainv_y))
        return math.sqrt(2 * raw.beta) * Ainv_y / s[:, None]
    beta = raw.beta
    yn = np.linalg.norm(y, axis=1)
    zeta = y / yn[:, None]
    x = radial_gauge(raw, zeta)[:, None] * zeta
    g = raw.grad(x)
    mu = np.einsum("ij,ij->i", x, y) / np.einsum("ij,ij->i", x, g)

    def resid(x, mu):
        g = raw.grad(x)
        F1 = y - mu[:, None] * g
        F2 = raw.value(x) - beta
        r = np.sqrt(np.sum(F1 ** 2, axis=1) / yn ** 2 + (F2 / max(abs(beta), 1e-300)) ** 2)
        return r, g, F1, F2

    res, g, F1, F2 = resid(x, mu)
    active = res > tol
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Hx = raw.hessian(x[idx])
        k = idx.size
        Jac = np.zeros((k, d + 1, d + 1))
        Jac[:, :d, :d] = -mu[idx, None, None] * Hx
        Jac[:, :d, d] = -g[idx]
        Jac[:, d, :d] = g[idx]
        rhs = -np.concatenate([F1[idx], F2[idx, None]], axis=1)
        try:
            delta = np.linalg.solve(Jac, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular KKT system in support-function solve: {exc}", best=x) from exc
        t = np.ones(k)
        for _halving in range(30):
            xt = x[idx] + t[:, None] * delta[:, :d]
            mt = mu[idx] + t * delta[:, d]
            gt = raw.grad(xt)
            F1t = y[idx] - mt[:, None] * gt
            F2t = raw.value(xt) - beta
            rt = np.sqrt(np.sum(F1t ** 2, axis=1) / yn[idx] ** 2 + (F2t / max(abs(beta), 1e-300)) ** 2)
            ok = np.isfinite(rt) & (rt <= res[idx] * (1 - 1e-4 * t) + 1e-15)
            if ok.all():
                break
            t[~ok] *= 0.5
        stuck = ~ok
        upd = idx[ok]
        x[upd], mu[upd], g[upd], F1[upd], F2[upd] = xt[ok], mt[ok], gt[ok], F1t[ok], F2t[ok]
        step_small = np.linalg.norm(delta[:, :d], axis=1) * t <= 1e-15 * np.linalg.norm(x[idx], axis=1)
        res[upd] = rt[ok]
        conv = (res[idx] <= tol) | step_small | stuck
        active[idx[conv]] = False
    if np.any(res > 1e-8):
        raise NumericalError(f"support-function solve did not converge (residual {res.max():.3e})", best=x)
    return x


def legendre(gp: GaugeProblem, y):
    """(H*(y), ∇H*(y)) for the gauge Hamiltonian: H* = h_C^p/p, ∇H* = h_C^{p−1} x_max."""
    y = np.asarray(y, dtype=float)
    shape = y.shape
    Y = y.reshape(-1, shape[-1])
    vals = np.zeros(Y.shape[0])
    grads = np.zeros_like(Y)
    nz = np.any(Y != 0.0, axis=1)
    if nz.any():
        x = _support_point(gp.raw, Y[nz], gp.tol_newton, gp.max_newton)
        h = np.einsum("ij,ij->i", x, Y[nz])
        p = gp.p
        vals[nz] = h ** p / p
        grads[nz] = (h ** (p - 1.0))[:, None] * x
    return vals.reshape(shape[:-1]), grads.reshape(shape)


@dataclass(frozen=True)
class BoundsCheck:
    passed: bool
    worst_margin: float
    counterexample: Optional[np.ndarray]


def legendre_bounds_check(gp: GaugeProblem, trials: int = 1000, rng=0, tol: float = 1e-9) -> BoundsCheck:
    """Check rᵖ|y|ᵖ/p ≤ H*(y) ≤ Rᵖ|y|ᵖ/p on random y.

    Margins are measured relative to |y|ᵖ/p, i.e. as (H*·p/|y|ᵖ − rᵖ) and (Rᵖ − H*·p/|y|ᵖ).
    """
    rng = np.random.default_rng(rng)
    y = rng.normal(size=(trials, gp.dim)) * 10.0 ** rng.uniform(-2, 1, size=(trials, 1))
    Hs, _ = legendre(gp, y)
    p = gp.p
    scaled = Hs * p / np.linalg.norm(y, axis=1) ** p
    margins = np.minimum(scaled - gp.r_in ** p, gp.R_out ** p - scaled)
    i = int(np.argmin(margins))
    worst = float(margins[i])
    passed = worst >= -tol
    return BoundsCheck(passed, worst, None if passed else y[i])


def kappa(gp: GaugeProblem, z, tol: float = 1e-8, surface_tol: float = 1e-6) -> np.ndarray:
    """κ(z) with ∇H(z) = κ(z) ∇𝓗(z) on S."""
    z = np.asarray(z, dtype=float)
    raw = gp.raw
    off = np.abs(raw.value(z) - raw.beta)
    if np.any(off > surface_tol * (1.0 + abs(raw.beta))):
        raise DomainError(f"point(s) off the energy surface by {off.max():.3e}")
    gH = raw.grad(z)
    _, gG = gauge_eval(gp, z)
    k = np.einsum("...i,...i->...", gH, gG) / np.einsum("...i,...i->...", gG, gG)
    resid = np.linalg.norm(gH - k[..., None] * gG, axis=-1) / np.linalg.norm(gH, axis=-1)
    if np.any(resid > tol):
        raise ValidationError(f"∇H is not proportional to ∇𝓗 (residual {resid.max():.3e})", residual=float(resid.max()))
    return k


def reparametrize(gp: GaugeProblem, sr, samples, T_tilde: float, N_out: int | None = None):
    """Turn an 𝓗-orbit on S (rotating period T̃) into an orbit of the raw H.

    With s' = κ(z̃(s)), t = h(s) = ∫₀ˢ dτ/κ(z̃(τ)); the raw orbit is z(t) = z̃(s(t))
    with rotating period T = h(T̃).  Returns (samples on t_m = mT/N_out, T).
    """
    samples = np.asarray(samples, dtype=float)
    N = samples.shape[0]
    N_out = N if N_out is None else int(N_out)
    kap = kappa(gp, samples)
    if np.any(kap <= 0):
        raise DomainError("κ must be positive along the orbit")
    inv = 1.0 / kap
    coef = np.fft.fft(inv) / N
    nu = 2.0 * np.pi * np.fft.fftfreq(N, d=T_tilde / N)
    mean = float(coef[0].real)
    osc = nu != 0.0
    a, w = coef[osc], nu[osc]

    def h(s):
        e = np.exp(1j * np.outer(s, w))
        return mean * s + np.real((e - 1.0) @ (a / (1j * w)))

    def dh(s):
        return mean + np.real(np.exp(1j * np.outer(s, w)) @ a)

    T = mean * T_tilde
    t = sample_times(T, N_out)
    s = t / mean
    for _ in range(60):
        step = (h(s) - t) / dh(s)
        s -= step
        if np.max(np.abs(step)) <= 1e-15 * T_tilde:
            break
    loop, offset = fit_rotating(samples, sr, T_tilde)
    return offset + evaluate(loop, s), float(T)


def choose_exponent(tilde, r_in: float, R_out: float, p_min: float = 4.0, margin: float = 0.1):
    """Smallest admissible p ≥ p_min with (θ̃₁/θ̃ₙ)^{−1/p} R < √2 r, padded by ``margin``."""
    if not R_out < math.sqrt(2.0) * r_in:
        raise InfeasibleError(f"surface is not pinched: R/r = {R_out / r_in:.6f} ≥ √2")
    ratio = tilde.largest / tilde.smallest
    p_crit = math.log(ratio) / math.log(math.sqrt(2.0) * r_in / R_out)
    p = max(float(p_min), float(math.ceil((1.0 + margin) * p_crit)))
    if p <= 2.0:
        raise InfeasibleError("p must exceed 2")
    assert ratio ** (1.0 / p) * R_out < math.sqrt(2.0) * r_in
    return p, p / (p - 1.0)
