"""Matrices in Sp(2n) ∩ O(2n): validation, normal form and rotation paths.

Coordinates are z = (q_1..q_n, p_1..p_n) with J = [[0, I], [-I, 0]], so the
j-th symplectic plane is spanned by coordinates (j, j + n).  Any Q commuting
with J has the block form [[A, B], [-B, A]] and acts on the +i eigenspace of J
as the unitary matrix U = A + iB; the normal form is read off the eigen
decomposition of U.
"""
from __future__ import annotations

import ast
import operator
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.stats import unitary_group

from .errors import DimensionError, InconsistencyError, NumericalError, ValidationError

TWO_PI = 2.0 * np.pi
DEFAULT_TOL = 1e-9
ANGLE_SNAP = 1e-12
_CLUSTER_TOL = 1e-9


def symplectic_form(n: int) -> np.ndarray:
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[Z, I], [-I, Z]])


def plane_block(angle: float) -> np.ndarray:
    """2x2 block [[cos, sin], [-sin, cos]] (the flow of z' = J z for time ``angle``)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def _half_dim(Q: np.ndarray) -> int:
    Q = np.asarray(Q)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {Q.shape}")
    if Q.shape[0] % 2:
        raise DimensionError(f"matrix dimension {Q.shape[0]} is odd")
    return Q.shape[0] // 2


@dataclass(frozen=True)
class ValidationReport:
    orth_defect: float
    symp_defect: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.orth_defect <= self.tol and self.symp_defect <= self.tol

    def raise_if_failed(self):
        if not self.passed:
            raise ValidationError(
                f"matrix is not symplectic-orthogonal: ‖QᵀQ−I‖={self.orth_defect:.3e}, "
                f"‖QᵀJQ−J‖={self.symp_defect:.3e} (tol {self.tol:.1e})",
                orth_defect=self.orth_defect,
                symp_defect=self.symp_defect,
            )
        return self


def validate_symplectic_orthogonal(Q, tol: float = DEFAULT_TOL, strict: bool = False) -> ValidationReport:
    """Measure ‖QᵀQ − I‖ and ‖QᵀJQ − J‖ (Frobenius).

    With ``strict=True`` a failing report raises :class:`ValidationError`.
    """
    Q = np.asarray(Q, dtype=float)
    n = _half_dim(Q)
    J = symplectic_form(n)
    report = ValidationReport(
        orth_defect=float(np.linalg.norm(Q.T @ Q - np.eye(2 * n))),
        symp_defect=float(np.linalg.norm(Q.T @ J @ Q - J)),
        tol=tol,
    )
    if strict:
        report.raise_if_failed()
    return report


@dataclass(frozen=True)
class SymplecticRotation:
    """Normal form of Q: ``Q = P diag(M(θ_1), ..., M(θ_n)) Pᵀ``.

    ``frames[:, j]`` is the unit vector v_j with J v_j = i v_j, Q v_j = e^{iθ_j} v_j;
    the columns 2j, 2j+1 of P are √2 Re v_j and √2 Im v_j.
    """

    n: int
    Q: np.ndarray
    P: np.ndarray
    theta: np.ndarray
    frames: np.ndarray
    fixed_basis: np.ndarray
    tol: float = DEFAULT_TOL

    @property
    def fixed_planes(self) -> np.ndarray:
        return np.flatnonzero(self.theta == 0.0)

    @property
    def J(self) -> np.ndarray:
        return symplectic_form(self.n)


def _canonical_cluster_basis(W: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of span(W) built from projected unit vectors."""
    n, m = W.shape
    proj = W @ W.conj().T
    basis = []
    residual = proj.copy()
    for _ in range(m):
        norms = np.linalg.norm(residual, axis=0)
        # earliest column within round-off of the largest residual
        i = int(np.flatnonzero(norms >= norms.max() * (1 - 1e-8))[0])
        v = residual[:, i] / norms[i]
        basis.append(v)
        residual = residual - np.outer(v, v.conj() @ residual)
    return np.column_stack(basis)


def _fix_phase(w: np.ndarray) -> np.ndarray:
    i = int(np.flatnonzero(np.abs(w) > 1e-10 * np.abs(w).max())[0])
    return w * (np.conj(w[i]) / abs(w[i]))


def _frames_to_P(frames: np.ndarray) -> np.ndarray:
    a = np.sqrt(2.0) * frames.real
    b = np.sqrt(2.0) * frames.imag
    P = np.empty((frames.shape[0], frames.shape[0]))
    P[:, 0::2] = a
    P[:, 1::2] = b
    return P


def normal_form(Q, tol: float = DEFAULT_TOL) -> SymplecticRotation:
    Q = np.array(Q, dtype=float)
    n = _half_dim(Q)
    validate_symplectic_orthogonal(Q, tol, strict=True)
    J = symplectic_form(n)
    comm = float(np.linalg.norm(Q @ J - J @ Q))
    if comm > tol:
        raise InconsistencyError(f"‖QJ − JQ‖ = {comm:.3e} exceeds {tol:.1e}", comm_defect=comm)

    U = Q[:n, :n] + 1j * Q[:n, n:]
    try:
        Tschur, Z = sla.schur(U, output="complex")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Schur decomposition failed: {exc}") from exc
    lam = np.diag(Tschur)
    ang = np.mod(np.angle(lam), TWO_PI)
    ang[np.minimum(ang, TWO_PI - ang) <= ANGLE_SNAP] = 0.0

    # cluster (nearly) repeated eigenvalues, canonicalize each eigenspace
    order = np.argsort(ang, kind="stable")
    clusters, current = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if abs(ang[b] - ang[a]) <= _CLUSTER_TOL:
            current.append(b)
        else:
            clusters.append(current)
            current = [b]
    clusters.append(current)

    thetas, ws = [], []
    for cl in clusters:
        W = Z[:, cl]
        if len(cl) > 1:
            W = _canonical_cluster_basis(W)
        for col in range(W.shape[1]):
            w = _fix_phase(W[:, col])
            rq = np.vdot(w, U @ w)
            t = float(np.mod(np.angle(rq), TWO_PI))
            if min(t, TWO_PI - t) <= ANGLE_SNAP:
                t = 0.0
            thetas.append(t)
            ws.append(w)
    W = np.column_stack(ws)
    theta = np.array(thetas)
    frames = np.vstack([W, 1j * W]) / np.sqrt(2.0)
    P = _frames_to_P(frames)
    fixed = np.flatnonzero(theta == 0.0)
    fixed_basis = P[:, np.ravel(np.column_stack([2 * fixed, 2 * fixed + 1]))] if fixed.size else np.zeros((2 * n, 0))
    return SymplecticRotation(n=n, Q=Q, P=P, theta=theta, frames=frames, fixed_basis=fixed_basis, tol=tol)


def reconstruct(sr: SymplecticRotation) -> np.ndarray:
    blocks = sla.block_diag(*[plane_block(t) for t in sr.theta])
    return sr.P @ blocks @ sr.P.T


@dataclass(frozen=True)
class TildeAngles:
    """θ̃ values sorted ascending; ``order[i]`` is the normal-form plane of ``values[i]``."""

    values: np.ndarray
    order: np.ndarray = field(repr=False)

    @property
    def by_plane(self) -> np.ndarray:
        out = np.empty_like(self.values)
        out[self.order] = self.values
        return out

    @property
    def smallest(self) -> float:
        return float(self.values[0])

    @property
    def largest(self) -> float:
        return float(self.values[-1])


def tilde_angles(sr_or_theta) -> TildeAngles:
    theta = np.asarray(getattr(sr_or_theta, "theta", sr_or_theta), dtype=float)
    tilde = np.where(theta == 0.0, TWO_PI, theta)
    order = np.argsort(tilde, kind="stable")
    return TildeAngles(values=tilde[order], order=order)


def rotation_path(sr: SymplecticRotation, tilde: TildeAngles, t: float, T: float) -> np.ndarray:
    """Q(t) = P diag(M_j(θ̃_j t / T)) Pᵀ; Q(0) = I and Q(T) = Q."""
    if T <= 0:
        raise ValueError("T must be positive")
    per_plane = tilde.by_plane
    blocks = sla.block_diag(*[plane_block(a * t / T) for a in per_plane])
    return sr.P @ blocks @ sr.P.T


def fixed_projection(sr: SymplecticRotation, v):
    """Return (𝒫v, w) with 𝒫 the orthogonal projection onto ker(I − Q) and
    w ⟂ ker(I − Q) solving (I − Q) w = v − 𝒫v.  ``v`` may be batched (..., 2n).
    """
    v = np.asarray(v, dtype=float)
    F = sr.fixed_basis
    Pv = (v @ F) @ F.T
    u = v - Pv
    moving = sr.theta != 0.0
    V = sr.frames[:, moving]
    coef = (u @ V.conj()) / (1.0 - np.exp(1j * sr.theta[moving]))
    w = 2.0 * np.real(coef @ V.T)
    return Pv, w


def random_symplectic_orthogonal(n: int, rng=None) -> np.ndarray:
    """Haar-random element of Sp(2n) ∩ O(2n): U ∈ U(n) embedded as [[Re U, Im U], [−Im U, Re U]]."""
    rng = np.random.default_rng(rng)
    U = unitary_group.rvs(n, random_state=rng) if n > 1 else np.exp(1j * rng.uniform(0, TWO_PI, (1, 1)))
    return np.block([[U.real, U.imag], [-U.imag, U.real]])


def rotation_matrix(angles) -> np.ndarray:
    """Rotation by ``angles[j]`` in each plane (q_j, p_j); equals exp(J diag(θ, θ))."""
    angles = np.asarray(angles, dtype=float)
    C, S = np.diag(np.cos(angles)), np.diag(np.sin(angles))
    return np.block([[C, S], [-S, C]])


_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def eval_number(text: str) -> float:
    """Evaluate a numeric literal such as ``2*pi/3`` or ``1e-3`` (only arithmetic and ``pi``)."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in ("pi", "π"):
            return float(np.pi)
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression: {text!r}")

    return ev(ast.parse(str(text).strip().replace("π", "pi"), mode="eval"))


def matrix_from_preset(preset: str, n: int | None = None) -> np.ndarray:
    """``identity``, ``neg-identity`` (need ``n``) or ``rotation:[θ_1, ..., θ_n]``."""
    preset = preset.strip()
    if preset.startswith("rotation:"):
        body = preset[len("rotation:"):].strip()
        if not (body.startswith("[") and body.endswith("]")):
            raise ValueError(f"bad rotation preset {preset!r}")
        angles = [eval_number(x) for x in body[1:-1].split(",") if x.strip()]
        if n is not None and len(angles) == 1 and n > 1:
            angles = angles * n
        if n is not None and len(angles) != n:
            raise DimensionError(f"rotation preset has {len(angles)} angles, expected {n}")
        return rotation_matrix(angles)
    if preset in ("identity", "neg-identity"):
        if n is None:
            raise ValueError(f"preset {preset!r} needs the plane count n")
        return np.eye(2 * n) * (1.0 if preset == "identity" else -1.0)
    raise ValueError(f"unknown matrix preset {preset!r}")


def parse_matrix_text(text: str) -> np.ndarray:
    """Row-major dense matrix from CSV / whitespace separated text (``#`` comments allowed)."""
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([eval_number(x) for x in line.replace(",", " ").split()])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise DimensionError("matrix rows are empty or ragged")
    return np.array(rows, dtype=float)
