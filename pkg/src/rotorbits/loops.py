"""Spectral representation of Q-rotating loops.

A loop is stored by complex coefficients c_{j,k} on the lattice of admissible
frequencies ω_{j,k} = (2πk + θ_j)/T and represents the real signal

    y(t) = Σ_{j,k} 2 Re(c_{j,k} e^{iω_{j,k} t} v_j),

which satisfies y(t + T) = Q y(t) by construction.  Only the +i frame of each
plane carries coefficients; negative frequencies live at k < 0.  Frequencies
ω = 0 (θ_j = 0, k = 0) are excluded, which is the mean-zero condition.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AliasingError, GridMismatchError
from .symplectic import TWO_PI, SymplecticRotation, fixed_projection, normal_form, rotation_matrix


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    rotation: SymplecticRotation
    T: float
    K_max: int
    plane: np.ndarray
    k: np.ndarray
    omega: np.ndarray

    @property
    def n(self) -> int:
        return self.rotation.n

    @property
    def size(self) -> int:
        return self.omega.size

    @property
    def theta(self) -> np.ndarray:
        return self.rotation.theta

    def __len__(self):
        return self.size

    def entries(self):
        return list(zip(self.plane.tolist(), self.k.tolist(), self.omega.tolist()))

    def compatible(self, other: "FrequencyGrid") -> bool:
        return self is other or (
            self.K_max == other.K_max
            and self.n == other.n
            and self.T == other.T
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.rotation.frames, other.rotation.frames)
        )

    def index(self, plane: int, k: int) -> int:
        hit = np.flatnonzero((self.plane == plane) & (self.k == k))
        if hit.size == 0:
            raise KeyError((plane, k))
        return int(hit[0])


def build_grid(sr: SymplecticRotation, T: float, K_max: int) -> FrequencyGrid:
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    if T <= 0:
        raise ValueError("T must be positive")
    planes, ks = [], []
    for j, th in enumerate(sr.theta):
        for k in range(-K_max, K_max + 1):
            if k == 0 and th == 0.0:
                continue
            planes.append(j)
            ks.append(k)
    plane = np.array(planes, dtype=int)
    k = np.array(ks, dtype=int)
    omega = (TWO_PI * k + sr.theta[plane]) / T
    return FrequencyGrid(rotation=sr, T=float(T), K_max=int(K_max), plane=plane, k=k, omega=omega)


@dataclass(frozen=True, eq=False)
class RotatingLoop:
    grid: FrequencyGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.grid.size,):
            raise GridMismatchError(f"expected {self.grid.size} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: FrequencyGrid) -> "RotatingLoop":
        return cls(grid, np.zeros(grid.size, dtype=complex))

    @classmethod
    def mode(cls, grid: FrequencyGrid, plane: int, k: int, c: complex = 1.0) -> "RotatingLoop":
        coeffs = np.zeros(grid.size, dtype=complex)
        coeffs[grid.index(plane, k)] = c
        return cls(grid, coeffs)

    def _check(self, other: "RotatingLoop"):
        if not self.grid.compatible(other.grid):
            raise GridMismatchError("loops live on different frequency grids")

    def __add__(self, other):
        self._check(other)
        return RotatingLoop(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return RotatingLoop(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, a):
        return RotatingLoop(self.grid, self.coeffs * a)

    __rmul__ = __mul__

    def __truediv__(self, a):
        return RotatingLoop(self.grid, self.coeffs / a)

    def __neg__(self):
        return RotatingLoop(self.grid, -self.coeffs)

    def norm(self) -> float:
        """L² norm over one rotating period."""
        return math.sqrt(2.0 * self.grid.T * float(np.sum(np.abs(self.coeffs) ** 2)))

    def mean_square(self) -> float:
        return 2.0 * float(np.sum(np.abs(self.coeffs) ** 2))


def default_samples(grid: FrequencyGrid) -> int:
    return 8 * grid.K_max


def sample_times(T: float, N: int) -> np.ndarray:
    return np.arange(N) * (T / N)


def _dense(grid: FrequencyGrid, coeffs: np.ndarray, N: int) -> np.ndarray:
    F = np.zeros((grid.n, N), dtype=complex)
    F[grid.plane, np.mod(grid.k, N)] = coeffs
    return F


def synthesize(y: RotatingLoop, N: int | None = None) -> np.ndarray:
    """Real samples y(t_m), t_m = mT/N, as an (N, 2n) array."""
    grid = y.grid
    N = default_samples(grid) if N is None else int(N)
    if N < 2 * grid.K_max + 2:
        raise AliasingError(f"N={N} < 2*K_max+2={2 * grid.K_max + 2}")
    periodic = N * np.fft.ifft(_dense(grid, y.coeffs, N), axis=1)
    twist = np.exp(1j * np.outer(grid.theta, np.arange(N) / N))
    g = periodic * twist
    return 2.0 * np.real(g.T @ grid.rotation.frames.T)


def evaluate(y: RotatingLoop, t) -> np.ndarray:
    """Direct summation at arbitrary times; returns (len(t), 2n)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    grid = y.grid
    phase = np.exp(1j * np.outer(t, grid.omega)) * y.coeffs
    V = grid.rotation.frames[:, grid.plane]
    return 2.0 * np.real(phase @ V.T)


def analyze(samples, grid: FrequencyGrid, return_residual: bool = False):
    """Inverse of :func:`synthesize` on the truncated space."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2 * grid.n:
        raise GridMismatchError(f"samples of shape {samples.shape} do not match 2n={2 * grid.n}")
    N = samples.shape[0]
    if N < 2 * grid.K_max + 1:
        raise AliasingError(f"N={N} < 2*K_max+1={2 * grid.K_max + 1}")
    g = samples @ grid.rotation.frames.conj()
    untwist = np.exp(-1j * np.outer(np.arange(N) / N, grid.theta))
    C = np.fft.fft(g * untwist, axis=0) / N
    y = RotatingLoop(grid, C[np.mod(grid.k, N), grid.plane])
    if return_residual:
        scale = max(np.linalg.norm(samples), 1e-300)
        return y, float(np.linalg.norm(samples - synthesize(y, N)) / scale)
    return y


def fit_rotating(samples, sr: SymplecticRotation, T: float, K_max: int | None = None):
    """Spectral fit of uniform samples of a (Q, T)-rotating signal that may carry
    a constant part in ker(I − Q).  Returns (loop, offset) with
    signal(t) = offset + evaluate(loop, t).
    """
    samples = np.asarray(samples, dtype=float)
    N = samples.shape[0]
    K = (N - 1) // 2 if K_max is None else int(K_max)
    offset, _ = fixed_projection(sr, samples.mean(axis=0))
    grid = build_grid(sr, T, K)
    return analyze(samples - offset, grid), offset


def apply_K(y: RotatingLoop) -> RotatingLoop:
    return RotatingLoop(y.grid, y.coeffs / y.grid.omega)


def pairing(y1: RotatingLoop, y2: RotatingLoop) -> float:
    """∫₀ᵀ ⟨y₁, y₂⟩ dt."""
    y1._check(y2)
    return 2.0 * y1.grid.T * float(np.real(np.vdot(y1.coeffs, y2.coeffs)))


def quadratic_form(y: RotatingLoop) -> float:
    """∫₀ᵀ ⟨y, Ky⟩ dt."""
    return 2.0 * y.grid.T * float(np.sum(np.abs(y.coeffs) ** 2 / y.grid.omega))


def shift(y: RotatingLoop, s: float) -> RotatingLoop:
    """Time translation (Q(s)y)(t) = y(t + s)."""
    return RotatingLoop(y.grid, y.coeffs * np.exp(1j * y.grid.omega * s))


def default_scan_span(grid: FrequencyGrid, max_periods: int = 64) -> float:
    """Shift horizon: T times the common denominator of θ_j/2π when small, else 64T."""
    L = 1
    for th in grid.theta:
        frac = Fraction(float(th) / TWO_PI).limit_denominator(max_periods)
        if abs(float(frac) - th / TWO_PI) > 1e-12:
            return max_periods * grid.T
        L = L * frac.denominator // math.gcd(L, frac.denominator)
        if L > max_periods:
            return max_periods * grid.T
    return L * grid.T


def orbit_distance(y1: RotatingLoop, y2: RotatingLoop, S_span: float | None = None,
                   grid_pts: int | None = None) -> float:
    """Upper bound on inf_s ‖shift(y₁, s) − y₂‖ from a coarse scan plus local refinement."""
    y1._check(y2)
    grid = y1.grid
    if S_span is None:
        S_span = default_scan_span(grid)
    if grid_pts is None:
        wmax = float(np.max(np.abs(grid.omega)))
        grid_pts = int(min(200_000, max(512, math.ceil(S_span * wmax / (np.pi / 8)))))
    c1, c2 = y1.coeffs, y2.coeffs
    base = float(np.sum(np.abs(c1) ** 2) + np.sum(np.abs(c2) ** 2))
    cross_w = np.conj(c1) * c2

    def dist(s):
        return math.sqrt(2.0 * grid.T * float(np.sum(np.abs(c1 * np.exp(1j * grid.omega * s) - c2) ** 2)))

    s_grid = np.linspace(0.0, S_span, grid_pts)
    best_val, best_s = np.inf, 0.0
    for chunk in np.array_split(s_grid, max(1, grid_pts // 4096)):
        cross = np.real(np.exp(-1j * np.outer(chunk, grid.omega)) @ cross_w)
        d2 = base - 2.0 * cross
        i = int(np.argmin(d2))
        if d2[i] < best_val:
            best_val, best_s = float(d2[i]), float(chunk[i])
    h = S_span / max(grid_pts - 1, 1)
    res = minimize_scalar(dist, bounds=(best_s - h, best_s + h), method="bounded",
                          options={"xatol": 1e-14 * max(1.0, abs(best_s))})
    return float(min(res.fun, dist(best_s)))


# --- CSV import / export -----------------------------------------------------

def loop_to_csv(y: RotatingLoop) -> str:
    grid = y.grid
    buf = io.StringIO()
    buf.write(f"# T={grid.T!r}; n={grid.n}; K_max={grid.K_max}; theta={','.join(repr(float(t)) for t in grid.theta)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "k", "re", "im"])
    for j, k, c in zip(grid.plane, grid.k, y.coeffs):
        w.writerow([int(j), int(k), repr(float(c.real)), repr(float(c.imag))])
    return buf.getvalue()


def loop_from_csv(text: str, sr: SymplecticRotation | None = None) -> RotatingLoop:
    """Read a loop written by :func:`loop_to_csv`.

    Without ``sr`` the rotation is rebuilt as the plane rotation with the stored angles.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing loop header line")
    meta = {}
    for part in lines[0][1:].split(";"):
        key, _, val = part.strip().partition("=")
        meta[key.strip()] = val.strip()
    T = float(meta["T"])
    n = int(meta["n"])
    theta = np.array([float(x) for x in meta["theta"].split(",")]) if meta.get("theta") else np.zeros(n)
    rows = list(csv.DictReader(lines[1:]))
    K = int(meta.get("K_max", max(abs(int(r["k"])) for r in rows)))
    if sr is None:
        sr = normal_form(rotation_matrix(theta))
    elif not np.allclose(sr.theta, theta, atol=1e-12):
        raise GridMismatchError("stored angles do not match the given rotation")
    grid = build_grid(sr, T, K)
    coeffs = np.zeros(grid.size, dtype=complex)
    for r in rows:
        coeffs[grid.index(int(r["j"]), int(r["k"]))] = complex(float(r["re"]), float(r["im"]))
    return RotatingLoop(grid, coeffs)
