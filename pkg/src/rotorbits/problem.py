"""Problem descriptions and the end-to-end solve pipeline.

A problem is a JSON document (``schema_version`` 1) naming the symmetry Q,
a raw Hamiltonian preset, the energy level β and the rotating period T.
:func:`solve` runs normal form → gauge → seeds → descent → recovery →
reparametrization → polishing → certificate and returns a report whose JSON
form is a deterministic function of the problem.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from . import dual
from .errors import InfeasibleError, NumericalError, ValidationError
from .hamiltonian import (GaugeProblem, RawHamiltonian, check_invariance, choose_exponent, ellipsoid,
                          legendre_bounds_check, pinch_estimate, plane_quartic, reparametrize, round_sphere)
from .loops import build_grid
from .symplectic import (eval_number, matrix_from_preset, normal_form, tilde_angles,
                         validate_symplectic_orthogonal)
from .verify import (ATOL, RTOL, OrbitSolution, assess, distinctness_certificate, fingerprint, integrate,
                     normalize_energy, orbit_from_csv, orbit_to_csv, polish, trajectory_residual)

SCHEMA_VERSION = 1
OUTPUT_ENV = "ROTORBITS_OUTPUT_DIR"
HAMILTONIAN_PRESETS = ("round", "ellipsoid", "plane-quartic")


def _from_mapping(cls, data, where: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class HamiltonianSpec:
    preset: str = "round"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Discretization:
    K_max: int = 32
    N: Optional[int] = None

    @property
    def samples(self) -> int:
        return 8 * self.K_max if self.N is None else int(self.N)


@dataclass(frozen=True)
class SolverOptions:
    gtol: float = 1e-9
    max_iter: int = 5000
    seeds: Optional[list] = None  # 1-based ranks of θ̃ (smallest first); None means all planes
    initial_step: str = "bb"
    p: Optional[float] = None  # fixes the dual exponent instead of choosing it from the pinch
    p_min: float = 4.0
    subperiod_lmax: int = 8
    random_directions: int = 16
    rng_seed: int = 0


@dataclass(frozen=True)
class Tolerances:
    polish_target: float = 1e-10
    capture: float = 1e-2
    drift: float = 1e-9
    recover: float = 1e-6
    symmetry: float = 1e-8
    fingerprint_rel: float = 1e-6
    distance_rel: float = 1e-4
    level: float = 1e-8
    verify_residual: float = 1e-8


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    matrix: Union[str, list]
    hamiltonian: HamiltonianSpec
    T: float
    beta: float = 0.5
    discretization: Discretization = Discretization()
    solver: SolverOptions = SolverOptions()
    tolerances: Tolerances = Tolerances()
    output_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {self.schema_version!r}")
        if not isinstance(self.n, int) or self.n < 1:
            raise ValidationError("n must be a positive integer")
        if not (isinstance(self.T, (int, float)) and math.isfinite(self.T) and self.T > 0):
            raise ValidationError("T must be a positive number")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if self.discretization.K_max < 1:
            raise ValidationError("K_max must be at least 1")
        if self.discretization.samples < 2 * self.discretization.K_max + 2:
            raise ValidationError("N must be at least 2*K_max + 2")
        if self.hamiltonian.preset not in HAMILTONIAN_PRESETS:
            raise ValidationError(f"unknown Hamiltonian preset {self.hamiltonian.preset!r}; "
                                  f"choose from {', '.join(HAMILTONIAN_PRESETS)}")
        seeds = self.solver.seeds
        if seeds is not None and (not seeds or any(not isinstance(s, int) or not 1 <= s <= self.n for s in seeds)):
            raise ValidationError(f"solver.seeds must list plane ranks in 1..{self.n}")

    # --- parsing ---------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        if not isinstance(data, dict):
            raise ValidationError("problem description must be a JSON object")
        data = dict(data)
        if "schema_version" not in data:
            raise ValidationError("missing schema_version")
        for key in ("n", "matrix", "hamiltonian", "T"):
            if key not in data:
                raise ValidationError(f"missing required key {key!r}")
        try:
            T = data["T"]
            data["T"] = eval_number(T) if isinstance(T, str) else float(T)
            data["beta"] = float(data.get("beta", 0.5))
            data["hamiltonian"] = _from_mapping(HamiltonianSpec, data["hamiltonian"], "hamiltonian")
            data["discretization"] = _from_mapping(Discretization, data.get("discretization", {}), "discretization")
            data["solver"] = _from_mapping(SolverOptions, data.get("solver", {}), "solver")
            data["tolerances"] = _from_mapping(Tolerances, data.get("tolerances", {}), "tolerances")
            return _from_mapping(cls, data, "problem")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"invalid problem description: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ProblemSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # --- builders ----------------------------------------------------------

    def build_matrix(self) -> np.ndarray:
        if isinstance(self.matrix, str):
            Q = matrix_from_preset(self.matrix, self.n)
        else:
            Q = np.asarray(self.matrix, dtype=float)
        if Q.shape != (2 * self.n, 2 * self.n):
            raise ValidationError(f"matrix has shape {Q.shape}, expected {(2 * self.n, 2 * self.n)}")
        return Q

    def build_hamiltonian(self) -> RawHamiltonian:
        return build_hamiltonian(self.hamiltonian, self.n, self.beta)


def build_hamiltonian(hs: HamiltonianSpec, n: int, beta: float) -> RawHamiltonian:
    prm = dict(hs.params)
    try:
        if hs.preset == "round":
            raw = round_sphere(n, beta)
        elif hs.preset == "ellipsoid":
            per = bool(prm.pop("per_coordinate", False))
            axes = prm.pop("axes")
            raw = ellipsoid(axes, beta, per_coordinate=per)
        elif hs.preset == "plane-quartic":
            raw = plane_quartic(prm.pop("omega"), float(prm.pop("eps")), beta)
        else:
            raise ValidationError(f"unknown Hamiltonian preset {hs.preset!r}")
    except KeyError as exc:
        raise ValidationError(f"Hamiltonian preset {hs.preset!r} needs parameter {exc.args[0]!r}") from exc
    if prm:
        raise ValidationError(f"unused Hamiltonian parameter(s): {', '.join(sorted(prm))}")
    if raw.dim != 2 * n:
        raise ValidationError(f"Hamiltonian acts on dimension {raw.dim}, expected {2 * n}")
    return raw


def default_output_dir(spec: ProblemSpec) -> Path:
    if spec.output_dir:
        return Path(spec.output_dir)
    return Path(os.environ.get(OUTPUT_ENV, "rotorbits_out"))


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Setup:
    spec: ProblemSpec
    Q: np.ndarray
    sr: Any
    tilde: Any
    raw: RawHamiltonian
    pinch: Any
    p: float
    q: float
    gp: GaugeProblem
    warnings: list


def prepare(spec: ProblemSpec) -> Setup:
    """Validate Q and H, estimate the pinch radii and fix the dual exponent."""
    Q = spec.build_matrix()
    validate_symplectic_orthogonal(Q, strict=True)
    sr = normal_form(Q)
    tilde = tilde_angles(sr)
    raw = spec.build_hamiltonian()
    check_invariance(raw, Q, tol=spec.tolerances.symmetry, rng=spec.solver.rng_seed)
    pinch = pinch_estimate(raw, seed=spec.solver.rng_seed)
    notes = []
    if spec.solver.p is not None:
        p = float(spec.solver.p)
        if not p > 2:
            raise ValidationError("solver.p must exceed 2")
        q = p / (p - 1.0)
    else:
        try:
            p, q = choose_exponent(tilde, pinch.r_in, pinch.R_out, p_min=spec.solver.p_min)
        except InfeasibleError:
            p = float(spec.solver.p_min)
            q = p / (p - 1.0)
            notes.append("not_pinched")
    if not pinch.pinched and "not_pinched" not in notes:
        notes.append("not_pinched")
    gp = GaugeProblem(raw, q, pinch.r_in, pinch.R_out)
    return Setup(spec, Q, sr, tilde, raw, pinch, p, q, gp, notes)


@dataclass
class SolveResult:
    report: dict
    orbits: list
    failed: bool = False


def _f(x) -> float:
    return float(x)


def _fp_json(fp) -> list:
    return [[int(j), int(k), _f(w), _f(m)] for j, k, w, m in fp]


def solve(spec: ProblemSpec) -> SolveResult:
    """Run the full pipeline; numerical failures are recorded, not raised."""
    st = prepare(spec)
    sr, tilde, gp, raw = st.sr, st.tilde, st.gp, st.raw
    T = spec.T
    disc = spec.discretization
    tol = spec.tolerances
    grid = build_grid(sr, T, disc.K_max)
    N = disc.samples
    opts = dual.DescentOptions(gtol=spec.solver.gtol, max_iter=spec.solver.max_iter, N=N,
                               initial_step=spec.solver.initial_step)
    ranks = spec.solver.seeds or list(range(1, spec.n + 1))
    solutions, orbits, full_values = [], [], []
    failed = False

    for rank in ranks:
        entry = {"rank": rank, "plane": int(tilde.order[rank - 1]), "tilde_angle": _f(tilde.values[rank - 1])}
        try:
            y0 = dual.seed(gp, tilde, rank - 1, grid, N)
            state = dual.descend(gp, y0, opts)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                rec = dual.recover(gp, state, rtol=tol.recover)
        except NumericalError as exc:
            entry.update(status="numerical_failure", error=str(exc))
            solutions.append(entry)
            failed = True
            continue
        entry.update(E=_f(state.E), steps=state.steps, grad_norm=_f(state.grad_norm), converged=state.converged,
                     below_norm_floor=state.below_floor, recover_residual=_f(rec.residual),
                     critical=rec.residual <= tol.recover, gauge_energy=_f(rec.d), subperiod=rec.subperiod)
        if rec.subperiod == 1:
            full_values.append(state.E)
        try:
            var = OrbitSolution(z=rec.z, T=rec.T, d=rec.d)
            w = normalize_energy(gp, var)
            z_raw, T_raw = reparametrize(gp, sr, w.z, w.T)
            orb = assess(raw, sr, z_raw, T_raw, d=raw.beta, sr=sr, fp_rel=tol.fingerprint_rel)
            entry["reparametrized_residual"] = _f(orb.residual)
            pol = polish(raw, sr, orb, level=raw.beta, capture=tol.capture, target=tol.polish_target, sr=sr)
        except NumericalError as exc:
            entry.update(status="numerical_failure", error=str(exc))
            solutions.append(entry)
            failed = True
            continue
        final = orb if pol.failed else pol
        if not final.fingerprint:
            final.fingerprint = fingerprint(final.z, sr, final.T, tol.fingerprint_rel)
        entry.update(status="ok", polish_failed=pol.failed, newton_steps=pol.newton_steps, T_raw=_f(final.T),
                     shooting_residual=_f(final.residual), energy_drift=_f(final.drift),
                     residual_ok=final.residual <= tol.polish_target, drift_ok=final.drift <= tol.drift,
                     fingerprint=_fp_json(final.fingerprint), csv=f"orbit_{len(orbits) + 1:02d}.csv")
        solutions.append(entry)
        orbits.append(final)

    sub_entries, sub_values = [], []
    for y_sub, ell in dual.subperiod_seeds(gp, grid, spec.solver.subperiod_lmax, N):
        try:
            s_state = dual.descend(gp, y_sub, opts)
        except NumericalError:
            continue
        detected = dual.rotating_subperiod(s_state.y, spec.solver.subperiod_lmax)
        sub_entries.append({"ell": ell, "detected_ell": detected, "E": _f(s_state.E),
                            "grad_norm": _f(s_state.grad_norm)})
        if detected >= 2 and s_state.grad_norm <= spec.solver.gtol:
            sub_values.append(s_state.E)

    seed_values = []
    rng = np.random.default_rng(spec.solver.rng_seed)
    for j in range(spec.n):
        seed_values.append(dual.energy(gp, dual.seed(gp, tilde, j, grid, N), N))
    for _ in range(spec.solver.random_directions):
        xi = rng.normal(size=2 * spec.n)
        seed_values.append(dual.energy(gp, dual.seed_from_direction(gp, grid, xi, N), N))

    ledger = dual.value_checks(st.p, full_values, sub_values, seed_values, tilde, st.pinch.r_in, T)

    try:
        cert = distinctness_certificate(orbits, sr, fp_rel=tol.fingerprint_rel, dist_rel=tol.distance_rel,
                                        level_tol=tol.level, H=raw).to_dict()
    except Exception as exc:  # reported, never fatal
        cert = {"count": 0, "error": str(exc)}

    bounds = legendre_bounds_check(gp, trials=200, rng=spec.solver.rng_seed)
    report = {
        "schema_version": SCHEMA_VERSION,
        "status": "numerical_failure" if failed else "ok",
        "problem": spec.to_dict(),
        "tolerances": asdict(tol),
        "integrator": {"method": "DOP853", "rtol": RTOL, "atol": ATOL},
        "normal_form": {"theta": [_f(x) for x in sr.theta], "tilde_sorted": [_f(x) for x in tilde.values],
                        "tilde_order": [int(i) for i in tilde.order]},
        "pinch": {"r_in": _f(st.pinch.r_in), "R_out": _f(st.pinch.R_out), "ratio": _f(st.pinch.ratio),
                  "pinched": bool(st.pinch.pinched)},
        "exponent": {"p": _f(st.p), "q": _f(st.q)},
        "warnings": list(st.warnings),
        "legendre_bounds": {"passed": bool(bounds.passed), "worst_margin": _f(bounds.worst_margin)},
        "discretization": {"K_max": disc.K_max, "N": N},
        "solutions": solutions,
        "subperiod_solutions": sub_entries,
        "seed_values": [_f(v) for v in seed_values],
        "ledger": ledger,
        "certificate": cert,
        "orbit_count": len(orbits),
    }
    return SolveResult(report=report, orbits=orbits, failed=failed)


def write_outputs(result: SolveResult, out_dir, timestamp: Optional[str] = None) -> Path:
    """Write report.json, one CSV per orbit, and run_meta.json (the only time-dependent file)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_names = [e["csv"] for e in result.report["solutions"] if "csv" in e]
    for name, orb in zip(csv_names, result.orbits):
        (out / name).write_text(orbit_to_csv(orb), encoding="utf-8")
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if timestamp is not None:
        (out / "run_meta.json").write_text(json.dumps({"timestamp": timestamp}, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return out


def verify_directory(out_dir) -> dict:
    """Re-check a solve output directory from its report and CSV files.

    Per orbit: shooting residual and energy drift of the flow started at the
    first sample, deviation of all samples from that flow, and distance of the
    energy from β.  The certificate count is recomputed and compared.
    Raises FileNotFoundError / ValidationError for missing or unreadable input.
    """
    out = Path(out_dir)
    report_path = out / "report.json"
    if not report_path.is_file():
        raise FileNotFoundError(f"{report_path} not found")
    try:
        report = json.loads(report_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed report: {exc}") from exc
    spec = ProblemSpec.from_dict(report["problem"])
    tol = spec.tolerances
    Q = spec.build_matrix()
    sr = normal_form(Q)
    raw = spec.build_hamiltonian()
    checks, orbits = [], []
    for entry in report["solutions"]:
        if "csv" not in entry:
            continue
        path = out / entry["csv"]
        if not path.is_file():
            raise FileNotFoundError(f"{path} not found")
        orb = orbit_from_csv(path.read_text(encoding="utf-8"), T=entry["T_raw"])
        if orb.z.shape[1] != 2 * spec.n:
            raise ValidationError(f"{path.name} has {orb.z.shape[1]} state columns, expected {2 * spec.n}")
        t_expected = orb.times
        traj = integrate(raw, orb.z[0], orb.T, t_eval=np.linspace(0.0, orb.T, 65))
        shoot = float(np.linalg.norm(traj.z[-1] - Q @ orb.z[0]))
        traj_res = trajectory_residual(raw, orb)
        level = float(np.max(np.abs(raw.value(orb.z) - raw.beta)))
        orb.d = float(raw.value(orb.z[0]))
        orb.fingerprint = fingerprint(orb.z, sr, orb.T, tol.fingerprint_rel)
        orbits.append(orb)
        items = {
            "shooting_residual": (shoot, tol.verify_residual),
            "trajectory_residual": (traj_res, tol.verify_residual),
            "energy_drift": (traj.drift, tol.drift),
            "energy_level": (level, tol.level),
        }
        checks.append({
            "csv": entry["csv"],
            "time_grid_ok": bool(np.allclose(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 0],
                                             t_expected, rtol=0, atol=1e-12 * max(1.0, orb.T))),
            **{k: {"value": float(v), "tol": float(t), "pass": bool(v <= t)} for k, (v, t) in items.items()},
        })
    try:
        cert = distinctness_certificate(orbits, sr, fp_rel=tol.fingerprint_rel, dist_rel=tol.distance_rel,
                                        level_tol=tol.level, H=raw)
        cert_check = {"count": cert.count, "reported": report["certificate"].get("count"),
                      "pass": cert.count == report["certificate"].get("count")}
    except Exception as exc:
        cert_check = {"count": None, "reported": report["certificate"].get("count"), "pass": False,
                      "error": str(exc)}
    passed = all(c["time_grid_ok"] and all(c[k]["pass"] for k in ("shooting_residual", "trajectory_residual",
                                                                  "energy_drift", "energy_level"))
                 for c in checks) and cert_check["pass"]
    return {"passed": bool(passed), "orbits": checks, "certificate": cert_check}
