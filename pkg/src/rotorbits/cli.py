"""Command-line front end.

Exit codes: 0 success, 1 verification found a failing check, 2 input error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import NumericalError, RotorbitsError, ValidationError
from .hamiltonian import choose_exponent, pinch_estimate
from .problem import OUTPUT_ENV, ProblemSpec, default_output_dir, solve, verify_directory, write_outputs
from .symplectic import (matrix_from_preset, normal_form, parse_matrix_text, reconstruct, tilde_angles,
                         validate_symplectic_orthogonal)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _load_matrix(arg: str, n: int | None) -> np.ndarray:
    path = Path(arg)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            data = json.loads(text)
            if isinstance(data, dict):
                data = data.get("matrix", data.get("Q"))
            if isinstance(data, str):
                return matrix_from_preset(data, n)
            return np.asarray(data, dtype=float)
        return parse_matrix_text(text)
    return matrix_from_preset(arg, n)


def cmd_normal_form(args) -> int:
    Q = _load_matrix(args.matrix, args.n)
    validate_symplectic_orthogonal(Q, tol=args.tol, strict=True)
    sr = normal_form(Q, tol=args.tol)
    tilde = tilde_angles(sr)
    check = validate_symplectic_orthogonal(Q, tol=args.tol)
    out = {
        "n": sr.n,
        "theta": sr.theta.tolist(),
        "tilde_sorted": tilde.values.tolist(),
        "tilde_order": tilde.order.tolist(),
        "P": sr.P.tolist(),
        "orth_defect": check.orth_defect,
        "symp_defect": check.symp_defect,
        "reconstruction_error": float(np.linalg.norm(reconstruct(sr) - Q)),
    }
    print(_dump(out))
    return EXIT_OK


def cmd_pinch(args) -> int:
    spec = ProblemSpec.load(args.spec)
    raw = spec.build_hamiltonian()
    est = pinch_estimate(raw, samples=args.samples, seed=spec.solver.rng_seed)
    out = {"r_in": est.r_in, "R_out": est.R_out, "ratio": est.ratio, "pinched": est.pinched}
    if est.pinched:
        tilde = tilde_angles(normal_form(spec.build_matrix()))
        p, q = choose_exponent(tilde, est.r_in, est.R_out, p_min=spec.solver.p_min)
        out.update(p=p, q=q)
    print(_dump(out))
    return EXIT_OK


def cmd_solve(args) -> int:
    spec = ProblemSpec.load(args.spec)
    out_dir = Path(args.out) if args.out else default_output_dir(spec)
    result = solve(spec)
    write_outputs(result, out_dir, timestamp=datetime.now(timezone.utc).isoformat())
    rep = result.report
    summary = {
        "output_dir": str(out_dir),
        "status": rep["status"],
        "orbits": rep["orbit_count"],
        "certificate_count": rep["certificate"].get("count"),
        "achieved_E": [s.get("E") for s in rep["solutions"]],
        "warnings": rep["warnings"],
    }
    print(_dump(summary))
    return EXIT_NUMERICAL if result.failed else EXIT_OK


def cmd_verify(args) -> int:
    res = verify_directory(args.dir)
    print(_dump(res))
    return EXIT_OK if res["passed"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rotorbits",
                                 description="Rotating periodic orbits on convex energy surfaces.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the full pipeline on a problem description")
    s.add_argument("spec", help="problem JSON file")
    s.add_argument("--out", help=f"output directory (default: spec output_dir, then ${OUTPUT_ENV})")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="re-check the orbits in a solve output directory")
    v.add_argument("dir")
    v.set_defaults(func=cmd_verify)

    nf = sub.add_parser("normal-form", help="normal form of a symplectic orthogonal matrix")
    nf.add_argument("matrix", help="preset (identity, neg-identity, rotation:[a,b,...]) or a CSV/JSON file")
    nf.add_argument("--n", type=int, default=None, help="half dimension for identity presets")
    nf.add_argument("--tol", type=float, default=1e-9)
    nf.set_defaults(func=cmd_normal_form)

    p = sub.add_parser("pinch", help="inner/outer radii of the energy surface and the dual exponent")
    p.add_argument("spec")
    p.add_argument("--samples", type=int, default=1024)
    p.set_defaults(func=cmd_pinch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, ValidationError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RotorbitsError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
