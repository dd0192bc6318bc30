"""Command-line interface.

Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.
Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .ambient_sim import (
    SCHEMES,
    SimConfig,
    emulate_pmu,
    read_pmu_csv,
    read_trajectory_csv,
    simulate_linear,
    simulate_nonlinear,
    write_csv,
)
from .case_model import build_ground_truth, load_case, solve_equilibrium
from .errors import ConfigurationError, InputError, WadcError
from .estimator import DEFAULT_RTOL, DETREND_MODES, EstimatedModel, estimate_state_matrix
from .modal import decompose, modal_report, modal_report_csv, modes_by_damping, weak_modes
from .pipeline import ExperimentConfig, atomic_write, run_pipeline
from .wadc import ControlPlan, damping_table_csv, evaluate_plan, make_plan, select_actuators


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"{path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=1) + "\n")


def _load_state_matrix(path):
    """State matrix from an estimated-model JSON or, for ground truth, a case file."""
    data = _read_json(path)
    if isinstance(data, dict) and data.get("kind") == "estimated_model":
        try:
            return EstimatedModel.from_dict(data).A_hat
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path}: malformed model ({exc})") from None
    case = load_case(data)
    return build_ground_truth(case, solve_equilibrium(case)).A


def _parse_actuators(spec: str, dec, k):
    spec = spec.strip().lower()
    if spec == "all":
        return select_actuators(dec, k, dec.n)
    if spec.startswith("top"):
        try:
            count = int(spec[3:])
        except ValueError:
            raise ConfigurationError(f"bad actuator spec {spec!r}") from None
        return select_actuators(dec, k, count)
    try:
        gens = [int(tok) - 1 for tok in spec.replace("g", "").split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(f"bad actuator list {spec!r}; use e.g. 5,4,7 or top3") from None
    if not gens or any(g < 0 or g >= dec.n for g in gens):
        raise ConfigurationError(f"generator numbers must lie in 1..{dec.n}")
    return tuple(gens)


def cmd_simulate(args):
    case = load_case(args.case)
    if args.sigma is not None:
        case = case.with_sigma(args.sigma)
    op = solve_equilibrium(case)
    cfg = SimConfig(dt=args.dt, duration=args.duration, seed=args.seed, scheme=args.scheme)
    if args.linear:
        x_star = np.concatenate([op.delta_star, np.zeros(case.n)])
        traj = simulate_linear(build_ground_truth(case, op), cfg, x_star=x_star)
    else:
        traj = simulate_nonlinear(case, op, cfg)
    write_csv(traj, args.out)
    return {"out": str(args.out), "samples": traj.states.shape[0], "dt": traj.dt}


def cmd_pmu(args):
    traj = read_trajectory_csv(args.inp, seed=args.seed)
    window = emulate_pmu(traj, args.rate, args.noise_angle, args.noise_speed, seed=args.seed)
    write_csv(window, args.out)
    return {"out": str(args.out), "samples": window.samples.shape[0], "rate": window.sample_rate}


def cmd_estimate(args):
    case = load_case(args.case)
    window = read_pmu_csv(args.pmu)
    if window.n != case.n:
        raise ConfigurationError(f"PMU file has {window.n} machines, case has {case.n}")
    model = estimate_state_matrix(window, case.M, case.D, detrend=args.detrend, rtol=args.rtol)
    _write_json(args.out, model.to_dict())
    return {"out": str(args.out), "truncated_directions": model.conditioning.truncated}


def cmd_modal(args):
    dec = decompose(_load_state_matrix(args.model))
    report = modal_report(dec)
    report["weak_threshold"] = args.weak_threshold
    weak = set(weak_modes(dec, args.weak_threshold))
    ranked = modes_by_damping(dec)
    report["weak_modes"] = [i + 1 for i, k in enumerate(ranked) if k in weak]
    _write_json(args.out, report)
    if args.csv:
        atomic_write(args.csv, modal_report_csv(report))
    return {"out": str(args.out), "weak_modes": report["weak_modes"]}


def cmd_design(args):
    dec = decompose(_load_state_matrix(args.model))
    ranked = modes_by_damping(dec)
    if not 1 <= args.mode <= len(ranked):
        raise ConfigurationError(f"--mode must lie in 1..{len(ranked)} (modal report index)")
    k = ranked[args.mode - 1]
    plan = make_plan(dec, k, args.shift, _parse_actuators(args.actuators, dec, k))
    _write_json(args.out, plan.to_dict())
    return {"out": str(args.out), "generators": [g + 1 for g in plan.actuators],
            "predicted_exact": [str(z) for z in plan.predicted_exact]}


def cmd_evaluate(args):
    plans = []
    for p in args.plan:
        plans.append(ControlPlan.from_dict(_read_json(p)))
    A = _load_state_matrix(args.model)
    dec = decompose(A)
    A_truth = _load_state_matrix(args.truth) if args.truth else None
    dec_truth = decompose(A_truth) if A_truth is not None else None
    out = []
    design_reports = []
    for path, plan in zip(args.plan, plans):
        rep = evaluate_plan(A, plan, dec, label=str(path))
        design_reports.append(rep)
        entry = {"plan": str(path), "model": rep.to_dict()}
        if A_truth is not None:
            entry["truth"] = evaluate_plan(A_truth, plan, dec_truth, label=str(path)).to_dict()
        out.append(entry)
    _write_json(args.out, out[0] if len(out) == 1 else out)
    if args.table:
        atomic_write(args.table, damping_table_csv(design_reports))
    return {"out": str(args.out),
            "zeta_closed": [e["model"]["target"]["zeta_closed"] for e in out]}


def cmd_pipeline(args):
    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg = replace(cfg, output_dir=str(Path(args.output_dir).resolve()))
    report = run_pipeline(cfg)
    if report.all_failed:
        errs = [s["error"] for s in report.seeds]
        raise _AllSeedsFailed(f"every seed failed; first error: {errs[0]['type']}: {errs[0]['message']}")
    return {"summary": report.summary, "config_sha256": report.provenance["config_sha256"]}


class _AllSeedsFailed(WadcError):
    exit_code = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmuwadc", description="PMU-based wide-area damping control toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="ambient simulation to a trajectory CSV")
    p.add_argument("--case", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=450.0)
    p.add_argument("--dt", type=float, default=0.005)
    p.add_argument("--sigma", type=float, default=None, help="override every noise intensity")
    p.add_argument("--scheme", choices=SCHEMES, default="heun")
    p.add_argument("--linear", action="store_true", help="simulate the linearised model")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pmu", help="decimate a trajectory and add measurement noise")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--noise-angle", type=float, default=0.0)
    p.add_argument("--noise-speed", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pmu)

    p = sub.add_parser("estimate", help="estimate the state matrix from PMU data")
    p.add_argument("--pmu", required=True)
    p.add_argument("--case", required=True, help="case file supplying M and D")
    p.add_argument("--out", required=True)
    p.add_argument("--detrend", choices=DETREND_MODES, default="centroid")
    p.add_argument("--rtol", type=float, default=DEFAULT_RTOL)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("modal", help="modal report of a model or case")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weak-threshold", type=float, default=0.10)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_modal)

    p = sub.add_parser("design", help="damping gain for one mode")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", type=int, default=1, help="modal report index (1 = weakest)")
    p.add_argument("--shift", type=float, required=True, help="leftward shift of the mode, 1/s")
    p.add_argument("--actuators", default="all", help="generator list such as 5,4,7, or topN, or all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("evaluate", help="closed-loop evaluation of one or more plans")
    p.add_argument("--plan", required=True, nargs="+")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", default=None, help="case file or model to evaluate against as well")
    p.add_argument("--out", required=True)
    p.add_argument("--table", default=None, help="CSV of actuator set vs closed-loop damping (%%)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_pipeline)
    return ap


def _fail(exc, code):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except WadcError as exc:
        return _fail(exc, getattr(exc, "exit_code", 3))
    except OSError as exc:
        return _fail(InputError(str(exc)), 2)
    except np.linalg.LinAlgError as exc:
        return _fail(exc, 3)
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
