"""Command-line orchestration: synth, verify, simulate, bench, demonstrate.

Logs are line-delimited JSON records (one per iteration) followed by a
human-readable summary.  Exit codes: 0 success, 2 infeasible, 3 budget
exhausted, 4 input error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from certsynth.benchmarks import benchmark_ids, get_benchmark
from certsynth.model import Problem, Rws, Safety, load_problem
from certsynth.synthesis import (RunConfig, SynthesisReport, load_certificate,
                                 reverify, synth)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_BUDGET = 3
EXIT_INPUT = 4

_STATUS_EXIT = {"certificate_found": EXIT_OK, "infeasible": EXIT_INFEASIBLE,
                "budget_exhausted": EXIT_BUDGET}


def _load_problem_arg(text) -> Problem:
    path = Path(text)
    if path.exists():
        return load_problem(path)
    try:
        return get_benchmark(text)
    except KeyError:
        raise SystemExit_input(f"no such problem file or benchmark: {text}")


def SystemExit_input(msg):
    print(f"error: {msg}", file=sys.stderr)
    return SystemExit(EXIT_INPUT)


def _emit(record, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(record) + "\n")
    stream.flush()


def _run_config(args) -> RunConfig:
    return RunConfig(
        center={"first": "first_feasible"}.get(args.center, args.center),
        mode={"demo": "demo"}.get(args.mode, args.mode),
        seed=args.seed,
        max_iter=args.max_iter,
        gamma0=args.gamma0,
        delta=args.delta,
        record_timings=not args.no_timings,
    )


def cmd_synth(args) -> int:
    problem = _load_problem_arg(args.problem)
    config = _run_config(args)
    config.log = _emit
    report = synth(problem, config)
    _emit({"summary": report.status, **report.totals})
    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"{problem.name}_report.json"
    report_path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    if report.certificate is not None:
        cert_path = out_dir / f"{problem.name}_certificate.json"
        cert_path.write_text(json.dumps(report.certificate, indent=2) + "\n")
        print(f"certificate written to {cert_path}")
        names = report.certificate["monomials"]
        coefs = report.certificate["coefficients"]
        terms = " + ".join(f"{c:.6g}*{m}" for c, m in zip(coefs, names))
        print(f"V = {terms} + ({report.certificate['offset']})")
    print(f"status: {report.status} after {report.totals['iterations']} iterations")
    return _STATUS_EXIT[report.status]


def cmd_verify(args) -> int:
    problem = _load_problem_arg(args.problem)
    try:
        payload = json.loads(Path(args.certificate).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise SystemExit_input(f"cannot read certificate: {err}")
    config = _run_config(args)
    ok, rows, _ = reverify(problem, payload, config)
    for row in rows:
        _emit(row)
    print(f"verdict: {'Ok' if ok else 'not verified'}")
    return EXIT_OK if ok else EXIT_BUDGET


def cmd_simulate(args) -> int:
    from certsynth.conditions import compile_conditions
    from certsynth.regions import sample_many
    from certsynth.runtime import (build_controller, min_dwell_bound, monitor,
                                   simulate, simulate_ensemble)
    from certsynth.verifier import certify_margin

    problem = _load_problem_arg(args.problem)
    try:
        payload = json.loads(Path(args.certificate).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise SystemExit_input(f"cannot read certificate: {err}")
    tpl, c = load_certificate(payload, problem)
    cs = compile_conditions(problem, tpl)
    from certsynth.synthesis import auto_margin
    eps_star = auto_margin(problem, cs, c)
    ctrl = build_controller(c, problem, cs, eps=eps_star)
    bound = min_dwell_bound(ctrl, problem.plant)
    h = args.h if args.h else min(bound / 10, 1e-2)
    h = max(h, args.t_max / 2_000_000)
    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = problem.spec
    if args.x0:
        x0s = [tuple(float(v) for v in args.x0.split(","))]
    else:
        x0s = sample_many(spec.I, args.ensemble, seed=args.seed)

    if len(x0s) > 1:
        result = simulate_ensemble(problem.plant, ctrl, np.array(x0s),
                                   t_max=args.t_max, h=h, spec=spec,
                                   seed=args.seed)
        frac = result.success_fraction
        min_gap = float(np.nanmin(np.where(np.isfinite(result.min_switch_gap),
                                           result.min_switch_gap, np.inf)))
        print(f"ensemble {len(x0s)}: success fraction {frac:.2f}, "
              f"min dwell observed {min_gap:.3g}s (bound {bound:.3g}s, h={h:.3g})")
        return EXIT_OK if frac == 1.0 else EXIT_BUDGET

    goal = spec.G if isinstance(spec, Rws) else None
    trace = simulate(problem.plant, ctrl, x0s[0], t_max=args.t_max, h=h,
                     seed=args.seed, goal=goal)
    verdict = monitor(trace, spec, ctrl.certificate)
    csv_path = out_dir / f"{problem.name}_trace.csv"
    csv_path.write_text(trace.to_csv())
    print(f"trace written to {csv_path}")
    print(f"verdict: {'success' if verdict.ok else 'failure'} ({verdict.reason}); "
          f"min gap {trace.min_switch_gap():.3g}s")
    return EXIT_OK if verdict.ok else EXIT_BUDGET


def cmd_bench(args) -> int:
    rows = []
    if args.which == "list":
        for num, name in benchmark_ids():
            print(f"{num:8s} {name}")
        return EXIT_OK
    targets = [ident for ident, _ in benchmark_ids()
               if ident not in ("15e",)] if args.which == "all" else [args.which]
    print("id,name,n,modes,iterations,learner_s,verifier_s,total_s,status")
    worst = EXIT_OK
    for ident in targets:
        problem = get_benchmark(ident)
        config = _run_config(args)
        t0 = time.perf_counter()
        report = synth(problem, config)
        total = time.perf_counter() - t0
        t_learn = sum(r.get("t_learn", 0.0) for r in report.iterations)
        t_verify = sum(r.get("t_verify", 0.0) for r in report.iterations)
        mark = {"certificate_found": "ok", "infeasible": "infeasible",
                "budget_exhausted": "budget"}[report.status]
        line = (f"{ident},{problem.name},{len(problem.state)},"
                f"{len(problem.plant.modes)},{report.totals['iterations']},"
                f"{t_learn:.1f},{t_verify:.1f},{total:.1f},{mark}")
        print(line, flush=True)
        rows.append(line)
        worst = max(worst, _STATUS_EXIT[report.status])
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("id,name,n,modes,iterations,learner_s,verifier_s,"
                       "total_s,status\n" + "\n".join(rows) + "\n")
    return worst if args.which != "all" else EXIT_OK


def cmd_demonstrate(args) -> int:
    from certsynth.synthesis import _default_demonstrator
    problem = _load_problem_arg(args.problem)
    x = tuple(float(v) for v in args.x.split(","))
    if len(x) != len(problem.state):
        raise SystemExit_input(f"state has {len(problem.state)} coordinates")
    config = _run_config(args)
    oracle = _default_demonstrator(problem, config)
    obs = oracle(x)
    out = {"x": list(x), "u": obs.u if isinstance(obs.u, str) else list(obs.u)}
    if obs.flag is not None:
        out["safety_flag"] = obs.flag
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="certsynth",
        description="control certificate synthesis for switched polynomial systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--center", default="first_feasible",
                       choices=["first", "first_feasible", "chebyshev",
                                "analytic", "mve"])
        p.add_argument("--mode", default="cegis", choices=["cegis", "demo"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--gamma0", type=float, default=None)
        p.add_argument("--max-iter", dest="max_iter", type=int, default=None)
        p.add_argument("--no-timings", action="store_true",
                       help="deterministic reports (drop wall-clock fields)")
        p.add_argument("--parallel-verify", action="store_true",
                       help="accepted for compatibility; clause falsification "
                            "currently runs sequentially")

    p = sub.add_parser("synth", help="run the synthesis loop on a problem")
    p.add_argument("problem", help="problem file or builtin benchmark id")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="re-verify a stored certificate")
    p.add_argument("problem")
    p.add_argument("certificate")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="closed-loop simulation from a certificate")
    p.add_argument("problem")
    p.add_argument("certificate")
    p.add_argument("--x0", default=None, help="comma-separated initial state")
    p.add_argument("--ensemble", type=int, default=100)
    p.add_argument("--t-max", dest="t_max", type=float, default=50.0)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the built-in benchmark suite")
    p.add_argument("which", help="'list', 'all', or a benchmark id")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("demonstrate", help="query the demonstration oracle once")
    p.add_argument("problem")
    p.add_argument("--x", required=True, help="comma-separated state")
    common(p)
    p.set_defaults(func=cmd_demonstrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
