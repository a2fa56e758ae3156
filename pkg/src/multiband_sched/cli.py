"""Command-line front end: ``multiband-sched {solve,simulate,sweep,verify}``.

Exit codes: 0 success, 1 invalid input, 2 failed certification or an
internal consistency error in the solver.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .files import SCHEMA_VERSION, dump_json, load_problem, load_scenario, write_bundle, write_sweep_csv
from .model import ConfigurationError
from .sim import SimulationError, run_simulation, run_sweep, worker_count
from .solver import BandProblem, SolverConsistencyError, kkt_check, objective_f, solve_gains
from . import verify

log = logging.getLogger("multiband_sched")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("need at least one value")
    return vals


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("need at least one value")
    return vals


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


# -- solve ----------------------------------------------------------------------


def solve_document(gains, queues, vn0) -> dict:
    """Everything ``solve`` writes: per-user values in the input order."""
    rates, sol, pi = solve_gains(gains, queues, vn0)
    prob, _ = BandProblem.from_band(gains, queues, vn0)
    rep = kkt_check(sol.rates, sol.lambdas, prob)
    lambdas = np.empty(prob.n)
    lambdas[pi] = sol.lambdas
    history = np.empty_like(sol.lambda_history)
    history[:, pi] = sol.lambda_history
    orig = [int(k) for k in pi]
    return {
        "schema_version": SCHEMA_VERSION,
        "vn0": vn0,
        "rates": rates.tolist(),
        "lambdas": lambdas.tolist(),
        "decode_order": orig,
        "active": sorted(orig[k] for k in sol.active),
        "inactive": sorted(orig[k] for k in sol.inactive),
        "removal_order": [orig[k] for k in sol.removal_order],
        "iterations": sol.iterations,
        "lambda_history": history.tolist(),
        "objective": objective_f(sol.rates, prob),
        "kkt": {
            "stationarity": rep.stationarity,
            "min_rate": rep.min_rate,
            "min_lambda": rep.min_lambda,
            "complementarity": rep.complementarity,
        },
    }


def cmd_solve(args) -> int:
    gains, queues, vn0 = load_problem(args.problem)
    doc = solve_document(gains, queues, vn0)
    dump_json(doc, args.out)
    print("user,rate,lambda")
    for k, (r, lam) in enumerate(zip(doc["rates"], doc["lambdas"])):
        print(f"{k},{r:.17g},{lam:.17g}")
    print(f"# iterations={doc['iterations']} stationarity={doc['kkt']['stationarity']:.3g} -> {args.out}")
    return EXIT_OK


# -- simulate / sweep -------------------------------------------------------------


def _scenario(args):
    sc = load_scenario(args.scenario)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    return sc.with_overrides(**changes) if changes else sc


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    trace = run_simulation(sc)
    out = write_bundle(trace, sc, args.out)
    s = trace.summary
    print("metric,value")
    print(f"power_efficiency,{s.power_efficiency:.17g}")
    print(f"mean_total_queue,{s.mean_total_queue:.17g}")
    for k, th in enumerate(s.throughput):
        print(f"throughput_{k},{th:.17g}")
    print(f"stable,{'NA' if s.stability is None else str(s.stability.stable).lower()}")
    if args.figures:
        from .plotting import plot_trace

        print(f"# figure {plot_trace(trace, Path(args.figures) / 'trace.png')}")
    print(f"# bundle {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    rows = run_sweep(sc, args.v_values, args.seeds)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_sweep_csv(rows, fh)
    else:
        write_sweep_csv(rows, sys.stdout)
    if args.figures:
        from .plotting import plot_sweep

        path = plot_sweep(rows, Path(args.figures) / "sweep.png")
        print(f"# figure {path}", file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def _suite_job(job):
    name, count, seed, faulty = job
    fn = getattr(verify, name)
    if name in ("suite_decode_order", "suite_gradient", "suite_hessian"):
        return fn(count, seed)
    return fn(count, seed, verify.sign_flipped_solver) if faulty else fn(count, seed)


SUITES = (
    "suite_oracle_equivalence", "suite_newton", "suite_kkt", "suite_lambda_monotonicity",
    "suite_selection_order", "suite_objective_sign", "suite_decode_order", "suite_gradient", "suite_hessian",
)


def cmd_verify(args) -> int:
    jobs = [(name, args.instances, args.seed, args.inject_fault) for name in SUITES]
    workers = worker_count(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suite_job, jobs))
    else:
        results = [_suite_job(j) for j in jobs]
    for r in results:
        print(r.line())
        if r.first_failure:
            print(f"    first failure: {r.first_failure}")
    failed = sum(not r.passed for r in results)
    print(f"# {len(results) - failed}/{len(results)} suites passed")
    return EXIT_OK if failed == 0 else EXIT_FAILED


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multiband-sched", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one band from a problem file")
    s.add_argument("problem")
    s.add_argument("--out", default="solve.json", help="output JSON (default: %(default)s)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("simulate", help="run a scenario and write summary.json + trace.csv")
    s.add_argument("scenario")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=_positive_int)
    s.add_argument("--figures", metavar="DIR", help="also render trace.png into DIR")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="replicate a scenario over V values and seeds")
    s.add_argument("scenario")
    s.add_argument("--v-values", type=_float_list, required=True, help="e.g. 1,10,100")
    s.add_argument("--seeds", type=_int_list, default=[0], help="e.g. 1,2,3 (default: 0)")
    s.add_argument("--horizon", type=_positive_int)
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--figures", metavar="DIR", help="also render sweep.png into DIR")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("verify", help="certify the exact solver on random instances")
    s.add_argument("--instances", type=_positive_int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    # negative control for the test suite: runs every check against a broken solver
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, jsonschema.ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverConsistencyError, SimulationError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        dump = getattr(exc, "log", None)
        if dump:
            print(json.dumps(dump, indent=2), file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
