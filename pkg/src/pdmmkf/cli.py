"""Command-line front end: ``pdmmkf solve | oracle | kalman``.

Exit codes: 0 success, 1 a ``kalman --mode compare`` check failed,
2 unreadable or malformed input, 3 validation failure, 4 no convergence,
5 infeasible or unbounded problem.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import NoSaddlePointError, PdmmError, ValidationError
from .graph import chain_endpoints, is_chain, is_tree, orient_to_root, tree_center
from .kalman import (build_P_statespace, kalman_filter, ml_chain_problem, pdmm_filter,
                     pdmm_smoother, simulate_trajectory)
from .params import build_tree_optimal, build_uniform
from .pdmm import Schedule, Status, run
from .problem import kkt_residual, oracle_solve

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NO_CONVERGENCE = 4
EXIT_INFEASIBLE = 5

COMPARE_TOL = 1e-6


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=1) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _default_root(g, schedule: str) -> int:
    if schedule == "chain-fb":
        return max(chain_endpoints(g))
    return tree_center(g)


def _per_node(p, x) -> list[list[float]]:
    return [xi.tolist() for xi in p.split(x)]


# ---------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    pf = io.read_problem(args.problem)
    p, g = pf.problem, pf.problem.graph
    root = args.root if args.root is not None else pf.root

    orientation = None
    if args.schedule in ("chain-fb", "tree-fb") or args.p_mode == "tree":
        if not is_tree(g):
            raise CliError("the problem graph is not a tree; it cannot be oriented towards a root",
                           EXIT_VALIDATION)
        if args.schedule == "chain-fb" and not is_chain(g):
            raise CliError("the chain-fb schedule needs a chain graph", EXIT_VALIDATION)
        orientation = orient_to_root(g, _default_root(g, args.schedule) if root is None else root)

    if args.p_mode == "tree":
        P = build_tree_optimal(p, orientation)
    elif args.p_mode == "uniform":
        P = build_uniform(p, args.rho)
    else:
        if pf.P is None:
            raise CliError("--p-mode file needs a 'P' entry in the problem file", EXIT_VALIDATION)
        P = pf.P

    schedule = {
        "sync": Schedule.synchronous,
        "cyclic": Schedule.cyclic,
        "random": lambda: Schedule.random(args.seed),
        "chain-fb": lambda: Schedule.chain_forward_backward(orientation),
        "tree-fb": lambda: Schedule.tree_forward_backward(orientation),
    }[args.schedule]()

    oracle_x = oracle_solve(p)[0] if args.with_oracle else None
    result = run(p, P, schedule, max_iters=args.max_iters, tol=args.tol, oracle_x=oracle_x)
    doc = {"status": result.status.value, "iterations": result.iterations,
           "schedule": args.schedule, "p_mode": args.p_mode,
           "root": None if orientation is None else orientation.root,
           "x": _per_node(p, result.x)}
    if oracle_x is not None:
        doc["err_vs_oracle"] = float(np.linalg.norm(result.x - oracle_x))
    _emit(doc, args.out)
    if args.trace:
        io.write_trace(args.trace, result.trace)
    if result.status is Status.MAX_ITERATIONS:
        print(f"no convergence within {args.max_iters} iterations", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


# --------------------------------------------------------------- oracle

def cmd_oracle(args) -> int:
    p = io.read_problem(args.problem).problem
    x, delta = oracle_solve(p)
    doc = {"x": _per_node(p, x),
           "delta": [{"i": i, "j": j, "delta": d.tolist()} for (i, j), d in zip(p.graph.edges, delta)],
           "kkt_residual": kkt_residual(p, x, delta).norm}
    _emit(doc, args.out)
    return EXIT_OK


# --------------------------------------------------------------- kalman

def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / (1.0 + np.linalg.norm(b)))


def compare_report(m, ys) -> dict:
    """Largest relative deviations between the Kalman filter and PDMM."""
    kf = kalman_filter(m, ys)
    pf = pdmm_filter(m, ys)
    P = build_P_statespace(m, len(ys) - 1)
    cov_vs_p = max(_rel(P[(l, l + 1)], s.D) for l, s in enumerate(kf))
    msg_vs_pred = max(_rel(msg, s.z_pred) for (msg, _), s in zip(pf, kf))
    oracle_vs_pred = 0.0
    for l, s in enumerate(kf):
        chain = ml_chain_problem(m, ys[:l + 1])
        _, z = chain.split_uz(oracle_solve(chain.problem)[0])
        oracle_vs_pred = max(oracle_vs_pred, _rel(z[l + 1], s.z_pred))
    return {"covariance_vs_weighting": cov_vs_p,
            "message_vs_prediction": msg_vs_pred,
            "oracle_vs_prediction": oracle_vs_pred}


def cmd_kalman(args) -> int:
    mf = io.read_model(args.model)
    m = mf.model
    if args.simulate:
        ys = simulate_trajectory(m, args.seed).y
    elif mf.measurements is not None:
        ys = mf.measurements
    else:
        raise CliError("the model file has no measurements; pass --simulate", EXIT_VALIDATION)

    doc: dict = {"mode": args.mode, "measurements": np.asarray(ys).tolist()}
    code = EXIT_OK
    if args.mode == "filter":
        doc["steps"] = [{"step": s.step, "z_pred": s.z_pred.tolist(), "D": s.D.tolist(),
                         "K": s.K.tolist()} for s in kalman_filter(m, ys)]
    elif args.mode == "pdmm-filter":
        doc["steps"] = [{"step": l + 1, "message": msg.tolist(), "P": Pm.tolist()}
                        for l, (msg, Pm) in enumerate(pdmm_filter(m, ys))]
    elif args.mode == "smoother":
        res = pdmm_smoother(m, ys, args.lag)
        doc.update(lag=res.lag, u=res.u.tolist(), z=res.z.tolist())
    else:
        report = compare_report(m, ys)
        doc["deviations"] = report
        doc["tolerance"] = COMPARE_TOL
        failed = [k for k, v in report.items() if not v <= COMPARE_TOL]
        doc["passed"] = not failed
        if failed:
            print(f"deviation above {COMPARE_TOL:g}: {', '.join(failed)}", file=sys.stderr)
            code = EXIT_CHECK_FAILED
    _emit(doc, args.out)
    return code


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdmmkf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run PDMM on a problem file")
    s.add_argument("problem", help="problem JSON file")
    s.add_argument("--schedule", choices=["sync", "cyclic", "random", "chain-fb", "tree-fb"],
                   default="sync")
    s.add_argument("--p-mode", choices=["tree", "uniform", "file"], default="uniform")
    s.add_argument("--rho", type=float, default=1.0, help="scale for --p-mode uniform")
    s.add_argument("--root", type=int, default=None)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0, help="seed for the random schedule")
    s.add_argument("--out", help="solution JSON (default: standard output)")
    s.add_argument("--trace", help="trace CSV")
    s.add_argument("--with-oracle", action="store_true",
                   help="fill the err_vs_oracle trace column from a dense KKT solve")
    s.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle", help="dense KKT solve of a problem file")
    o.add_argument("problem")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    k = sub.add_parser("kalman", help="Kalman filter and its PDMM counterpart on a model file")
    k.add_argument("model", help="model JSON file")
    k.add_argument("--mode", choices=["filter", "pdmm-filter", "smoother", "compare"], default="filter")
    k.add_argument("--lag", type=int, default=None, help="fixed lag for --mode smoother")
    k.add_argument("--simulate", action="store_true", help="draw measurements from the model")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kalman)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, json.JSONDecodeError, io.FileFormatError) as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NoSaddlePointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValidationError, PdmmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
