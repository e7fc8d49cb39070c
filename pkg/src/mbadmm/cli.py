"""Command line front end.

    mbadmm run --engine gbs --input fixture_diverge3.json --out results/
    mbadmm fixtures --out fixtures/ [--force] [--list]

Exit codes for ``run``: 0 converged, 2 iteration budget exhausted,
3 diverged, 1 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import engines
from .errors import AdmmError
from .trace import SolverConfig, Status

EXIT = {Status.CONVERGED: 0, Status.MAX_ITER: 2, Status.DIVERGED: 3}
BLOCK_ENGINES = tuple(engines.ENGINES)
ALL_ENGINES = BLOCK_ENGINES + ("scopf", "offload")
SIMULATABLE = {"jacobi": "Jacobi", "prox-jacobi": "ProxJacobi", "variable-splitting": "VariableSplitting",
               "offload": "Offloading"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as MaxIterReached
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="mbadmm", description="Multi-block ADMM solvers and their applications.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve one problem file")
    run.add_argument("--engine", required=True, choices=ALL_ENGINES)
    run.add_argument("--input", required=True, help="problem, power case or offloading instance (JSON)")
    run.add_argument("--out", default=".", help="output directory (default: current)")
    d = SolverConfig()
    run.add_argument("--rho", type=float, default=None,
                     help=f"penalty (default {d.rho}; SCOPF 0.1; offloading: instance value)")
    run.add_argument("--gamma", type=float, default=None, help=f"dual damping (default {d.gamma}; offloading 1/A)")
    run.add_argument("--alpha", type=float, default=d.alpha, help="GBS correction step")
    run.add_argument("--prox", default=None,
                     help="proximal weight: a number or 'auto' (prox-jacobi default: auto)")
    run.add_argument("--tol-primal", type=float, default=d.tol_primal)
    run.add_argument("--tol-dual", type=float, default=d.tol_dual)
    run.add_argument("--max-iter", type=int, default=d.max_iter)
    run.add_argument("--seed", type=int, default=d.seed, help="seed for instances given by seed")
    run.add_argument("--simulate", action="store_true", help="route through the coordinator/worker simulator")

    fx = sub.add_parser("fixtures", help="write the bundled fixtures")
    fx.add_argument("--out", default="fixtures")
    fx.add_argument("--force", action="store_true", help="write into a non-empty directory")
    fx.add_argument("--list", action="store_true", help="print fixture names only")
    return ap


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _config(args, rho_default=None, gamma_default=None, prox=None):
    try:
        return SolverConfig(
            rho=args.rho if args.rho is not None else (rho_default if rho_default is not None else 1.0),
            gamma=args.gamma if args.gamma is not None else (gamma_default if gamma_default is not None else 1.0),
            alpha=args.alpha,
            prox=prox,
            tol_primal=args.tol_primal,
            tol_dual=args.tol_dual,
            max_iter=args.max_iter,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _run_block(args, doc, out):
    from .problem import problem_from_dict

    p = problem_from_dict(doc)
    start = doc.get("start") or {}
    prox = None
    if args.engine == "prox-jacobi":
        spec = args.prox if args.prox is not None else "auto"
        if spec == "auto":
            g = args.gamma if args.gamma is not None else 1.0
            rho = args.rho if args.rho is not None else 1.0
            prox = engines.default_prox_weights(p, rho, g)
        else:
            prox = _number(spec, "--prox")
    elif args.prox is not None:
        raise UsageError("--prox only applies to prox-jacobi")
    cfg = _config(args, prox=prox)
    kw = {"x0": start.get("x"), "lam0": start.get("lam")}
    if args.simulate:
        from .distsim import simulate

        tr, rep, log = simulate(SIMULATABLE[args.engine], p, cfg, **kw)
        log.to_jsonl(os.path.join(out, "messages.jsonl"))
    else:
        tr, rep = engines.ENGINES[args.engine](p, cfg, **kw)
    return tr, rep


def _run_scopf(args, doc, out):
    from . import scopf

    case = scopf.case_from_dict(doc)
    inst = scopf.assemble_scopf(case)
    cfg = _config(args, rho_default=scopf.DEFAULT_RHO)
    tr, rep, sols = scopf.run_distributed_scopf(inst, cfg)
    with open(os.path.join(out, "solutions.json"), "w") as fh:
        json.dump([s.to_dict() for s in sols], fh, indent=1)
    return tr, rep


def _run_offload(args, doc, out):
    from .offload import OffloadInstance, run_offloading

    doc = dict(doc)
    doc.setdefault("seed", args.seed)
    for key in ("rho", "gamma"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    if args.prox is not None:
        doc["prox"] = _number(args.prox, "--prox")
    inst = OffloadInstance.from_dict(doc)
    cfg = _config(args, rho_default=inst.rho, gamma_default=inst.gamma)
    if args.simulate:
        from .distsim import simulate

        tr, rep, log = simulate("Offloading", inst, cfg)
        log.to_jsonl(os.path.join(out, "messages.jsonl"))
    else:
        tr, rep = run_offloading(inst, cfg)
    with open(os.path.join(out, "allocation.json"), "w") as fh:
        json.dump({"x": inst.x.tolist(), "y": inst.y.tolist(), "lambda": inst.lam.tolist()}, fh, indent=1)
    return tr, rep


def _number(text, flag):
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError(f"{flag} expects a number or 'auto', got {text!r}") from exc


def cli_run(args):
    if args.simulate and args.engine not in SIMULATABLE:
        raise UsageError(f"--simulate is not available for {args.engine}: its block updates are sequential")
    doc = _read_json(args.input)
    if not isinstance(doc, dict):
        raise UsageError(f"{args.input}: top level must be a JSON object")
    os.makedirs(args.out, exist_ok=True)
    if args.engine == "scopf":
        tr, rep = _run_scopf(args, doc, args.out)
    elif args.engine == "offload":
        tr, rep = _run_offload(args, doc, args.out)
    else:
        tr, rep = _run_block(args, doc, args.out)
    tr.to_csv(os.path.join(args.out, "trace.csv"))
    rep.to_json(os.path.join(args.out, "report.json"))
    print(f"{args.engine}: {rep.status.value} after {rep.iterations} iterations "
          f"(primal {rep.primal_residual:.3e}, dual {rep.dual_metric:.3e})")
    return EXIT[rep.status]


def cli_fixtures(args):
    from .fixtures import FIXTURE_NAMES, write_fixtures

    if args.list:
        print("\n".join(FIXTURE_NAMES))
        return 0
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise UsageError(f"{args.out} is not empty; pass --force to overwrite")
    for path in write_fixtures(args.out):
        print(path)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cli_run(args)
        return cli_fixtures(args)
    except (UsageError, AdmmError, ValueError, KeyError) as exc:
        msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        print(f"mbadmm: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
