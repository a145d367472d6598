"""Command line interface: ``python -m fairilp <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench, enumeration, rsd
from .errors import FairIlpError
from .model import NearOptConfig, SolverConfig, solve_optimal

RULE_NAMES = ("uniform", "leximin", "maximin", "nash", "knorm", "rsd", "rsd-sample", "reindex", "perturb",
              "deterministic")


def _emit(payload, out: Optional[str]) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load(args):
    if not args.instance:
        raise SystemExit("--instance is required for this command")
    return bench.load_instance(args.instance, args.format)


def _config(args) -> SolverConfig:
    return SolverConfig(seed=args.seed)


def _prepare(args):
    inst = _load(args)
    near = NearOptConfig(args.epsilon)
    return bench.prepare(inst, _config(args), near=near), near


def cmd_solve(args) -> int:
    inst = _load(args)
    sol, z = solve_optimal(inst, _config(args))
    _emit({"z_star": z, "solution": sol.to_dict()}, args.out)
    return 0


def cmd_partition(args) -> int:
    prep, _ = _prepare(args)
    body = prep.bounds.to_dict() if prep.cardinal else prep.partition.to_dict()
    body["z_star"] = prep.z_star
    _emit(body, args.out)
    return 0


def cmd_rule(args) -> int:
    prep, near = _prepare(args)
    name = args.name
    limit = args.rsd_exact_limit
    if name == "rsd-sample":
        name, limit = "rsd", -1
    rep = bench.run_rule(prep, name, _config(args), near=near, cap=args.cap, trials=args.trials,
                         seed=args.seed, rsd_exact_limit=limit)
    _emit(rep.to_dict(), args.out)
    return 0


def cmd_sample(args) -> int:
    prep, _ = _prepare(args)
    sol = rsd.sample_solution(prep.instance, prep.z_star, prep.M, _config(args), seed=args.seed)
    _emit(sol.to_dict(), args.out)
    return 0


def cmd_enumerate(args) -> int:
    inst = _load(args)
    near = NearOptConfig(args.epsilon)
    _, z = solve_optimal(inst, _config(args))
    pool = enumeration.enumerate_optimal(inst, z, args.cap, _config(args), near=near)
    _emit(pool.to_jsonl(), args.out)
    if not pool.complete:
        print(f"cap of {args.cap} reached; pool may be incomplete", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = bench.ExperimentConfig(
        rules=[r for r in args.rules.split(",") if r], family=args.family,
        sizes=[int(s) for s in args.sizes.split(",")], count=args.count,
        betas=[float(b) for b in args.betas.split(",")],
        paths=args.paths or (), file_format=args.format, seed=args.seed, epsilon=args.epsilon,
        cap=args.cap, trials=args.trials, rsd_exact_limit=args.rsd_exact_limit, out_dir=args.out,
        workers=args.workers,
    )
    result = bench.run_experiment(cfg)
    if not args.out:
        sys.stdout.write(result.csv_text())
    for f in result.failures:
        print(f"failed: {f['instance']}/{f['id']}: {f['error']}", file=sys.stderr)
    return result.exit_code


def cmd_audit(args) -> int:
    rules = [r for r in args.rules.split(",") if r]
    if args.instance:
        inst = _load(args)
        _, z = solve_optimal(inst, _config(args))
        pool = enumeration.enumerate_optimal(inst, z, args.cap)
        if not pool.complete:
            raise SystemExit("optimal set exceeds --cap; audit needs the complete pool")
        suite = {Path(args.instance).stem: [tuple(int(t) for t in r) for r in pool.matrix()]}
    else:
        suite = None
    report = bench.run_audit(rules, suite)
    _emit(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", help="instance file")
    common.add_argument("--format", choices=("ke", "tt", "ilp-json"), default="ilp-json")
    common.add_argument("--epsilon", type=float, default=0.0, help="near-optimality fraction")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--cap", type=int, default=enumeration.DEFAULT_CAP, help="enumeration cap")
    common.add_argument("--out", help="output file (directory for bench)")
    common.add_argument("--trials", type=int, default=1000)
    common.add_argument("--rsd-exact-limit", type=int, default=rsd.EXACT_LIMIT)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fairilp", description="Fair selection among optimal ILP solutions.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve and print one optimal solution").set_defaults(fn=cmd_solve)
    sub.add_parser("partition", parents=[common],
                   help="agents always/never/sometimes selected (bounds when cardinal)").set_defaults(fn=cmd_partition)
    r = sub.add_parser("rule", parents=[common], help="compute a distribution rule")
    r.add_argument("name", choices=RULE_NAMES)
    r.set_defaults(fn=cmd_rule)
    sub.add_parser("sample", parents=[common],
                   help="draw one solution by random serial dictatorship").set_defaults(fn=cmd_sample)
    sub.add_parser("enumerate", parents=[common], help="list optimal solutions (JSON lines)").set_defaults(
        fn=cmd_enumerate)
    b = sub.add_parser("bench", parents=[common], help="run an experiment and write metrics")
    b.add_argument("--family", choices=("ke", "tt", "files"), default="ke")
    b.add_argument("--sizes", default="20")
    b.add_argument("--count", type=int, default=5)
    b.add_argument("--betas", default="0.5")
    b.add_argument("--rules", default="uniform,leximin,nash,rsd,reindex,perturb")
    b.add_argument("--paths", nargs="*")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(fn=cmd_bench)
    a = sub.add_parser("audit", parents=[common], help="axiom audit on the named suite or an instance")
    a.add_argument("--rules", default="uniform,leximin,nash,rsd,deterministic")
    a.set_defaults(fn=cmd_audit)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except FairIlpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
