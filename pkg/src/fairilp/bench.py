"""Experiment harness, fairness metrics and the axiom audit."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import math
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import colgen, enumeration, instances, rsd
from .errors import ConfigError, FairIlpError, PoolIncomplete
from .model import (
    CARDINAL,
    DEFAULT_CONFIG,
    EXACT,
    IlpInstance,
    Lottery,
    NearOptConfig,
    RuleReport,
    Solution,
    SolutionPool,
    SolverConfig,
    solve_optimal,
)
from .partition import AgentPartition, Bounds, compute_bounds, partition_agents

log = logging.getLogger(__name__)

CSV_COLUMNS = ["instance", "id", "|M|", "rule", "min_prob", "min_prob_ratio", "log_nash", "nash_ratio",
               "t_opt_s", "t_partition_s", "t_rule_s", "iterations"]
DICHOTOMOUS_RULES = ("uniform", "leximin", "maximin", "nash", "knorm", "rsd", "reindex", "perturb",
                     "deterministic")
CARDINAL_RULES = ("leximin", "maximin", "nash", "knorm", "rsd", "reindex", "perturb", "deterministic")
ZERO = 1e-12


# -- per-instance preparation and rule dispatch -------------------------------------------

@dataclasses.dataclass
class Prepared:
    """An instance with its optimum and agent classification, ready for any rule."""

    instance: IlpInstance
    z_star: float
    incumbent: Solution
    M: list
    t_opt: float
    t_partition: float
    partition: Optional[AgentPartition] = None
    bounds: Optional[Bounds] = None

    @property
    def cardinal(self) -> bool:
        return self.instance.mode == CARDINAL

    @property
    def init_pool(self) -> SolutionPool:
        """Witnesses from the classification; they cover every agent of M."""
        if self.cardinal:
            return SolutionPool([self.incumbent], self.z_star).extend(self.bounds.witness_pool)
        return self.partition.witness_pool

    @property
    def normalization(self) -> Optional[Bounds]:
        return self.bounds if self.cardinal else None


def prepare(instance: IlpInstance, config: SolverConfig = DEFAULT_CONFIG, *, near: NearOptConfig = EXACT,
            backend=None) -> Prepared:
    t0 = time.perf_counter()
    incumbent, z_star = solve_optimal(instance, config, backend)
    t_opt = time.perf_counter() - t0
    t0 = time.perf_counter()
    if instance.mode == CARDINAL:
        bounds = compute_bounds(instance, z_star, config, near=near, backend=backend)
        part = None
        M = bounds.m_sorted
    else:
        part = partition_agents(instance, z_star, config, near=near, incumbent=incumbent, backend=backend)
        bounds = None
        M = part.m_sorted
    return Prepared(instance, z_star, incumbent, M, t_opt, time.perf_counter() - t0, part, bounds)


def run_rule(prep: Prepared, rule: str, config: SolverConfig = DEFAULT_CONFIG, *, near: NearOptConfig = EXACT,
             cap: int = enumeration.DEFAULT_CAP, trials: int = 1000, seed: Optional[int] = None,
             rsd_exact_limit: int = rsd.EXACT_LIMIT, k: float = 2.0, backend=None) -> RuleReport:
    """Run one named rule on a prepared instance."""
    inst, z, M = prep.instance, prep.z_star, prep.M
    seed = config.seed if seed is None else seed
    t0 = time.perf_counter()
    if rule == "uniform":
        if prep.cardinal:
            raise ConfigError("uniform needs binary agents (no-good cuts)")
        pool = enumeration.enumerate_optimal(inst, z, cap, config, near=near, backend=backend)
        d, lam = enumeration.uniform_rule(pool)
        rep = RuleReport("uniform", d, pool, lam, iterations=len(pool), approximate=not pool.complete)
    elif rule in ("leximin", "maximin"):
        rep = colgen.leximin(inst, z, M, prep.init_pool, prep.normalization, config, near=near,
                             first_stage_only=(rule == "maximin"), backend=backend)
    elif rule in ("nash", "knorm"):
        obj = colgen.ConvexObjective(rule, k=k, normalization=prep.normalization)
        rep = colgen.minimize_convex(inst, z, M, obj, prep.init_pool, config, near=near, backend=backend)
    elif rule == "rsd":
        mode = "exact" if len(M) <= rsd_exact_limit else "sample"
        rep = rsd.rsd_distribution(inst, z, M, mode, config, trials=trials, seed=seed,
                                   exact_limit=rsd_exact_limit, near=near, backend=backend)
    elif rule in ("reindex", "perturb"):
        rep = rsd.heuristic(inst, rule, trials, seed, config, z_star=z, backend=backend)
    elif rule == "deterministic":
        pool = SolutionPool([prep.incumbent], z)
        rep = RuleReport("deterministic", prep.incumbent.x.copy(), pool, Lottery([1.0]))
    else:
        raise ConfigError(f"unknown rule {rule!r}")
    rep.wall_time_s = time.perf_counter() - t0
    return rep


# -- metrics ------------------------------------------------------------------------------

def min_utility(d: np.ndarray, M: Sequence[int], bounds: Optional[Bounds] = None) -> float:
    """Minimum selection probability over M (normalized utility gain in the cardinal case)."""
    M = list(M)
    if not M:
        return float("nan")
    if bounds is None:
        return float(np.min(d[M]))
    return float(np.min((d[M] - bounds.dystopia[M]) / bounds.span[M]))


def log_nash(d: np.ndarray, M: Sequence[int], bounds: Optional[Bounds] = None) -> float:
    """sum log d_i (or log(d_i - o_i)); -inf once any agent of M gets nothing."""
    M = list(M)
    base = d[M] if bounds is None else d[M] - bounds.dystopia[M]
    if np.any(base <= ZERO):
        return float("-inf")
    return float(np.sum(np.log(base)))


@dataclasses.dataclass
class MetricsRow:
    instance: str
    id: int
    m_size: int
    rule: str
    min_prob: float
    min_prob_ratio: float
    log_nash: float
    nash_ratio: float
    t_opt_s: float
    t_partition_s: float
    t_rule_s: float
    iterations: int

    def csv_values(self) -> list:
        return [self.instance, self.id, self.m_size, self.rule, _fmt(self.min_prob), _fmt(self.min_prob_ratio),
                _fmt(self.log_nash), _fmt(self.nash_ratio), f"{self.t_opt_s:.6f}",
                f"{self.t_partition_s:.6f}", f"{self.t_rule_s:.6f}", self.iterations]


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.10g}"


def metrics_rows(name: str, idx: int, prep: Prepared, reports: dict, reference: dict) -> list[MetricsRow]:
    """Rows for every rule; ratios are against the maximin optimum and the Nash optimum."""
    rows = []
    b = prep.normalization
    for rule, rep in reports.items():
        mp = min_utility(rep.distribution, prep.M, b)
        ln = log_nash(rep.distribution, prep.M, b)
        if not prep.M:
            mp_ratio, n_ratio = 1.0, 1.0
        else:
            mp_ratio = mp / reference["maximin"] if reference["maximin"] > ZERO else 1.0
            n_ratio = 0.0 if ln == float("-inf") else math.exp(ln - reference["log_nash"])
        rows.append(MetricsRow(name, idx, len(prep.M), rule, mp, mp_ratio, ln, n_ratio, prep.t_opt,
                               prep.t_partition, rep.wall_time_s, rep.iterations))
    return rows


# -- experiments ---------------------------------------------------------------------------

@dataclasses.dataclass
class ExperimentConfig:
    """What to run: an instance source, rule list, caps, seed and output directory.

    ``family`` is ``ke`` (kidney generator), ``tt`` (tardiness generator),
    ``files`` (``paths`` read with ``file_format``) or ``ilp`` (prebuilt ``ilps``).
    """

    rules: Sequence[str]
    family: str = "ke"
    sizes: Sequence[int] = (20,)
    count: int = 5
    betas: Sequence[float] = (0.5,)
    paths: Sequence[str] = ()
    file_format: str = "ke"
    ilps: Sequence[IlpInstance] = ()
    kidney_params: instances.KidneyParams = instances.KidneyParams()
    seed: int = 0
    epsilon: float = 0.0
    cap: int = enumeration.DEFAULT_CAP
    trials: int = 1000
    rsd_exact_limit: int = rsd.EXACT_LIMIT
    out_dir: Optional[str] = None
    workers: int = 1
    solver: SolverConfig = DEFAULT_CONFIG

    def validate(self):
        if not self.rules:
            raise ConfigError("at least one rule is required")
        allowed = set(DICHOTOMOUS_RULES) | set(CARDINAL_RULES)
        bad = [r for r in self.rules if r not in allowed]
        if bad:
            raise ConfigError(f"unknown rules {bad}")
        if self.family not in ("ke", "tt", "files", "ilp"):
            raise ConfigError(f"unknown family {self.family!r}")
        for p in self.paths:
            if not Path(p).exists():
                raise ConfigError(f"missing instance file {p}")
        NearOptConfig(self.epsilon)

    def instances(self) -> list[tuple[str, int, IlpInstance]]:
        out = []
        if self.family == "ke":
            for size in self.sizes:
                for i in range(self.count):
                    ke = instances.gen_kidney(size, self.seed * 100003 + size * 1009 + i, self.kidney_params)
                    out.append((f"KE{size}", i, instances.build_kidney_ilp(ke)))
        elif self.family == "tt":
            for size in self.sizes:
                for beta in self.betas:
                    for i in range(self.count):
                        tt = instances.gen_tardiness(size, beta, self.seed * 100003 + size * 1009 + i)
                        out.append((f"TT{size}-{beta:g}", i, instances.build_tardiness_ilp(tt)))
        elif self.family == "files":
            for i, p in enumerate(self.paths):
                out.append((Path(p).stem, i, load_instance(p, self.file_format)))
        else:
            for i, inst in enumerate(self.ilps):
                out.append((inst.name or "ilp", i, inst))
        return out


def load_instance(path, fmt: str) -> IlpInstance:
    if fmt == "ke":
        return instances.build_kidney_ilp(instances.read_kidney(path))
    if fmt == "tt":
        return instances.build_tardiness_ilp(instances.read_tardiness(path))
    if fmt == "ilp-json":
        return IlpInstance.from_json(Path(path).read_text())
    raise ConfigError(f"unknown format {fmt!r}")


def _run_one(args):
    name, idx, inst, cfg = args
    near = NearOptConfig(cfg.epsilon)
    prep = prepare(inst, cfg.solver, near=near)
    allowed = CARDINAL_RULES if prep.cardinal else DICHOTOMOUS_RULES
    reports = {}
    # the two references come from the optimizing rules themselves
    for rule in dict.fromkeys(list(cfg.rules) + ["maximin", "nash"]):
        if rule not in allowed:
            continue
        reports[rule] = run_rule(prep, rule, cfg.solver, near=near, cap=cfg.cap, trials=cfg.trials,
                                 seed=cfg.seed + idx, rsd_exact_limit=cfg.rsd_exact_limit)
    b = prep.normalization
    reference = {"maximin": min_utility(reports["maximin"].distribution, prep.M, b),
                 "log_nash": log_nash(reports["nash"].distribution, prep.M, b)}
    reports = {r: rep for r, rep in reports.items() if r in cfg.rules}
    for rule, rep in reports.items():
        if not rep.approximate and not rep.check():
            raise FairIlpError(f"{rule}: lottery does not realize the reported distribution")
    return metrics_rows(name, idx, prep, reports, reference)


@dataclasses.dataclass
class ExperimentResult:
    rows: list
    failures: list
    summary: dict

    @property
    def exit_code(self) -> int:
        return 0 if not self.failures else 2

    def csv_text(self, with_timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = CSV_COLUMNS if with_timing else [c for c in CSV_COLUMNS if not c.startswith("t_")]
        w.writerow(cols)
        for r in self.rows:
            vals = dict(zip(CSV_COLUMNS, r.csv_values()))
            w.writerow([vals[c] for c in cols])
        return buf.getvalue()


def _mean_std(values: list) -> dict:
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0, "n": int(arr.size)}


def summarize(rows: list[MetricsRow]) -> dict:
    """Ratios by |M| (with the 1/|M| reference) and timing means/stds per instance group."""
    by_m: dict = {}
    for r in rows:
        by_m.setdefault(r.m_size, {}).setdefault(r.rule, []).append(r)
    ratios = {}
    for m in sorted(by_m):
        ratios[str(m)] = {
            "reference_1_over_M": (1.0 / m) if m else None,
            "rules": {rule: {"min_prob_ratio": _mean_std([x.min_prob_ratio for x in rs]),
                             "nash_ratio": _mean_std([x.nash_ratio for x in rs])}
                      for rule, rs in sorted(by_m[m].items())},
        }
    groups: dict = {}
    for r in rows:
        groups.setdefault(r.instance, {}).setdefault(r.rule, []).append(r)
    timing = {}
    for g, per_rule in groups.items():
        any_rows = next(iter(per_rule.values()))
        timing[g] = {
            "mean_|M|": _mean_std([float(x.m_size) for x in any_rows]),
            "t_opt_s": _mean_std([x.t_opt_s for x in any_rows]),
            "t_partition_s": _mean_std([x.t_partition_s for x in any_rows]),
            "rules": {rule: _mean_std([x.t_rule_s for x in rs]) for rule, rs in sorted(per_rule.items())},
        }
    return {"by_M": ratios, "timing": timing}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every rule on every instance; failures are logged and the run continues.

    Writes ``metrics.csv`` and ``summary.json`` into ``out_dir`` when given.
    """
    config.validate()
    jobs = [(name, idx, inst, config) for name, idx, inst in config.instances()]
    rows: list[MetricsRow] = []
    failures: list[dict] = []

    def collect(job, fut_result):
        try:
            rows.extend(fut_result())
        except Exception as exc:  # keep going: one bad instance must not sink the run
            log.warning("instance %s/%s failed: %s", job[0], job[1], exc)
            failures.append({"instance": job[0], "id": job[1], "error": f"{type(exc).__name__}: {exc}"})

    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(_run_one, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                collect(job, fut.result)
    else:
        for job in jobs:
            collect(job, lambda job=job: _run_one(job))
    rule_rank = {r: k for k, r in enumerate(config.rules)}
    rows.sort(key=lambda r: (r.instance, r.id, rule_rank.get(r.rule, 99)))
    summary = summarize(rows)
    summary["config"] = {
        "family": config.family, "sizes": list(config.sizes), "count": config.count,
        "betas": list(config.betas), "rules": list(config.rules), "seed": config.seed,
        "epsilon": config.epsilon, "cap": config.cap, "trials": config.trials,
        "kidney_params": config.kidney_params.to_dict(), "omega": config.solver.omega,
    }
    summary["failures"] = failures
    result = ExperimentResult(rows, failures, summary)
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(result.csv_text())
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return result


# -- axiom audit ----------------------------------------------------------------------------

PoolRule = Callable[[SolutionPool], np.ndarray]


def _via_instance(rule: str) -> PoolRule:
    """Run the real solver-based rule on an ILP whose optimal set is the pool."""

    def run(pool: SolutionPool) -> np.ndarray:
        X = pool.matrix().astype(int)
        inst = enumeration.instance_from_outcomes([tuple(r) for r in X])
        prep = prepare(inst)
        return run_rule(prep, rule).distribution

    return run


def _uniform(pool: SolutionPool) -> np.ndarray:
    return enumeration.uniform_rule(pool)[0]


def _first(pool: SolutionPool) -> np.ndarray:
    return pool[0].x.copy()


POOL_RULES: dict = {
    "uniform": _uniform,
    "leximin": _via_instance("leximin"),
    "nash": _via_instance("nash"),
    "rsd": _via_instance("rsd"),
    "deterministic": _first,
}


def canonical_pool(X: np.ndarray) -> SolutionPool:
    """Pool in sorted row order, so rules that look at pool order see a label-free input."""
    rows = sorted({tuple(int(t) for t in r) for r in X})
    return SolutionPool.from_vectors(rows)


def pareto_improvement(X: np.ndarray, d: np.ndarray, M: Sequence[int], tol: float = 1e-7):
    """A distribution in Conv(X) weakly dominating d on M with positive total gain, or None."""
    M = list(M)
    S = len(X)
    # max sum_M (X^T lam)_i  s.t.  (X^T lam)_i >= d_i on M,  sum lam = 1
    res = linprog(-X[:, M].sum(axis=1), A_ub=-X[:, M].T, b_ub=-(d[M] - tol),
                  A_eq=np.ones((1, S)), b_eq=[1.0], bounds=[(0, None)] * S, method="highs")
    if res.status != 0:
        return None
    better = res.x @ X
    if np.sum(better[M] - d[M]) > 1e-6:
        return better
    return None


def unanimous_groups(X: np.ndarray, M: Sequence[int]) -> list[list[int]]:
    """Maximal agent sets in M with identical pool columns."""
    groups: dict = {}
    for i in M:
        groups.setdefault(tuple(X[:, i]), []).append(int(i))
    return list(groups.values())


def axiom_audit(pool: SolutionPool, d: np.ndarray, M: Optional[Sequence[int]] = None, *,
                rule: Optional[PoolRule] = None, tol: float = 1e-6, permutations: int = 24,
                seed: int = 0) -> dict:
    """Check IFS, UFS, Pareto efficiency and, given the rule itself, anonymity and neutrality."""
    if not pool.complete:
        raise PoolIncomplete("the audit needs the complete optimal set")
    X = pool.matrix()
    d = np.asarray(d, dtype=float)
    M = enumeration.varying_agents(X) if M is None else sorted(int(i) for i in M)
    report: dict = {"M": M}
    m = len(M)
    short = [(i, float(d[i])) for i in M if d[i] < 1.0 / m - tol] if m else []
    report["IFS"] = {"pass": not short, "witness": short[:1] or None, "threshold": 1.0 / m if m else None}
    ufs_bad = []
    for K in unanimous_groups(X, M):
        for i in K:
            if d[i] < len(K) / m - tol:
                ufs_bad.append({"group": K, "agent": i, "value": float(d[i]), "threshold": len(K) / m})
    report["UFS"] = {"pass": not ufs_bad, "witness": ufs_bad[:1] or None}
    better = pareto_improvement(X, d, M) if m else None
    report["Pareto"] = {"pass": better is None, "witness": None if better is None else better.tolist()}
    report["average_fair_share"] = "not audited"
    report["core_fair_share"] = "not audited"
    if rule is not None and X.shape[1] <= 8:
        rng = np.random.Generator(np.random.Philox(seed))
        n = X.shape[1]
        anon = None
        base = rule(canonical_pool(X))
        for _ in range(permutations):
            perm = rng.permutation(n)
            # agent perm[j] of the original becomes agent j
            d2 = rule(canonical_pool(X[:, perm]))
            if not np.allclose(d2, base[perm], atol=1e-5):
                anon = {"relabeling": perm.tolist(), "expected": base[perm].tolist(), "got": d2.tolist()}
                break
        report["anonymity"] = {"pass": anon is None, "witness": anon}
        neut = None
        for _ in range(permutations):
            order = rng.permutation(len(X))
            d2 = rule(SolutionPool.from_vectors(X[order]))
            if not np.allclose(d2, base, atol=1e-5):
                neut = {"order": order.tolist(), "got": d2.tolist()}
                break
        report["neutrality"] = {"pass": neut is None, "witness": neut}
    return report


def audit_suite() -> dict:
    """Small named pools on which the classic verdicts can be observed."""
    return {
        "ifs_counterexample": [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1)],
        "example1": [(1, 0, 0, 0), (0, 1, 1, 0), (0, 1, 0, 1)],
        "twins_knapsack": [(1, 1, 0, 0), (1, 0, 1, 0), (1, 0, 0, 1), (0, 1, 1, 1)],
        "unanimous_pair": [(1, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)],
        "dominated_uniform": [(1, 0), (1, 1)],
    }


def run_audit(rules: Sequence[str] = tuple(POOL_RULES), suite: Optional[dict] = None) -> dict:
    """Audit every rule on every suite pool; returns {pool: {rule: report}}."""
    suite = audit_suite() if suite is None else suite
    out: dict = {}
    for name, rows in suite.items():
        pool = SolutionPool.from_vectors(rows)
        out[name] = {}
        for rule in rules:
            fn = POOL_RULES[rule]
            d = fn(canonical_pool(pool.matrix()))
            out[name][rule] = axiom_audit(pool, d, rule=fn)
    return out
