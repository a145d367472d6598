"""Serial dictatorship, random serial dictatorship and the two solver-randomization heuristics."""

from __future__ import annotations

import dataclasses
import itertools
import math
import time
from typing import Iterable, Optional, Sequence

import numpy as np

from . import backend as _backend
from .errors import ConfigError, NonIntegerObjective, SolverError, TooLargeForExact
from .model import (
    CARDINAL,
    DEFAULT_CONFIG,
    EXACT,
    IlpInstance,
    Lottery,
    NearOptConfig,
    Row,
    RuleReport,
    Solution,
    SolutionPool,
    SolverConfig,
    solve,
    solve_optimal,
    with_optimality_bound,
)
from .partition import Bounds, partition_agents

EXACT_LIMIT = 7


@dataclasses.dataclass(frozen=True)
class Ordering:
    """A strict ordering of agents; ``sigma[0]`` is the first dictator."""

    sigma: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(int(a) for a in self.sigma))
        if len(set(self.sigma)) != len(self.sigma):
            raise ValueError("ordering repeats an agent")

    @classmethod
    def random(cls, agents: Iterable[int], rng: np.random.Generator) -> "Ordering":
        agents = list(agents)
        return cls(tuple(agents[i] for i in rng.permutation(len(agents))))

    @property
    def inverse(self) -> dict:
        """agent -> position (0-based)."""
        return {a: k for k, a in enumerate(self.sigma)}

    def __len__(self):
        return len(self.sigma)

    def __iter__(self):
        return iter(self.sigma)


@dataclasses.dataclass(frozen=True)
class PerturbationVector:
    """delta_k = 2^-k for k = 1..block_size; each block repeats the same vector."""

    block_size: int

    @classmethod
    def for_precision(cls, omega: float) -> "PerturbationVector":
        if not 0 < omega < 1:
            raise ConfigError("omega must lie in (0, 1)")
        return cls(int(math.floor(-math.log2(omega))))

    def delta(self, length: int) -> np.ndarray:
        k = min(length, self.block_size)
        return 0.5 ** np.arange(1, k + 1)

    def blocks(self, ordering: Sequence[int]) -> list[tuple]:
        seq = tuple(ordering)
        return [seq[s:s + self.block_size] for s in range(0, len(seq), self.block_size)]


def _fix_rows(fixed: dict, band: float = 0.0) -> list[Row]:
    return [Row.of({a: 1.0}, "=", val, tol=band) for a, val in fixed.items()]


class _Dictator:
    """Algorithm-1 style probing with a memo keyed by the accepted set."""

    def __init__(self, instance, z_star, config, near, backend):
        self.bounded = with_optimality_bound(instance, z_star, near, config.omega)
        self.config = config
        self.backend = backend
        self.memo: dict = {}
        self.solver_calls = 0

    def probe(self, accepted: frozenset) -> Optional[Solution]:
        if accepted in self.memo:
            return self.memo[accepted]
        out = solve(self.bounded, extra_rows=_fix_rows({a: 1.0 for a in sorted(accepted)}),
                    config=self.config, backend=self.backend)
        self.solver_calls += 1
        sol = out[0] if out is not None else None
        self.memo[accepted] = sol
        return sol

    def run(self, sigma: Iterable[int], start: Solution) -> Solution:
        current = start
        accepted: frozenset = frozenset()
        for a in sigma:
            trial = accepted | {a}
            if current.x[a] == 1 and trial not in self.memo:
                # the incumbent already selects a: no solve needed
                self.memo[trial] = current
                accepted = trial
                continue
            sol = self.probe(trial)
            if sol is not None:
                accepted, current = trial, sol
        return current


def serial_dictatorship(instance: IlpInstance, z_star: float, sigma, config: SolverConfig = DEFAULT_CONFIG,
                        *, near: NearOptConfig = EXACT, start: Optional[Solution] = None,
                        backend=None) -> Solution:
    """Each dictator in turn is selected whenever an optimal solution keeps all earlier picks."""
    if instance.mode == CARDINAL:
        raise ConfigError("use serial_dictatorship_cardinal for cardinal instances")
    backend = backend or _backend.default_backend()
    dictator = _Dictator(instance, z_star, config, near, backend)
    if start is None:
        start = dictator.probe(frozenset())
        if start is None:
            raise SolverError("optimality-bounded instance infeasible")
    return dictator.run(Ordering(sigma), start)


def serial_dictatorship_cardinal(instance: IlpInstance, z_star: float, sigma, bounds: Optional[Bounds] = None,
                                 config: SolverConfig = DEFAULT_CONFIG, *, near: NearOptConfig = EXACT,
                                 backend=None) -> Solution:
    """Each dictator maximizes its own value over the optimal set given earlier fixings."""
    backend = backend or _backend.default_backend()
    bounded = with_optimality_bound(instance, z_star, near, config.omega)
    fixed: dict = {}
    current = None
    for a in Ordering(sigma):
        if bounds is not None and a not in bounds.M:
            continue
        c = np.zeros(instance.n_vars)
        c[a] = 1.0
        out = solve(bounded, c, maximize=True, extra_rows=_fix_rows(fixed, config.omega),
                    config=config, backend=backend)
        if out is None:
            raise SolverError("fixings became infeasible during serial dictatorship")
        current = out[0]
        fixed[a] = float(current.x[a])
    if current is None:
        current, _ = solve_optimal(instance, config, backend)
    return current


def _check_integer_objective(instance: IlpInstance):
    for name, vec, integer in (("v", instance.v, instance.x_integer), ("w", instance.w, instance.y_integer)):
        if not np.allclose(vec, np.round(vec), atol=1e-9):
            raise NonIntegerObjective(f"{name} must be integer for the perturbation method")
        if np.any((vec != 0) & ~integer):
            raise NonIntegerObjective(f"continuous variables carry {name} weight")


def rsd_perturbation(instance: IlpInstance, sigma, config: SolverConfig = DEFAULT_CONFIG, *,
                     backend=None) -> Solution:
    """One solve per block of the objective perturbed by 2^-k in dictator order.

    Blocks hold at most floor(-log2 omega) agents; after each block their
    values are fixed by equality rows before the next block is perturbed.
    """
    if instance.mode == CARDINAL:
        raise ConfigError("perturbation RSD needs binary agents; use serial_dictatorship_cardinal")
    _check_integer_objective(instance)
    backend = backend or _backend.default_backend()
    pert = PerturbationVector.for_precision(config.omega)
    fixed: dict = {}
    current = None
    for block in pert.blocks(Ordering(sigma)):
        c = instance.objective.copy()
        c[list(block)] += pert.delta(len(block))
        out = solve(instance, c, extra_rows=_fix_rows(fixed), config=config, backend=backend)
        if out is None:
            raise SolverError("perturbed solve infeasible")
        current = out[0]
        for a in block:
            fixed[a] = float(current.x[a])
    if current is None:
        current, _ = solve_optimal(instance, config, backend)
    return current


def _pool_lottery(solutions: list[Solution], z_star: float, weights: list[float]):
    counts: dict = {}
    order: list[Solution] = []
    for s, w in zip(solutions, weights):
        if s.key not in counts:
            counts[s.key] = 0.0
            order.append(s)
        counts[s.key] += w
    pool = SolutionPool(order, z_star, complete=False)
    lam = np.array([counts[s.key] for s in pool])
    return pool, Lottery(lam / lam.sum())


def rsd_distribution(instance: IlpInstance, z_star: float, M: Optional[Iterable[int]] = None,
                     mode: str = "exact", config: SolverConfig = DEFAULT_CONFIG, *,
                     trials: int = 1000, seed: Optional[int] = None, exact_limit: int = EXACT_LIMIT,
                     bounds: Optional[Bounds] = None, near: NearOptConfig = EXACT,
                     backend=None) -> RuleReport:
    """Random serial dictatorship over the agents in M.

    ``exact`` averages all |M|! orderings (memoized on accepted sets);
    ``sample`` averages ``trials`` orderings drawn with a Philox generator and
    reports per-agent standard errors in ``extras["stderr"]``.
    """
    start_t = time.perf_counter()
    backend = backend or _backend.default_backend()
    cardinal = instance.mode == CARDINAL
    if M is None:
        M = bounds.M if bounds is not None else partition_agents(instance, z_star, config, near=near,
                                                                 backend=backend).M
    M = sorted(int(i) for i in M)
    if mode not in ("exact", "sample"):
        raise ConfigError(f"unknown RSD mode {mode!r}")
    if mode == "exact" and len(M) > exact_limit:
        raise TooLargeForExact(f"|M| = {len(M)} exceeds exact_limit = {exact_limit}")
    if mode == "sample" and trials < 1:
        raise ConfigError("trials must be positive")

    if cardinal:
        memo: dict = {}
        calls = [0]

        def run(sig):
            key = tuple(sig)
            if key not in memo:
                memo[key] = serial_dictatorship_cardinal(instance, z_star, sig, None, config,
                                                         near=near, backend=backend)
                calls[0] += len(sig)
            return memo[key]
    else:
        dictator = _Dictator(instance, z_star, config, near, backend)
        first = dictator.probe(frozenset())
        if first is None:
            raise SolverError("optimality-bounded instance infeasible")

        def run(sig):
            return dictator.run(sig, first)

    if mode == "exact":
        orderings = list(itertools.permutations(M))
    else:
        rng = np.random.Generator(np.random.Philox(config.seed if seed is None else seed))
        orderings = [tuple(Ordering.random(M, rng)) for _ in range(trials)]
    results = [run(sig) for sig in orderings]
    X = np.vstack([r.x[: instance.n_agents] for r in results])
    d = X.mean(axis=0)
    stderr = X.std(axis=0, ddof=1) / math.sqrt(len(X)) if len(X) > 1 else np.zeros_like(d)
    pool, lottery = _pool_lottery(results, z_star, [1.0] * len(results))
    # the lottery average reproduces d up to summation order
    d = lottery.weights @ pool.matrix()
    calls = calls[0] if cardinal else dictator.solver_calls
    return RuleReport(
        "rsd" if mode == "exact" else "rsd_sample", d, pool, lottery,
        iterations=len(orderings), pricing_calls=calls,
        wall_time_s=time.perf_counter() - start_t, approximate=(mode == "sample"),
        extras={"mode": mode, "stderr": stderr.tolist(), "orderings": len(orderings)},
    )


def sample_solution(instance: IlpInstance, z_star: float, M: Iterable[int],
                    config: SolverConfig = DEFAULT_CONFIG, *, seed: Optional[int] = None,
                    backend=None) -> Solution:
    """Draw one ordering and return its serial-dictatorship solution (an RSD implementation)."""
    rng = np.random.Generator(np.random.Philox(config.seed if seed is None else seed))
    sigma = Ordering.random(sorted(M), rng)
    if instance.mode == CARDINAL:
        return serial_dictatorship_cardinal(instance, z_star, sigma, None, config, backend=backend)
    return serial_dictatorship(instance, z_star, sigma, config, backend=backend)


def heuristic(instance: IlpInstance, kind: str = "reindex", trials: int = 100, seed: Optional[int] = None,
              config: SolverConfig = DEFAULT_CONFIG, *, z_star: Optional[float] = None, raw: bool = False,
              max_redraws: int = 50, backend=None) -> RuleReport:
    """Empirical distribution of a randomized solver call.

    ``reindex`` permutes the column order handed to the solver. ``perturb``
    adds gamma_i ~ U[-a, a], a = mean(v), to each agent's objective weight and
    keeps the answer only if it is optimal for the true objective; after
    ``max_redraws`` rejections the perturbed objective is solved over the
    optimal set instead. ``raw`` keeps every answer, optimal or not.
    """
    if kind not in ("reindex", "perturb"):
        raise ConfigError(f"unknown heuristic {kind!r}")
    if trials < 1:
        raise ConfigError("trials must be positive")
    start_t = time.perf_counter()
    backend = backend or _backend.default_backend()
    if z_star is None:
        _, z_star = solve_optimal(instance, config, backend)
    rng = np.random.Generator(np.random.Philox(config.seed if seed is None else seed))
    n, nv = instance.n_agents, instance.n_vars
    threshold = z_star - config.omega * max(1.0, abs(z_star))
    bounded = None
    found: list[Solution] = []
    rejections = fallbacks = 0
    spread = float(np.sum(instance.v)) / n
    for _ in range(trials):
        if kind == "reindex":
            order = rng.permutation(nv)
            sol, _ = solve(instance, config=config, backend=backend, column_order=order)
            found.append(sol)
            continue
        for _attempt in range(max_redraws):
            c = instance.objective.copy()
            c[:n] += rng.uniform(-spread, spread, size=n)
            sol, _ = solve(instance, c, config=config, backend=backend)
            if raw or instance.objective @ np.concatenate([sol.x, sol.y]) >= threshold:
                break
            rejections += 1
        else:
            bounded = bounded or with_optimality_bound(instance, z_star, EXACT, config.omega)
            sol, _ = solve(bounded, c, config=config, backend=backend)
            fallbacks += 1
        found.append(sol)
    pool, lottery = _pool_lottery(found, z_star, [1.0] * len(found))
    d = lottery.weights @ pool.matrix()
    return RuleReport(
        kind, d, pool, lottery, iterations=trials, wall_time_s=time.perf_counter() - start_t,
        approximate=True, extras={"rejections": rejections, "fallbacks": fallbacks, "raw": raw},
    )
