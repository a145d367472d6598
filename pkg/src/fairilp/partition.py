"""Agent partitioning (always / never / sometimes selected) and utopia/dystopia bounds."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .errors import Infeasible
from .model import (
    DEFAULT_CONFIG,
    EXACT,
    IlpInstance,
    NearOptConfig,
    Row,
    Solution,
    SolutionPool,
    SolverConfig,
    bound_value,
    solve,
    solve_optimal,
    with_optimality_bound,
)


@dataclasses.dataclass(frozen=True)
class AgentPartition:
    Y: frozenset
    N: frozenset
    M: frozenset
    solver_calls: int
    witness_pool: SolutionPool

    @property
    def m_sorted(self) -> list[int]:
        return sorted(self.M)

    def to_dict(self) -> dict:
        return {"Y": sorted(self.Y), "N": sorted(self.N), "M": sorted(self.M),
                "solver_calls": self.solver_calls}


@dataclasses.dataclass(frozen=True)
class Bounds:
    """Per-agent utopia (best) and dystopia (worst) values over the optimal set."""

    utopia: np.ndarray
    dystopia: np.ndarray
    M: frozenset
    solver_calls: int = 0
    witness_pool: Optional[SolutionPool] = None

    @property
    def span(self) -> np.ndarray:
        return self.utopia - self.dystopia

    @property
    def m_sorted(self) -> list[int]:
        return sorted(self.M)

    def to_dict(self) -> dict:
        return {"utopia": self.utopia.tolist(), "dystopia": self.dystopia.tolist(),
                "M": sorted(self.M), "solver_calls": self.solver_calls}


def partition_agents(instance: IlpInstance, z_star: float, config: SolverConfig = DEFAULT_CONFIG,
                     *, near: NearOptConfig = EXACT, incumbent: Optional[Solution] = None,
                     backend=None) -> AgentPartition:
    """Classify agents with at most n + 1 solves.

    Each probe solves the optimality-bounded instance with the single extra row
    ``x_i = 1 - x*_i``. Agents already seen flipped in some witness are skipped.
    """
    calls = 0
    if incumbent is None:
        incumbent, _ = solve_optimal(instance, config, backend)
        calls += 1
    bounded = with_optimality_bound(instance, z_star, near, config.omega)
    threshold = bound_value(z_star, near) - config.omega * max(1.0, abs(z_star))
    x_star = incumbent.x
    witnesses = [incumbent]
    flipped = np.zeros(instance.n_agents, dtype=bool)
    Y, N, M = set(), set(), set()
    for i in range(instance.n_agents):
        if not flipped[i]:
            target = 1.0 - x_star[i]
            out = solve(bounded, extra_rows=[Row.of({i: 1.0}, "=", target)], config=config,
                        backend=backend, abort_below=threshold)
            calls += 1
            if out is not None and out[0].objective >= threshold:
                sol = out[0]
                witnesses.append(sol)
                flipped |= sol.x != x_star
        if flipped[i]:
            M.add(i)
        elif x_star[i] == 1:
            Y.add(i)
        else:
            N.add(i)
    pool = SolutionPool(witnesses, z_star, complete=False)
    return AgentPartition(frozenset(Y), frozenset(N), frozenset(M), calls, pool)


def compute_bounds(instance: IlpInstance, z_star: float, config: SolverConfig = DEFAULT_CONFIG,
                   *, near: NearOptConfig = EXACT, backend=None) -> Bounds:
    """Utopia u_i = max x_i and dystopia o_i = min x_i over the optimal set (2n solves at most).

    A witness whose x_i already sits at the domain bound answers that side
    without a solve.
    """
    n = instance.n_agents
    bounded = with_optimality_bound(instance, z_star, near, config.omega)
    u = np.empty(n)
    o = np.empty(n)
    witnesses: list[Solution] = []
    calls = 0
    for i in range(n):
        for sense, out in (("max", u), ("min", o)):
            limit = instance.x_ub[i] if sense == "max" else instance.x_lb[i]
            seen = [s.x[i] for s in witnesses]
            if limit in seen:
                out[i] = limit
                continue
            c = np.zeros(instance.n_vars)
            c[i] = 1.0
            res = solve(bounded, c, maximize=(sense == "max"), config=config, backend=backend)
            calls += 1
            if res is None:
                raise Infeasible("optimality-bounded instance infeasible; z_star wrong?")
            sol, _ = res
            witnesses.append(sol)
            out[i] = sol.x[i]
    M = frozenset(int(i) for i in np.flatnonzero(u - o > config.omega))
    return Bounds(u, o, M, calls, SolutionPool(witnesses, z_star))
