"""Enumeration of optimal solutions, the uniform rule, greedy covers and explicit-pool oracles.

The oracles in here (``brute_force_rule``, ``exhaustive_optimal``) never touch
column generation: they work on a fully listed pool, solving the rule's convex
program directly with cvxpy or enumerating orderings. Tests use them to check
the column-generation engines.
"""

from __future__ import annotations

import itertools
import math
import warnings
from typing import Iterable, Optional, Sequence

import cvxpy as cp
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .backend import CompiledRows
from .errors import EmptyPool, InvalidInstance, PoolIncomplete
from .model import (
    DEFAULT_CONFIG,
    DICHOTOMOUS,
    EXACT,
    IlpInstance,
    Lottery,
    NearOptConfig,
    Row,
    Solution,
    SolutionPool,
    SolverConfig,
    solve,
    with_optimality_bound,
)
from .partition import Bounds

DEFAULT_CAP = 1000


def _nogood_row(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Coefficients and lower bound of the cut excluding the 0/1 vector ``x``."""
    ones = x > 0.5
    coef = np.where(ones, -1.0, 1.0)
    return coef, 1.0 - float(ones.sum())


def enumerate_optimal(instance: IlpInstance, z_star: float, cap: int = DEFAULT_CAP,
                      config: SolverConfig = DEFAULT_CONFIG, *, near: NearOptConfig = EXACT,
                      backend=None) -> SolutionPool:
    """List optimal x-projections by repeatedly solving and cutting off the last one."""
    if instance.mode != DICHOTOMOUS:
        raise InvalidInstance("no-good enumeration needs binary agent variables")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    bounded = with_optimality_bound(instance, z_star, near, config.omega)
    n, n_vars = instance.n_agents, instance.n_vars
    cut_coefs: list[np.ndarray] = []
    cut_lo: list[float] = []
    found: list[Solution] = []
    complete = False
    while len(found) < cap:
        extra = None
        if cut_coefs:
            block = np.zeros((len(cut_coefs), n_vars))
            block[:, :n] = np.vstack(cut_coefs)
            extra = CompiledRows(sparse.csr_matrix(block), np.asarray(cut_lo),
                                 np.full(len(cut_lo), np.inf))
        out = solve(bounded, config=config, backend=backend, extra_compiled=extra)
        if out is None:
            complete = True
            break
        sol = out[0]
        found.append(sol)
        coef, lo = _nogood_row(sol.x)
        cut_coefs.append(coef)
        cut_lo.append(lo)
    return SolutionPool(found, z_star, complete)


def uniform_rule(pool: SolutionPool) -> tuple[np.ndarray, Lottery]:
    """Equal weight on every pool entry. Only exact when ``pool.complete``."""
    if len(pool) == 0:
        raise EmptyPool("uniform rule needs at least one solution")
    lam = np.full(len(pool), 1.0 / len(pool))
    return lam @ pool.matrix(), Lottery(lam)


def greedy_cover(instance: IlpInstance, z_star: float, M: Iterable[int],
                 config: SolverConfig = DEFAULT_CONFIG, *, near: NearOptConfig = EXACT,
                 backend=None) -> SolutionPool:
    """Optimal solutions jointly selecting every agent of ``M`` at least once.

    Each round adds ``sum_{i uncovered} x_i >= 1`` to the bounded instance. This
    is a column-pool initializer, not a partitioning method: a cover can miss
    the fact that an agent is only sometimes selected.
    """
    uncovered = set(int(i) for i in M)
    if not uncovered:
        return SolutionPool([], z_star)
    bounded = with_optimality_bound(instance, z_star, near, config.omega)
    found: list[Solution] = []
    while uncovered:
        row = Row.of({i: 1.0 for i in uncovered}, ">=", 1.0)
        out = solve(bounded, extra_rows=[row], config=config, backend=backend)
        if out is None:
            break
        sol = out[0]
        found.append(sol)
        uncovered -= {i for i in uncovered if sol.x[i] > 0.5}
    return SolutionPool(found, z_star)


def cardinal_cover(bounds: Bounds) -> SolutionPool:
    """Witnesses attaining each agent's utopia value (cardinal analogue of a cover)."""
    return bounds.witness_pool if bounds.witness_pool is not None else SolutionPool()


# -- explicit oracles --------------------------------------------------------------

def instance_from_outcomes(outcomes: Sequence[Sequence[int]], n: Optional[int] = None,
                           name: str = "") -> IlpInstance:
    """ILP whose optimal x-projections are exactly ``outcomes``.

    Constant objective plus one no-good cut per excluded 0/1 vector.
    """
    outcomes = [tuple(int(t) for t in o) for o in outcomes]
    n = len(outcomes[0]) if n is None else n
    keep = set(outcomes)
    rows = []
    for vec in itertools.product((0, 1), repeat=n):
        if vec in keep:
            continue
        coef, lo = _nogood_row(np.asarray(vec, float))
        rows.append(Row.of(enumerate(coef), ">=", lo))
    return IlpInstance.binary(np.zeros(n), rows, name=name)


def exhaustive_optimal(instance: IlpInstance, tol: float = 1e-6) -> tuple[float, list[np.ndarray]]:
    """All optimal z-vectors of a small all-binary instance by full domain enumeration."""
    if not (np.all(instance.integrality == 1) and np.all(instance.lb == 0) and np.all(instance.ub == 1)):
        raise InvalidInstance("exhaustive enumeration needs an all-binary instance")
    nv = instance.n_vars
    if nv > 20:
        raise InvalidInstance("too many variables for exhaustive enumeration")
    Z = np.array(list(itertools.product((0.0, 1.0), repeat=nv)))
    comp = instance.compiled
    ok = np.ones(len(Z), dtype=bool)
    if comp.A.shape[0]:
        vals = (comp.A @ Z.T).T
        ok = np.all((vals >= comp.lo - tol) & (vals <= comp.hi + tol), axis=1)
    if not ok.any():
        return math.nan, []
    obj = Z @ instance.objective
    best = obj[ok].max()
    return float(best), [z for z, good, o in zip(Z, ok, obj) if good and o >= best - tol]


def exhaustive_pool(instance: IlpInstance) -> SolutionPool:
    z_star, zs = exhaustive_optimal(instance)
    n = instance.n_agents
    sols = [Solution(z[:n], z[n:], z_star) for z in zs]
    return SolutionPool(sols, z_star, complete=True)


def varying_agents(X: np.ndarray, tol: float = 1e-9) -> list[int]:
    if len(X) == 0:
        return []
    return [int(i) for i in np.flatnonzero(X.max(axis=0) - X.min(axis=0) > tol)]


def _scaled(X: np.ndarray, M: list[int], normalization: Optional[Bounds]) -> tuple[np.ndarray, np.ndarray]:
    """Column scale/shift so that utility_i = scale_i * d_i - shift_i (identity if unnormalized)."""
    if normalization is None:
        return np.ones(len(M)), np.zeros(len(M))
    span = normalization.span[M]
    return 1.0 / span, normalization.dystopia[M] / span


def _lex_oracle(X: np.ndarray, M: list[int], normalization, tol: float, first_stage_only=False):
    S = len(X)
    scale, shift = _scaled(X, M, normalization)
    U = X[:, M] * scale - shift  # S x |M| utilities
    fixed: dict[int, float] = {}
    lam = np.full(S, 1.0 / S)
    gamma_first = None
    while len(fixed) < len(M):
        free = [j for j in range(len(M)) if j not in fixed]

        def lp(objective_row: Optional[int], gamma: Optional[float]):
            # variables (lambda, t); maximize t
            A_ub, b_ub = [], []
            for j in free:
                row = np.append(-U[:, j], 0.0)
                if objective_row is None:
                    row[-1] = 1.0
                    A_ub.append(row)
                    b_ub.append(0.0)
                else:
                    A_ub.append(row)
                    b_ub.append(-gamma + tol * 1e-2)
            if objective_row is not None:
                A_ub.append(np.append(-U[:, objective_row], 1.0))
                b_ub.append(-gamma)
            for j, val in fixed.items():
                A_ub.append(np.append(U[:, j], 0.0))
                b_ub.append(val + 1e-9)
                A_ub.append(np.append(-U[:, j], 0.0))
                b_ub.append(-val + 1e-9)
            A_eq = [np.append(np.ones(S), 0.0)]
            res = linprog(np.append(np.zeros(S), -1.0), A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                          A_eq=np.array(A_eq), b_eq=[1.0],
                          bounds=[(0, None)] * S + [(None, None)], method="highs")
            if res.status != 0:
                raise RuntimeError(f"oracle LP failed: {res.message}")
            return -res.fun, res.x[:S]

        gamma, lam = lp(None, None)
        if gamma_first is None:
            gamma_first = gamma
            if first_stage_only:
                break
        newly = []
        for j in free:
            theta, _ = lp(j, gamma)
            if theta <= tol:
                newly.append(j)
        if not newly:
            # numerical safety; the minimum must be attained by someone
            newly = [min(free, key=lambda j: lam @ U[:, j])]
        for j in newly:
            fixed[j] = gamma
    return lam, gamma_first


def _convex_oracle(X: np.ndarray, M: list[int], kind: str, k: float,
                   normalization: Optional[Bounds]) -> np.ndarray:
    S = len(X)
    lam = cp.Variable(S, nonneg=True)
    d = X[:, M].T @ lam
    if kind == "nash":
        base = d - (normalization.dystopia[M] if normalization is not None else 0.0)
        objective = cp.Maximize(cp.sum(cp.log(base)))
    else:
        objective = cp.Minimize(cp.norm(d, k))
    prob = cp.Problem(objective, [cp.sum(lam) == 1])
    best = None
    # tight tolerances occasionally end "inaccurate" while still being the better point
    for tol, kkt in ((1e-12, 1e-10), (1e-10, 1e-8)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol,
                       tol_ktratio=kkt, max_iter=500)
        if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            better = best is None or (prob.value > best[0] if kind == "nash" else prob.value < best[0])
            if better:
                best = (prob.value, np.asarray(lam.value, float))
        if prob.status == cp.OPTIMAL:
            break
    if best is None:
        raise RuntimeError(f"convex oracle failed: {prob.status}")
    vals = np.clip(best[1], 0.0, None)
    return vals / vals.sum()


def _rsd_oracle(X: np.ndarray, M: list[int], tol: float = 1e-9) -> np.ndarray:
    total = np.zeros(X.shape[1])
    count = 0
    for order in itertools.permutations(M):
        alive = np.arange(len(X))
        for a in order:
            best = X[alive, a].max()
            alive = alive[X[alive, a] >= best - tol]
        # remaining solutions agree on every agent of M; any representative will do
        total += X[alive[0]]
        count += 1
    return total / count if count else X[0].copy()


def brute_force_rule(pool: SolutionPool, rule: str, normalization: Optional[Bounds] = None,
                     *, k: float = 2.0, tol: float = 1e-7) -> np.ndarray:
    """Exact rule value over Conv(pool x-projections); requires a complete pool.

    ``rule`` is one of ``leximin``, ``maximin``, ``nash``, ``knorm`` (with ``k``)
    or ``rsd_exact``. The ``maximin`` distribution is one maximizer, not a
    canonical one; only its minimum is unique.
    """
    if not pool.complete:
        raise PoolIncomplete("brute-force oracles need the complete optimal set")
    if len(pool) == 0:
        raise EmptyPool("empty pool")
    X = pool.matrix()
    M = sorted(normalization.M) if normalization is not None else varying_agents(X)
    if not M:
        return X[0].copy()
    if rule in ("leximin", "maximin"):
        lam, _ = _lex_oracle(X, M, normalization, tol, first_stage_only=(rule == "maximin"))
    elif rule == "nash":
        lam = _convex_oracle(X, M, "nash", 0, normalization)
    elif rule == "knorm":
        lam = _convex_oracle(X, M, "knorm", k, normalization)
    elif rule == "rsd_exact":
        return _rsd_oracle(X, M)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return lam @ X


def maximin_value(pool: SolutionPool, normalization: Optional[Bounds] = None) -> float:
    """Best achievable minimum (normalized) utility over M, by a direct LP on the pool."""
    X = pool.matrix()
    M = sorted(normalization.M) if normalization is not None else varying_agents(X)
    if not M:
        return 1.0
    _, gamma = _lex_oracle(X, M, normalization, 1e-7, first_stage_only=True)
    return gamma
