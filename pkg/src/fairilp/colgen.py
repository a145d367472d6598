"""Column generation over the optimal set: leximin / maximin and convex objectives (Nash, k-norms).

Columns are optimal solutions; the pricing problem is the original ILP with
the optimality row added, so only optimal solutions ever enter a master.

Master LPs are solved in minimization form by the backend; with HiGHS duals
``y`` (``y <= 0`` on ``<=`` rows) the reduced cost of a fresh column ``a`` is
``-y_ub . a_ub - y_eq``, and pricing maximizes its negation.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import backend as _backend
from .errors import CoverageError, GradientUndefined, NonConvergence, SolverError
from .model import (
    DEFAULT_CONFIG,
    EXACT,
    IlpInstance,
    Lottery,
    NearOptConfig,
    RuleReport,
    Solution,
    SolutionPool,
    SolverConfig,
    reduce_support,
    solve_pricing,
    with_optimality_bound,
)
from .partition import Bounds


@dataclasses.dataclass
class ColGenState:
    """Mutable bookkeeping of one leximin run (dual signs follow the convention mu <= 0)."""

    columns: list[Solution]
    fixed: dict[int, float] = dataclasses.field(default_factory=dict)
    mu: dict[int, float] = dataclasses.field(default_factory=dict)
    nu: dict[int, float] = dataclasses.field(default_factory=dict)
    rho: float = 0.0
    pi: float = 0.0
    gamma: float = 0.0
    theta: float = 0.0
    outer_iterations: int = 0
    upper_solves: int = 0
    lower_solves: int = 0
    lp_solves: int = 0
    pricing_calls: int = 0
    stages: list = dataclasses.field(default_factory=list)

    def matrix(self) -> np.ndarray:
        return np.vstack([c.x for c in self.columns])

    def keys(self) -> set:
        return {c.key for c in self.columns}


def _utility_transform(n: int, normalization: Optional[Bounds]) -> tuple[np.ndarray, np.ndarray]:
    """scale, shift with utility_i = scale_i * x_i - shift_i."""
    if normalization is None:
        return np.ones(n), np.zeros(n)
    span = np.where(normalization.span > 0, normalization.span, 1.0)
    return 1.0 / span, normalization.dystopia / span


class _Master:
    """The shared [RMP_t]/[LP_jt] model: one row per (agent, role), plus convexity."""

    def __init__(self, state: ColGenState, scale: np.ndarray, shift: np.ndarray,
                 config: SolverConfig, backend):
        self.state = state
        self.scale = scale
        self.shift = shift
        self.config = config
        self.backend = backend

    def _rows(self, free: Sequence[int], target: Optional[int], gamma: Optional[float],
              band: float):
        # each row: (agent, coef on sum_s lambda_s x_s[agent], coef on t, rhs)
        rows = []
        if target is None:
            for i in free:
                rows.append((i, -self.scale[i], 1.0, -self.shift[i], "free"))
        else:
            rows.append((target, -self.scale[target], 1.0, -self.shift[target] - gamma, "target"))
            for i in free:
                rows.append((i, -self.scale[i], 0.0, -self.shift[i] - gamma + band, "free"))
        for i, val in self.state.fixed.items():
            rows.append((i, self.scale[i], 0.0, val + self.shift[i] + band, "fixed_hi"))
            rows.append((i, -self.scale[i], 0.0, -val - self.shift[i] + band, "fixed_lo"))
        return rows

    def solve(self, free: Sequence[int], target: Optional[int] = None,
              gamma: Optional[float] = None, band: Optional[float] = None):
        band = self.config.master_band if band is None else band
        X = self.state.matrix()
        S = len(X)
        rows = self._rows(free, target, gamma, band)
        has_t = any(r[2] != 0.0 for r in rows)
        width = S + (1 if has_t else 0)
        A_ub = np.zeros((len(rows), width))
        b_ub = np.zeros(len(rows))
        for r, (agent, coef, tcoef, rhs, _) in enumerate(rows):
            A_ub[r, :S] = coef * X[:, agent]
            if has_t:
                A_ub[r, S] = tcoef
            b_ub[r] = rhs
        A_eq = np.zeros((1, width))
        A_eq[0, :S] = 1.0
        c = np.zeros(width)
        bounds = [(0.0, None)] * S
        if has_t:
            c[S] = -1.0
            bounds.append((None, None))
        res = self.backend.solve_lp(c, A_ub if len(rows) else None, b_ub if len(rows) else None,
                                    A_eq, np.array([1.0]), bounds)
        self.state.lp_solves += 1
        if res.status != _backend.OPTIMAL:
            return None
        lam = np.clip(res.x[:S], 0.0, None)
        t = float(res.x[S]) if has_t else 0.0
        weights = np.zeros(X.shape[1])
        for (agent, coef, *_), y in zip(rows, res.duals_ub):
            weights[agent] += y * coef
        self._record_duals(rows, res.duals_ub, float(res.duals_eq[0]))
        return t, lam, weights, float(res.duals_eq[0])

    def _record_duals(self, rows, duals, y_eq):
        st = self.state
        st.mu, st.nu = {}, {}
        st.pi = 0.0
        for (agent, coef, _, _, role), y in zip(rows, duals):
            if role == "free":
                st.mu[agent] = y * abs(coef)
            elif role == "target":
                st.pi = y * abs(coef)
            elif role == "fixed_hi":
                st.nu[agent] = st.nu.get(agent, 0.0) - y * coef
            else:
                st.nu[agent] = st.nu.get(agent, 0.0) - y * coef
        st.rho = -y_eq


def _check_cover(columns: Sequence[Solution], M: Iterable[int], floor: np.ndarray, tol: float):
    X = np.vstack([c.x for c in columns]) if columns else None
    missing = [i for i in M if X is None or not np.any(X[:, i] > floor[i] + tol)]
    if missing:
        raise CoverageError(f"initial pool never improves agents {missing} above their worst value")


class _Pricer:
    def __init__(self, instance, z_star, near, config, backend, state: ColGenState):
        self.instance = instance
        self.z_star = z_star
        self.config = config
        self.backend = backend
        self.state = state
        self.bounded = with_optimality_bound(instance, z_star, near, config.omega)

    def price(self, weights: np.ndarray, constant: float, sense: str = "max"):
        self.state.pricing_calls += 1
        return solve_pricing(self.instance, self.z_star, weights, constant, sense, self.config,
                             bounded=self.bounded, backend=self.backend)


def _generate(master: _Master, pricer: _Pricer, free, target=None, gamma=None, band=None):
    """Column generation for one master variant; returns (t*, lambda) at pricing optimality."""
    state = master.state
    for _ in range(master.config.max_iter):
        out = master.solve(free, target, gamma, band)
        if out is None:
            return None
        t, lam, weights, y_eq = out
        sol, value = pricer.price(weights, y_eq)
        if value <= master.config.pricing_tol or sol.key in state.keys():
            return t, lam
        state.columns.append(sol)
    raise NonConvergence("column generation exceeded max_iter")


def leximin(instance: IlpInstance, z_star: float, M: Iterable[int], init_pool: SolutionPool,
            normalization: Optional[Bounds] = None, config: SolverConfig = DEFAULT_CONFIG, *,
            near: NearOptConfig = EXACT, first_stage_only: bool = False,
            backend=None) -> RuleReport:
    """Leximin distribution over the optimal set with a realizing decomposition.

    Upper problem: maximize the common lower bound gamma of all unfixed agents.
    Lower problem: for every unfixed j maximize j's excess theta over gamma; agents
    with theta <= omega are fixed at gamma. With ``normalization`` utilities are
    (x_i - o_i) / (u_i - o_i), i.e. the lexicographic Kalai-Smorodinsky rule.
    """
    start = time.perf_counter()
    backend = backend or _backend.default_backend()
    M = sorted(int(i) for i in M)
    n = instance.n_agents
    scale, shift = _utility_transform(n, normalization)
    floor = normalization.dystopia if normalization is not None else np.zeros(n)
    state = ColGenState(columns=list(init_pool))
    if not M:
        if not state.columns:
            state.columns.append(pricer_solution(instance, z_star, near, config, backend))
        d = state.columns[0].x.copy()
        pool = SolutionPool(state.columns[:1], z_star)
        return RuleReport("maximin" if first_stage_only else "leximin", d, pool, Lottery([1.0]),
                          wall_time_s=time.perf_counter() - start, extras={"gamma_first": None})
    _check_cover(state.columns, M, floor, config.omega)
    master = _Master(state, scale, shift, config, backend)
    pricer = _Pricer(instance, z_star, near, config, backend, state)
    gamma_first = None
    lam = None
    X = None
    while len(state.fixed) < len(M):
        free = [i for i in M if i not in state.fixed]
        out = _generate(master, pricer, free)
        if out is None:
            raise SolverError("upper master infeasible")
        state.upper_solves += 1
        state.outer_iterations += 1
        gamma, lam = out
        state.gamma = gamma
        if gamma_first is None:
            gamma_first = gamma
            if first_stage_only:
                break
        X = state.matrix()
        best = (lam @ X[:, free]) * scale[free] - shift[free]
        slack = dict(zip(free, best - gamma))
        newly = []
        for j in free:
            if slack[j] > config.omega:
                continue
            out = _generate(master, pricer, free, target=j, gamma=gamma)
            state.lower_solves += 1
            if out is None:
                raise SolverError("lower master infeasible")
            theta, lam_j = out
            state.theta = theta
            if theta <= config.omega:
                newly.append(j)
            # any lower-problem point is feasible for the others' lower problems too
            X = state.matrix()
            others = (lam_j @ X[:, free]) * scale[free] - shift[free] - gamma
            for k, s in zip(free, others):
                slack[k] = max(slack[k], s)
        if not newly:
            newly = [min(free, key=lambda j: slack[j])]
        for j in newly:
            state.fixed[j] = gamma
        state.stages.append({"gamma": gamma, "fixed": newly})

    X = state.matrix()
    if not first_stage_only:
        lam = _final_weights(master, state, config)
    lam = lam / lam.sum()
    pool = SolutionPool(state.columns, z_star)
    lottery = reduce_support(pool, Lottery(lam[: len(pool)]))
    d = lottery.weights @ pool.matrix()
    return RuleReport(
        "maximin" if first_stage_only else "leximin", d, pool, lottery,
        iterations=state.outer_iterations, pricing_calls=state.pricing_calls,
        wall_time_s=time.perf_counter() - start,
        extras={"gamma_first": gamma_first, "upper_solves": state.upper_solves,
                "lower_solves": state.lower_solves, "lp_solves": state.lp_solves,
                "stages": [{"gamma": s["gamma"], "fixed": [int(j) for j in s["fixed"]]}
                           for s in state.stages]},
    )


def _final_weights(master: _Master, state: ColGenState, config: SolverConfig) -> np.ndarray:
    """A lottery meeting every fixed value (bands widened up to omega if round-off bites)."""
    band = config.master_band
    while band <= config.omega * 1.0001:
        out = master.solve([], band=band)
        if out is not None:
            return out[1]
        band *= 10.0
    raise SolverError("no lottery realizes the fixed leximin values")


def pricer_solution(instance, z_star, near, config, backend) -> Solution:
    sol, _ = solve_pricing(instance, z_star, np.zeros(instance.n_agents), 0.0, "max", config,
                           near=near, backend=backend)
    return sol


def maximin(instance, z_star, M, init_pool, normalization=None, config=DEFAULT_CONFIG, *,
            near=EXACT, backend=None) -> RuleReport:
    """First leximin stage only: the best achievable minimum; the lottery is one maximizer."""
    return leximin(instance, z_star, M, init_pool, normalization, config, near=near,
                   first_stage_only=True, backend=backend)


# -- convex objectives -----------------------------------------------------------------

@dataclasses.dataclass
class ConvexObjective:
    """Convex f(d) over the agents in M.

    ``kind``: ``nash`` (minimize -sum log base_i, base_i = d_i - o_i, optionally
    divided by u_i - o_i), ``knorm`` (minimize (sum d_i^k)^(1/k)) or ``custom``
    with user ``func``/``grad`` taking the M-restricted vector.
    """

    kind: str = "nash"
    k: float = 2.0
    normalization: Optional[Bounds] = None
    divide_by_span: bool = False
    func: Optional[Callable[[np.ndarray], float]] = None
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    floor: float = 1e-9

    def __post_init__(self):
        if self.kind not in ("nash", "knorm", "custom"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.kind == "knorm" and self.k < 1:
            raise ValueError("k-norm needs k >= 1")
        if self.kind == "custom" and (self.func is None or self.grad is None):
            raise ValueError("custom objective needs func and grad")

    @property
    def name(self) -> str:
        return f"knorm{self.k:g}" if self.kind == "knorm" else self.kind

    def _base(self, dM: np.ndarray, M: Sequence[int]):
        if self.normalization is None:
            return dM, np.ones(len(M))
        o = self.normalization.dystopia[list(M)]
        if self.divide_by_span:
            span = self.normalization.span[list(M)]
            return (dM - o) / span, 1.0 / span
        return dM - o, np.ones(len(M))

    def value(self, dM: np.ndarray, M: Sequence[int], *, strict: bool = True) -> float:
        if self.kind == "nash":
            base, _ = self._base(dM, M)
            if strict and np.any(base <= self.floor):
                raise GradientUndefined("Nash argument at or below floor")
            return float(-np.sum(np.log(np.maximum(base, self.floor))))
        if self.kind == "knorm":
            return float(np.sum(np.abs(dM) ** self.k) ** (1.0 / self.k))
        return float(self.func(dM))

    def gradient(self, dM: np.ndarray, M: Sequence[int], *, strict: bool = True) -> np.ndarray:
        if self.kind == "nash":
            base, dscale = self._base(dM, M)
            if strict and np.any(base <= self.floor):
                raise GradientUndefined("Nash argument at or below floor")
            return -dscale / np.maximum(base, self.floor)
        if self.kind == "knorm":
            norm = np.sum(np.abs(dM) ** self.k) ** (1.0 / self.k)
            if norm <= 0:
                raise GradientUndefined("k-norm gradient undefined at the origin")
            return np.sign(dM) * np.abs(dM) ** (self.k - 1) / norm ** (self.k - 1)
        return np.asarray(self.grad(dM), dtype=float)

    def hessian(self, dM: np.ndarray, M: Sequence[int]) -> np.ndarray:
        if self.kind == "nash":
            base, dscale = self._base(dM, M)
            return np.diag(dscale**2 / np.maximum(base, self.floor) ** 2)
        if self.kind == "knorm":
            k = self.k
            norm = np.sum(np.abs(dM) ** k) ** (1.0 / k)
            a = np.abs(dM) ** (k - 1)
            diag = np.abs(dM) ** max(k - 2, 0) if k >= 2 else np.where(dM > 0, np.abs(dM) ** (k - 2), 0.0)
            return (k - 1) * (np.diag(diag) / norm ** (k - 1) - np.outer(a, a) / norm ** (2 * k - 1))
        h = 1e-6
        g0 = self.gradient(dM, M)
        H = np.empty((len(dM), len(dM)))
        for i in range(len(dM)):
            e = np.zeros(len(dM))
            e[i] = h
            H[:, i] = (self.gradient(dM + e, M) - g0) / h
        return 0.5 * (H + H.T)


def _master_convex(XM: np.ndarray, objective: ConvexObjective, M, lam0: np.ndarray,
                   tol: float = 1e-12) -> np.ndarray:
    """min f(XM^T lambda) over the simplex: SLSQP followed by Newton polishing on the support."""

    def fun(lam):
        return objective.value(lam @ XM, M, strict=False)

    def jac(lam):
        return XM @ objective.gradient(lam @ XM, M, strict=False)

    S = len(lam0)
    if S == 1:
        return np.ones(1)
    res = minimize(fun, lam0, jac=jac, method="SLSQP", bounds=[(0.0, 1.0)] * S,
                   constraints=[{"type": "eq", "fun": lambda l: np.sum(l) - 1.0,
                                 "jac": lambda l: np.ones(S)}],
                   options={"ftol": 1e-15, "maxiter": 2000})
    lam = np.clip(res.x, 0.0, None)
    lam /= lam.sum()
    return _polish(XM, objective, M, lam, tol)


def _polish(XM, objective, M, lam, tol, rounds: int = 30) -> np.ndarray:
    """Equality-constrained Newton steps on the support, keeping lambda >= 0."""
    for _ in range(rounds):
        supp = np.flatnonzero(lam > 1e-14)
        d = lam @ XM
        g = XM[supp] @ objective.gradient(d, M, strict=False)
        H = XM[supp] @ objective.hessian(d, M) @ XM[supp].T
        k = len(supp)
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = H
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.concatenate([-g, [0.0]])
        step = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
        if np.max(np.abs(step)) < tol:
            break
        f0 = objective.value(d, M, strict=False)
        alpha = 1.0
        neg = step < 0
        if np.any(neg):
            alpha = min(1.0, 0.99 * np.min(lam[supp][neg] / -step[neg]))
        improved = False
        while alpha > 1e-12:
            trial = lam.copy()
            trial[supp] = lam[supp] + alpha * step
            if objective.value(trial @ XM, M, strict=False) <= f0 + 1e-16 * abs(f0):
                lam = trial
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        lam[lam < 1e-14] = 0.0
    return lam / lam.sum()


def kkt_residuals(XM: np.ndarray, lam: np.ndarray, mu: np.ndarray) -> dict:
    """Residuals of the KKT system of the restricted convex master at (lambda, mu = grad f).

    nu_s = mu . x_s + rho with rho chosen as minus the lambda-average of mu . x_s.
    """
    scores = XM @ mu
    rho = -float(lam @ scores)
    nu = scores + rho
    return {
        "rho": rho,
        "primal_sum": abs(float(lam.sum()) - 1.0),
        "primal_nonneg": float(max(0.0, -lam.min())),
        "dual_nonneg": float(max(0.0, -nu.min())),
        "complementarity": float(np.max(np.abs(nu * lam))),
    }


def minimize_convex(instance: IlpInstance, z_star: float, M: Iterable[int],
                    objective: ConvexObjective, init_pool: SolutionPool,
                    config: SolverConfig = DEFAULT_CONFIG, *, near: NearOptConfig = EXACT,
                    kkt_tol: float = 1e-6, backend=None) -> RuleReport:
    """Minimize a convex f over Conv(optimal x) by column generation.

    Each round solves the restricted master, sets mu = grad f(d*), prices
    ``min mu . x`` over the optimal set, and stops once the priced value is no
    better than the value of the columns in use (within ``kkt_tol`` relative).
    """
    start = time.perf_counter()
    backend = backend or _backend.default_backend()
    M = sorted(int(i) for i in M)
    columns = list(init_pool)
    if not columns:
        columns.append(pricer_solution(instance, z_star, near, config, backend))
    if not M:
        pool = SolutionPool(columns[:1], z_star)
        return RuleReport(objective.name, pool[0].x.copy(), pool, Lottery([1.0]),
                          wall_time_s=time.perf_counter() - start, kkt_residual=0.0)
    if objective.kind == "nash":
        floor = objective.normalization.dystopia if objective.normalization is not None \
            else np.zeros(instance.n_agents)
        _check_cover(columns, M, floor, config.omega)
    state = ColGenState(columns=columns)
    pricer = _Pricer(instance, z_star, near, config, backend, state)
    lam = np.full(len(columns), 1.0 / len(columns))
    history = []
    for it in range(1, config.max_iter + 1):
        X = state.matrix()
        XM = X[:, M]
        lam = _master_convex(XM, objective, M, lam)
        d = lam @ X
        mu = objective.gradient(d[M], M, strict=True)
        weights = np.zeros(instance.n_agents)
        weights[M] = mu
        sol, priced = pricer.price(weights, 0.0, sense="min")
        res = kkt_residuals(XM, lam, mu)
        in_use = -res["rho"]
        slack = priced - in_use
        history.append(slack)
        if slack >= -kkt_tol * max(1.0, abs(in_use)):
            break
        if sol.key in state.keys():
            # master not accurate enough for this column; polish harder once, then give up
            lam = _polish(XM, objective, M, lam, 1e-15, rounds=200)
            res = kkt_residuals(XM, lam, mu)
            if priced - (-res["rho"]) >= -kkt_tol * max(1.0, abs(res["rho"])):
                break
            raise NonConvergence("pricing returned a column already in the master")
        state.columns.append(sol)
        lam = np.append(lam, 0.0)
    else:
        raise NonConvergence("convex column generation exceeded max_iter")

    X = state.matrix()
    d = lam @ X
    mu = objective.gradient(d[M], M)
    res = kkt_residuals(X[:, M], lam, mu)
    residual = max(res["primal_sum"], res["primal_nonneg"], res["dual_nonneg"], res["complementarity"])
    pool = SolutionPool(state.columns, z_star)
    lottery = Lottery(lam)
    return RuleReport(
        objective.name, d, pool, lottery, iterations=it, pricing_calls=state.pricing_calls,
        wall_time_s=time.perf_counter() - start, kkt_residual=residual,
        extras={"condition_slack": float(slack), "kkt": res, "objective_value": objective.value(d[M], M)},
    )
