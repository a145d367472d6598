"""Data model: agent-indexed ILPs, solutions, pools, lotteries and the solver-facing helpers.

Variables are stacked as z = (x, y): agent variable i has column i, auxiliary
variable j has column n_agents + j. Instances are always maximization problems.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import sparse

from . import backend as _backend
from .errors import (
    DimensionMismatch,
    EmptyPool,
    Infeasible,
    InvalidEpsilon,
    InvalidInstance,
    NotRealizable,
    SolverError,
    TimeLimit,
    Unbounded,
)

DICHOTOMOUS = "dichotomous"
CARDINAL = "cardinal"

# dedup key precision for x-projections
KEY_DECIMALS = 9
# continuous values this close to an integer are snapped onto it
SNAP_TOL = 1e-6

Distribution = np.ndarray


@dataclasses.dataclass(frozen=True)
class Row:
    """A linear row ``sum(coef * z[idx]) rel rhs``; ``tol`` widens the row on both sides."""

    coeffs: tuple[tuple[int, float], ...]
    rel: str
    rhs: float
    tol: float = 0.0

    def __post_init__(self):
        if self.rel not in ("<=", ">=", "="):
            raise InvalidInstance(f"unknown relation {self.rel!r}")

    @classmethod
    def of(cls, coeffs: Mapping[int, float] | Iterable[tuple[int, float]], rel: str,
           rhs: float, tol: float = 0.0) -> "Row":
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        merged: dict[int, float] = {}
        for idx, coef in items:
            merged[int(idx)] = merged.get(int(idx), 0.0) + float(coef)
        return cls(tuple(sorted(merged.items())), rel, float(rhs), float(tol))

    def bounds(self) -> tuple[float, float]:
        lo = -math.inf if self.rel == "<=" else self.rhs - self.tol
        hi = math.inf if self.rel == ">=" else self.rhs + self.tol
        return lo, hi

    def value(self, z: np.ndarray) -> float:
        return float(sum(coef * z[idx] for idx, coef in self.coeffs))


def compile_rows(rows: Sequence[Row], n_vars: int) -> _backend.CompiledRows:
    if not rows:
        return _backend.CompiledRows.empty(n_vars)
    data, ri, ci = [], [], []
    lo = np.empty(len(rows))
    hi = np.empty(len(rows))
    for r, row in enumerate(rows):
        for idx, coef in row.coeffs:
            ri.append(r)
            ci.append(idx)
            data.append(coef)
        lo[r], hi[r] = row.bounds()
    A = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n_vars))
    return _backend.CompiledRows(A, lo, hi)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True, eq=False)
class IlpInstance:
    """``max v.x + w.y`` subject to ``rows``, with per-variable domains.

    In dichotomous mode every agent variable is binary. In cardinal mode agent
    variables may be any bounded (integer or continuous) interval and their value
    is the agent's utility.
    """

    v: np.ndarray
    w: np.ndarray
    rows: tuple[Row, ...]
    x_lb: np.ndarray
    x_ub: np.ndarray
    x_integer: np.ndarray
    y_lb: np.ndarray
    y_ub: np.ndarray
    y_integer: np.ndarray
    mode: str = DICHOTOMOUS
    name: str = ""

    def __post_init__(self):
        n = len(self.v)
        for field in ("v", "x_lb", "x_ub", "w", "y_lb", "y_ub"):
            object.__setattr__(self, field, _frozen(getattr(self, field)))
        for field in ("x_integer", "y_integer"):
            object.__setattr__(self, field, _frozen(getattr(self, field), bool))
        object.__setattr__(self, "rows", tuple(self.rows))
        k = len(self.w)
        if not (len(self.x_lb) == len(self.x_ub) == len(self.x_integer) == n):
            raise InvalidInstance("agent domain arrays must have length n_agents")
        if not (len(self.y_lb) == len(self.y_ub) == len(self.y_integer) == k):
            raise InvalidInstance("aux domain arrays must have length aux_count")
        if self.mode not in (DICHOTOMOUS, CARDINAL):
            raise InvalidInstance(f"unknown mode {self.mode!r}")
        for row in self.rows:
            for idx, _ in row.coeffs:
                if not 0 <= idx < n + k:
                    raise InvalidInstance(f"coefficient index {idx} outside 0..{n + k - 1}")
        if self.mode == DICHOTOMOUS:
            if not (np.all(self.x_lb == 0) and np.all(self.x_ub == 1) and np.all(self.x_integer)):
                raise InvalidInstance("dichotomous agents must be binary")
        if np.any(self.x_lb > self.x_ub) or np.any(self.y_lb > self.y_ub):
            raise InvalidInstance("empty variable domain")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def binary(cls, v: Sequence[float], rows: Iterable[Row] = (), *, w: Sequence[float] = (),
               y_lb=None, y_ub=None, y_integer=None, name: str = "") -> "IlpInstance":
        n, k = len(v), len(w)
        return cls(
            v=v, w=w, rows=tuple(rows),
            x_lb=np.zeros(n), x_ub=np.ones(n), x_integer=np.ones(n, bool),
            y_lb=np.zeros(k) if y_lb is None else y_lb,
            y_ub=np.ones(k) if y_ub is None else y_ub,
            y_integer=np.ones(k, bool) if y_integer is None else y_integer,
            mode=DICHOTOMOUS, name=name,
        )

    @classmethod
    def from_dense(cls, v: Sequence[float], A, rel: Sequence[str] | str, rhs: Sequence[float],
                   name: str = "") -> "IlpInstance":
        """Binary-agent instance without auxiliary variables from a dense row matrix."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        rels = [rel] * len(A) if isinstance(rel, str) else list(rel)
        rows = [Row.of({j: a for j, a in enumerate(r) if a != 0}, rl, b)
                for r, rl, b in zip(A, rels, rhs)]
        return cls.binary(v, rows, name=name)

    def replace(self, **changes) -> "IlpInstance":
        return dataclasses.replace(self, **changes)

    def with_rows(self, *rows: Row) -> "IlpInstance":
        return self.replace(rows=self.rows + tuple(rows))

    # -- derived --------------------------------------------------------------

    @property
    def n_agents(self) -> int:
        return len(self.v)

    @property
    def aux_count(self) -> int:
        return len(self.w)

    @property
    def n_vars(self) -> int:
        return self.n_agents + self.aux_count

    @property
    def objective(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])

    @functools.cached_property
    def compiled(self) -> _backend.CompiledRows:
        return compile_rows(self.rows, self.n_vars)

    @property
    def lb(self) -> np.ndarray:
        return np.concatenate([self.x_lb, self.y_lb])

    @property
    def ub(self) -> np.ndarray:
        return np.concatenate([self.x_ub, self.y_ub])

    @property
    def integrality(self) -> np.ndarray:
        return np.concatenate([self.x_integer, self.y_integer]).astype(int)

    def has_integer_objective(self) -> bool:
        c = self.objective
        return bool(np.all(c == np.round(c)))

    def is_feasible(self, z: np.ndarray, tol: float = 1e-6) -> bool:
        z = np.asarray(z, dtype=float)
        if np.any(z < self.lb - tol) or np.any(z > self.ub + tol):
            return False
        ints = self.integrality.astype(bool)
        if np.any(np.abs(z[ints] - np.round(z[ints])) > tol):
            return False
        comp = self.compiled
        if comp.A.shape[0]:
            vals = comp.A @ z
            if np.any(vals < comp.lo - tol) or np.any(vals > comp.hi + tol):
                return False
        return True

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        n = self.n_agents

        def name(idx: int) -> str:
            return f"x{idx}" if idx < n else f"y{idx - n}"

        def num(a):
            return [None if math.isinf(t) else _num(t) for t in a]

        return {
            "name": self.name,
            "mode": self.mode,
            "n_agents": n,
            "aux": self.aux_count,
            "objective": {"v": [_num(t) for t in self.v], "w": [_num(t) for t in self.w]},
            "rows": [
                {"coeffs": {name(i): _num(c) for i, c in row.coeffs}, "rel": row.rel,
                 "rhs": _num(row.rhs), **({"tol": _num(row.tol)} if row.tol else {})}
                for row in self.rows
            ],
            "domains": {
                "x": {"lb": num(self.x_lb), "ub": num(self.x_ub),
                      "integer": [bool(t) for t in self.x_integer]},
                "y": {"lb": num(self.y_lb), "ub": num(self.y_ub),
                      "integer": [bool(t) for t in self.y_integer]},
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "IlpInstance":
        n = int(data["n_agents"])
        k = int(data.get("aux", 0))
        obj = data.get("objective", {})
        v = np.asarray(obj.get("v", [0.0] * n), dtype=float)
        w = np.asarray(obj.get("w", [0.0] * k), dtype=float)
        if data.get("sense", "max") in ("min", "minimize"):
            v, w = -v, -w
        mode = data.get("mode", DICHOTOMOUS)

        def index(name: str) -> int:
            kind, pos = name[0], int(name[1:])
            if kind == "x" and 0 <= pos < n:
                return pos
            if kind == "y" and 0 <= pos < k:
                return n + pos
            raise InvalidInstance(f"bad variable name {name!r}")

        rows = [Row.of({index(nm): c for nm, c in r["coeffs"].items()}, r["rel"], r["rhs"],
                       r.get("tol", 0.0)) for r in data.get("rows", [])]
        doms = data.get("domains", {})

        def dom(key, size, lb, ub, integer):
            d = doms.get(key, {})
            lo = [(-math.inf if t is None else t) for t in d.get("lb", [lb] * size)]
            hi = [(math.inf if t is None else t) for t in d.get("ub", [ub] * size)]
            return np.asarray(lo, float), np.asarray(hi, float), np.asarray(d.get("integer", [integer] * size), bool)

        x_lb, x_ub, x_int = dom("x", n, 0.0, 1.0, True)
        y_lb, y_ub, y_int = dom("y", k, 0.0, math.inf, True)
        return cls(v=v, w=w, rows=tuple(rows), x_lb=x_lb, x_ub=x_ub, x_integer=x_int,
                   y_lb=y_lb, y_ub=y_ub, y_integer=y_int, mode=mode, name=data.get("name", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "IlpInstance":
        return cls.from_dict(json.loads(text))


def _num(t: float) -> float | int:
    t = float(t)
    return int(t) if t.is_integer() and abs(t) < 2**53 else t


@dataclasses.dataclass(frozen=True, eq=False)
class Solution:
    x: np.ndarray
    y: np.ndarray
    objective: float

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "y", _frozen(self.y))

    @property
    def key(self) -> tuple:
        return x_key(self.x)

    def to_dict(self) -> dict:
        return {"x": [_num(t) for t in self.x], "y": [_num(t) for t in self.y],
                "objective": _num(self.objective)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Solution":
        return cls(np.asarray(d["x"], float), np.asarray(d.get("y", []), float), float(d["objective"]))


def x_key(x: np.ndarray) -> tuple:
    return tuple(np.round(np.asarray(x, dtype=float), KEY_DECIMALS) + 0.0)


class SolutionPool:
    """Deduplicated (by x-projection) list of optimal solutions with value ``z_star``.

    The first witness of an x-projection is kept. Treat as read-only; use
    :meth:`extend` to derive a larger pool.
    """

    def __init__(self, solutions: Iterable[Solution] = (), z_star: float = math.nan,
                 complete: bool = False):
        kept: list[Solution] = []
        seen: set = set()
        for s in solutions:
            if s.key not in seen:
                seen.add(s.key)
                kept.append(s)
        self._solutions = tuple(kept)
        self._keys = frozenset(seen)
        self.z_star = float(z_star)
        self.complete = bool(complete)

    @property
    def solutions(self) -> tuple[Solution, ...]:
        return self._solutions

    def __len__(self) -> int:
        return len(self._solutions)

    def __iter__(self):
        return iter(self._solutions)

    def __getitem__(self, i) -> Solution:
        return self._solutions[i]

    def __contains__(self, item) -> bool:
        key = item.key if isinstance(item, Solution) else x_key(item)
        return key in self._keys

    def extend(self, solutions: Iterable[Solution], complete: Optional[bool] = None) -> "SolutionPool":
        return SolutionPool(self._solutions + tuple(solutions), self.z_star,
                            self.complete if complete is None else complete)

    def matrix(self) -> np.ndarray:
        """x-projections stacked as rows (|pool| x n)."""
        if not self._solutions:
            return np.zeros((0, 0))
        return np.vstack([s.x for s in self._solutions])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict()) + "\n" for s in self._solutions)

    @classmethod
    def from_jsonl(cls, text: str, z_star: float = math.nan, complete: bool = False) -> "SolutionPool":
        sols = [Solution.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(sols, z_star, complete)

    @classmethod
    def from_vectors(cls, xs: Iterable[Sequence[float]], z_star: float = 0.0,
                     complete: bool = True) -> "SolutionPool":
        """Pool of bare x-vectors; handy for explicitly given outcome sets."""
        return cls([Solution(np.asarray(x, float), np.zeros(0), z_star) for x in xs], z_star, complete)


@dataclasses.dataclass(frozen=True, eq=False)
class Lottery:
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))

    def __len__(self) -> int:
        return len(self.weights)

    def support(self, tol: float = 0.0) -> np.ndarray:
        return np.flatnonzero(self.weights > tol)


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Tolerances and limits shared by all routines.

    ``omega`` is the general feasibility/optimality precision (1e-5 as in the
    reference experiments). ``pricing_tol`` is the reduced-cost threshold below
    which column generation stops, and ``master_band`` the half-width used for
    "equality" rows in master LPs; both are tighter than ``omega`` so that the
    final distributions stay within ``omega`` of the exact ones.
    """

    omega: float = 1e-5
    time_limit: Optional[float] = None
    seed: int = 0
    abort_threshold: Optional[float] = None
    pricing_tol: float = 1e-9
    master_band: float = 1e-7
    max_iter: int = 10_000

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")


@dataclasses.dataclass(frozen=True)
class NearOptConfig:
    epsilon: float = 0.0
    absolute_slack: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise InvalidEpsilon(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.absolute_slack < 0:
            raise InvalidEpsilon("absolute_slack must be nonnegative")


EXACT = NearOptConfig()
DEFAULT_CONFIG = SolverConfig()


# -- solving ------------------------------------------------------------------

def _clean(instance: IlpInstance, z: np.ndarray) -> np.ndarray:
    z = np.array(z, dtype=float)
    ints = instance.integrality.astype(bool)
    z[ints] = np.round(z[ints])
    near = np.abs(z - np.round(z)) <= SNAP_TOL
    z[near] = np.round(z[near])
    return z + 0.0


def make_solution(instance: IlpInstance, z: np.ndarray) -> Solution:
    z = _clean(instance, z)
    n = instance.n_agents
    return Solution(z[:n], z[n:], float(instance.objective @ z))


def solve(instance: IlpInstance, objective: Optional[np.ndarray] = None, *,
          extra_rows: Sequence[Row] = (), maximize: bool = True,
          config: SolverConfig = DEFAULT_CONFIG, backend=None,
          abort_below: Optional[float] = None,
          column_order: Optional[Sequence[int]] = None,
          extra_compiled: Optional[_backend.CompiledRows] = None) -> Optional[tuple[Solution, float]]:
    """Optimize ``objective`` (default: the instance objective) over the instance.

    ``extra_compiled`` appends an already compiled row block (e.g. a growing set
    of no-good cuts). Returns ``(solution, value)`` or ``None`` when infeasible; raises on
    unboundedness, time limits and solver failures.
    """
    backend = backend or _backend.default_backend()
    c = instance.objective if objective is None else np.asarray(objective, dtype=float)
    rows = instance.compiled
    if extra_rows:
        rows = rows.stack(compile_rows(extra_rows, instance.n_vars))
    if extra_compiled is not None:
        rows = rows.stack(extra_compiled)
    res = backend.solve_mip(c, rows, instance.lb, instance.ub, instance.integrality,
                            maximize=maximize, abort_below=abort_below,
                            time_limit=config.time_limit, column_order=column_order)
    if res.status == _backend.INFEASIBLE:
        return None
    if res.status == _backend.UNBOUNDED:
        raise Unbounded(instance.name or "instance")
    if res.status == _backend.TIME_LIMIT:
        raise TimeLimit(instance.name or "instance")
    if res.status != _backend.OPTIMAL:
        raise SolverError(f"backend status {res.status}")
    z = res.z
    if not instance.integrality.all():
        z = _polish_continuous(instance, rows, c, maximize, z, backend)
    sol = make_solution(instance, z)
    return sol, float(c @ np.concatenate([sol.x, sol.y]))


def _lp_rows(rows: _backend.CompiledRows, extra: Sequence[tuple] = ()):
    """Split ``lo <= A z <= hi`` into scipy's ``A_ub z <= b_ub`` / ``A_eq z = b_eq``."""
    A = rows.A.toarray()
    eq = rows.lo == rows.hi
    ub_parts = [A[~eq & np.isfinite(rows.hi)], -A[~eq & np.isfinite(rows.lo)]]
    b_parts = [rows.hi[~eq & np.isfinite(rows.hi)], -rows.lo[~eq & np.isfinite(rows.lo)]]
    for coef, rhs in extra:
        ub_parts.append(coef[None, :])
        b_parts.append(np.array([rhs]))
    A_ub = np.vstack(ub_parts)
    b_ub = np.concatenate(b_parts)
    return (A_ub if len(b_ub) else None, b_ub if len(b_ub) else None,
            A[eq] if eq.any() else None, rows.lo[eq] if eq.any() else None)


def _polish_continuous(instance: IlpInstance, rows, c, maximize, z, backend):
    """Re-optimize the continuous variables with the integers held at their MIP values.

    Optimality rows carry a small tolerance band; with continuous variables a
    solver may spend that band on an agent's value. Maximizing the instance
    objective first (then ``c`` with that value held) removes the leak.
    """
    ints = instance.integrality.astype(bool)
    bounds = [(float(z[j]), float(z[j])) if ints[j] else
              (None if np.isinf(instance.lb[j]) else float(instance.lb[j]),
               None if np.isinf(instance.ub[j]) else float(instance.ub[j]))
              for j in range(len(z))]
    obj = instance.objective
    first = backend.solve_lp(-obj, *_lp_rows(rows), bounds)
    if first.status != _backend.OPTIMAL:
        return z
    best = float(obj @ first.x)
    hold = (-obj, -(best - 1e-9 * max(1.0, abs(best))))
    second = backend.solve_lp(-c if maximize else c, *_lp_rows(rows, [hold]), bounds)
    if second.status != _backend.OPTIMAL:
        return first.x
    return second.x


def solve_optimal(instance: IlpInstance, config: SolverConfig = DEFAULT_CONFIG,
                  backend=None) -> tuple[Solution, float]:
    out = solve(instance, config=config, backend=backend)
    if out is None:
        raise Infeasible(instance.name or "instance")
    sol, _ = out
    return sol, sol.objective


def optimality_row(instance: IlpInstance, z_star: float, near: NearOptConfig = EXACT,
                   omega: float = DEFAULT_CONFIG.omega) -> Row:
    """The row restricting solutions to S^eps (equality at the optimum when eps = slack = 0)."""
    coeffs = [(i, c) for i, c in enumerate(instance.objective) if c != 0]
    band = omega * max(1.0, abs(z_star))
    if near.epsilon == 0 and near.absolute_slack == 0:
        return Row.of(coeffs, "=", z_star, tol=band)
    if z_star > 0:
        bound = (1.0 - near.epsilon) * z_star - near.absolute_slack
    else:
        bound = z_star - near.epsilon * abs(z_star) - near.absolute_slack
    return Row.of(coeffs, ">=", bound - band)


def with_optimality_bound(instance: IlpInstance, z_star: float,
                          near: NearOptConfig = EXACT, omega: float = DEFAULT_CONFIG.omega) -> IlpInstance:
    if not 0.0 <= near.epsilon < 1.0:
        raise InvalidEpsilon(str(near.epsilon))
    return instance.with_rows(optimality_row(instance, z_star, near, omega))


def bound_value(z_star: float, near: NearOptConfig = EXACT) -> float:
    """Lowest admissible objective value under ``near``."""
    if near.epsilon == 0 and near.absolute_slack == 0:
        return z_star
    if z_star > 0:
        return (1.0 - near.epsilon) * z_star - near.absolute_slack
    return z_star - near.epsilon * abs(z_star) - near.absolute_slack


def solve_pricing(instance: IlpInstance, z_star: float, agent_weights, constant: float = 0.0,
                  sense: str = "max", config: SolverConfig = DEFAULT_CONFIG, *,
                  near: NearOptConfig = EXACT, extra_rows: Sequence[Row] = (),
                  bounded: Optional[IlpInstance] = None, backend=None) -> tuple[Solution, float]:
    """Optimize ``sum_i weights_i x_i + constant`` over the optimal (or S^eps) solutions.

    ``agent_weights`` is a length-n vector or a mapping agent -> weight.
    ``bounded`` may pass a precomputed ``with_optimality_bound`` instance.
    """
    n = instance.n_agents
    if isinstance(agent_weights, Mapping):
        weights = np.zeros(n)
        for i, wt in agent_weights.items():
            weights[i] = wt
    else:
        weights = np.asarray(agent_weights, dtype=float)
        if weights.shape != (n,):
            raise DimensionMismatch(f"expected {n} weights, got {weights.shape}")
    if bounded is None:
        bounded = with_optimality_bound(instance, z_star, near, config.omega)
    c = np.concatenate([weights, np.zeros(instance.aux_count)])
    out = solve(bounded, c, extra_rows=extra_rows, maximize=(sense == "max"),
                config=config, backend=backend)
    if out is None:
        raise Infeasible("pricing problem infeasible: z_star wrong or bound too tight")
    sol, _ = out
    return sol, float(weights @ sol.x + constant)


# -- lotteries ------------------------------------------------------------------

def realizes(pool: SolutionPool, lottery: Lottery, d, tol: float = 1e-5) -> bool:
    lam = lottery.weights
    if len(lam) != len(pool):
        raise DimensionMismatch(f"lottery has {len(lam)} weights, pool has {len(pool)} solutions")
    d = np.asarray(d, dtype=float)
    if len(pool) == 0:
        return False
    X = pool.matrix()
    if d.shape != (X.shape[1],):
        raise DimensionMismatch(f"distribution has shape {d.shape}, expected ({X.shape[1]},)")
    if abs(lam.sum() - 1.0) > tol or np.any(lam < -tol):
        return False
    return bool(np.max(np.abs(lam @ X - d)) <= tol)


def reduce_support(pool: SolutionPool, lottery: Lottery, tol: float = 1e-5) -> Lottery:
    """Carathéodory reduction: same distribution, affinely independent support.

    Merges duplicate x-projections first, then repeatedly moves along a null
    direction of the support's affine hull until a weight hits zero. The result
    has at most (affine dimension + 1) <= |M| + 1 positive weights.
    """
    lam = np.array(lottery.weights, dtype=float)
    if len(lam) != len(pool):
        raise DimensionMismatch("lottery not aligned with pool")
    if abs(lam.sum() - 1.0) > tol or np.any(lam < -tol):
        raise NotRealizable("input lottery is not a probability vector")
    lam = np.clip(lam, 0.0, None)
    lam /= lam.sum()
    X = pool.matrix()
    # duplicates only arise for pools built without dedup; merge anyway
    first: dict[tuple, int] = {}
    for s in range(len(pool)):
        key = x_key(X[s])
        if key in first:
            lam[first[key]] += lam[s]
            lam[s] = 0.0
        else:
            first[key] = s
    zero = 1e-12
    while True:
        supp = np.flatnonzero(lam > zero)
        if len(supp) <= 1:
            break
        # columns (x_s, 1); a null vector keeps both d and sum(lambda) fixed
        M = np.vstack([X[supp].T, np.ones(len(supp))])
        _, sv, vt = np.linalg.svd(M, full_matrices=True)
        rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0])))
        if rank >= len(supp):
            break
        direction = vt[-1]
        if not np.any(direction > zero):
            direction = -direction
        pos = np.flatnonzero(direction > zero)
        ratios = lam[supp[pos]] / direction[pos]
        hit = int(np.argmin(ratios))
        lam[supp] = lam[supp] - ratios[hit] * direction
        lam[supp[pos[hit]]] = 0.0
        lam[lam <= zero] = 0.0
    lam /= lam.sum()
    return Lottery(lam)


@dataclasses.dataclass
class RuleReport:
    """Outcome of a distribution rule: d, an optional decomposition and diagnostics."""

    rule: str
    distribution: np.ndarray
    pool: Optional[SolutionPool] = None
    lottery: Optional[Lottery] = None
    iterations: int = 0
    pricing_calls: int = 0
    wall_time_s: float = 0.0
    kkt_residual: Optional[float] = None
    approximate: bool = False
    extras: dict = dataclasses.field(default_factory=dict)

    def check(self, tol: float = 1e-5) -> bool:
        if self.pool is None or self.lottery is None:
            return True
        return realizes(self.pool, self.lottery, self.distribution, tol)

    def to_dict(self) -> dict:
        lottery = []
        if self.lottery is not None:
            lottery = [{"solution_id": int(s), "weight": _num(self.lottery.weights[s])}
                       for s in self.lottery.support()]
        out = {
            "rule": self.rule,
            "distribution": [_num(t) for t in self.distribution],
            "lottery": lottery,
            "solutions": ([self.pool[int(e["solution_id"])].to_dict() for e in lottery]
                          if self.pool is not None else []),
            "iterations": self.iterations,
            "pricing_calls": self.pricing_calls,
            "wall_time_s": self.wall_time_s,
            "kkt_residual": None if self.kkt_residual is None else _num(self.kkt_residual),
            "approximate": self.approximate,
        }
        out.update({k: v for k, v in self.extras.items() if _jsonable(v)})
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
    except TypeError:
        return False
    return True


def nonempty(pool: SolutionPool) -> SolutionPool:
    if len(pool) == 0:
        raise EmptyPool("pool is empty")
    return pool
