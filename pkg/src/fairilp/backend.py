"""Solver backend contract and the default HiGHS implementation (via scipy).

A backend must provide two things:

* ``solve_mip``: optimize a linear objective over a compiled ILP (optionally with
  extra rows) and report the solution or a status;
* ``solve_lp``: solve a linear program and return primal values together with
  the row duals, which the column-generation engines price with.

``abort_below`` is an optional hint: a backend that supports early termination
may stop once the best bound is below it. The scipy/HiGHS route has no bound
callback, so it solves to optimality and lets the caller compare.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TIME_LIMIT = "time_limit"
ERROR = "error"


@dataclasses.dataclass(frozen=True)
class CompiledRows:
    """Row block ``lo <= A z <= hi`` over the stacked variable vector z = (x, y)."""

    A: sparse.csr_matrix
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls, n_vars: int) -> "CompiledRows":
        return cls(sparse.csr_matrix((0, n_vars)), np.zeros(0), np.zeros(0))

    def stack(self, other: "CompiledRows") -> "CompiledRows":
        if other.A.shape[0] == 0:
            return self
        return CompiledRows(
            sparse.vstack([self.A, other.A], format="csr"),
            np.concatenate([self.lo, other.lo]),
            np.concatenate([self.hi, other.hi]),
        )


@dataclasses.dataclass(frozen=True)
class MipResult:
    status: str
    z: Optional[np.ndarray] = None
    objective: Optional[float] = None
    bound: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class LpResult:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals_ub: Optional[np.ndarray] = None
    duals_eq: Optional[np.ndarray] = None


class Backend(Protocol):
    def solve_mip(
        self,
        c: np.ndarray,
        rows: CompiledRows,
        lb: np.ndarray,
        ub: np.ndarray,
        integrality: np.ndarray,
        *,
        maximize: bool = True,
        abort_below: Optional[float] = None,
        time_limit: Optional[float] = None,
        column_order: Optional[Sequence[int]] = None,
    ) -> MipResult: ...

    def solve_lp(
        self,
        c: np.ndarray,
        A_ub: Optional[np.ndarray],
        b_ub: Optional[np.ndarray],
        A_eq: Optional[np.ndarray],
        b_eq: Optional[np.ndarray],
        bounds: Sequence[tuple],
    ) -> LpResult: ...


def _satisfies(x, A, lo, hi, lb, ub, integrality, tol: float = 1e-6) -> bool:
    x = np.asarray(x, dtype=float)
    if np.any(x < lb - tol) or np.any(x > ub + tol):
        return False
    ints = np.asarray(integrality, dtype=bool)
    if np.any(np.abs(x[ints] - np.round(x[ints])) > tol):
        return False
    if A.shape[0] == 0:
        return True
    ax = A @ x
    scale = 1.0 + np.abs(ax)
    return bool(np.all(ax >= lo - tol * scale) and np.all(ax <= hi + tol * scale))


class HighsBackend:
    """HiGHS through ``scipy.optimize.milp`` / ``linprog``.

    The MIP gap is forced to zero: distribution rules need the exact optimal set,
    and the default relative gap of 1e-4 would silently admit suboptimal columns.
    """

    def __init__(self, mip_rel_gap: float = 0.0, lp_tol: float = 1e-9, verify: bool = True):
        self.mip_rel_gap = mip_rel_gap
        self.lp_tol = lp_tol
        self.verify = verify

    def solve_mip(self, c, rows, lb, ub, integrality, *, maximize=True,
                  abort_below=None, time_limit=None, column_order=None):
        c = np.asarray(c, dtype=float)
        A, lo, hi = rows.A, rows.lo, rows.hi
        if column_order is not None:
            perm = np.asarray(column_order)
            c, lb, ub, integrality = c[perm], lb[perm], ub[perm], integrality[perm]
            A = A[:, perm]
        options = {"mip_rel_gap": self.mip_rel_gap, "disp": False}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        constraints = [LinearConstraint(A, lo, hi)] if A.shape[0] else []

        def run(opts):
            return milp(c=-c if maximize else c, constraints=constraints, integrality=integrality,
                        bounds=Bounds(lb, ub), options=opts)

        res = run(options)
        if res.x is None:
            suspect = res.status in (2, 4)
        else:
            suspect = not _satisfies(res.x, A, lo, hi, lb, ub, integrality)
        if self.verify and suspect:
            # HiGHS presolve occasionally declares feasible models infeasible or returns points
            # outside the bounds; re-solve without it
            res = run({**options, "presolve": False})
            if res.x is not None and not _satisfies(res.x, A, lo, hi, lb, ub, integrality):
                return MipResult(ERROR)
        if res.status == 2:
            return MipResult(INFEASIBLE)
        if res.status == 3:
            return MipResult(UNBOUNDED)
        if res.x is None:
            # HiGHS reports "infeasible or unbounded" as a generic failure on some presolve paths
            if res.status == 1:
                return MipResult(TIME_LIMIT)
            return MipResult(INFEASIBLE if "nfeasible" in str(res.message) else ERROR)
        z = np.asarray(res.x, dtype=float)
        if column_order is not None:
            unperm = np.empty_like(z)
            unperm[np.asarray(column_order)] = z
            z = unperm
        obj = -res.fun if maximize else res.fun
        if res.status == 1:
            return MipResult(TIME_LIMIT, z, obj)
        return MipResult(OPTIMAL, z, obj)

    def solve_lp(self, c, A_ub, b_ub, A_eq, b_eq, bounds):
        res = linprog(
            c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": self.lp_tol,
                     "dual_feasibility_tolerance": self.lp_tol},
        )
        if res.status == 2:
            return LpResult(INFEASIBLE)
        if res.status == 3:
            return LpResult(UNBOUNDED)
        if res.status != 0:
            return LpResult(ERROR)
        duals_ub = res.ineqlin.marginals if A_ub is not None else np.zeros(0)
        duals_eq = res.eqlin.marginals if A_eq is not None else np.zeros(0)
        return LpResult(OPTIMAL, np.asarray(res.x), float(res.fun),
                        np.asarray(duals_ub), np.asarray(duals_eq))


_default = HighsBackend()


def default_backend() -> HighsBackend:
    return _default
