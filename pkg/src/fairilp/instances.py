"""Benchmark families: kidney exchange (cycle formulation) and single-machine total tardiness."""

from __future__ import annotations

import dataclasses
import itertools
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInstance
from .model import CARDINAL, IlpInstance, Row

# Blood groups in the order used by the sampler; compatibility is donor -> patient.
ABO = ("O", "A", "B", "AB")
_ABO_OK = {
    "O": {"O", "A", "B", "AB"},
    "A": {"A", "AB"},
    "B": {"B", "AB"},
    "AB": {"AB"},
}


def abo_compatible(donor: str, patient: str) -> bool:
    return patient in _ABO_OK[donor]


@dataclasses.dataclass(frozen=True)
class KidneyParams:
    """Sampler parameters. Defaults approximate published US population figures."""

    abo_freq: tuple = (0.4814, 0.3373, 0.1428, 0.0385)
    # (crossmatch failure probability, share of patients)
    pra_tiers: tuple = ((0.05, 0.7019), (0.45, 0.2), (0.90, 0.0981))
    require_incompatible: bool = True
    max_cycle_len: int = 3

    @classmethod
    def universal(cls) -> "KidneyParams":
        """Every donor compatible with every other patient."""
        return cls(abo_freq=(1.0, 0.0, 0.0, 0.0), pra_tiers=((0.0, 1.0),), require_incompatible=False)

    @classmethod
    def none(cls) -> "KidneyParams":
        """Every crossmatch fails."""
        return cls(pra_tiers=((1.0, 1.0),), require_incompatible=False)

    def to_dict(self) -> dict:
        return {"abo_freq": list(self.abo_freq), "pra_tiers": [list(t) for t in self.pra_tiers],
                "require_incompatible": self.require_incompatible, "max_cycle_len": self.max_cycle_len}


@dataclasses.dataclass(frozen=True)
class KidneyInstance:
    n_pairs: int
    arcs: frozenset
    max_cycle_len: int = 3
    name: str = "ke"

    def __post_init__(self):
        for a, b in self.arcs:
            if not (0 <= a < self.n_pairs and 0 <= b < self.n_pairs) or a == b:
                raise InvalidInstance(f"bad arc {(a, b)}")

    @property
    def cycles(self) -> list[tuple]:
        return enumerate_cycles(self.n_pairs, self.arcs, self.max_cycle_len)


def enumerate_cycles(n: int, arcs, max_len: int = 3) -> list[tuple]:
    """All simple directed cycles of length <= max_len, each listed from its smallest node."""
    succ: list[list[int]] = [[] for _ in range(n)]
    for a, b in sorted(arcs):
        succ[a].append(b)
    out: list[tuple] = []
    for s in range(n):
        stack = [(s, (s,))]
        while stack:
            node, path = stack.pop()
            for nxt in succ[node]:
                if nxt == s and len(path) >= 2:
                    out.append(path)
                elif nxt > s and nxt not in path and len(path) < max_len:
                    stack.append((nxt, path + (nxt,)))
    return sorted(out, key=lambda c: (len(c), c))


def gen_kidney(n_pairs: int, seed: int, params: KidneyParams = KidneyParams(), name: Optional[str] = None) -> KidneyInstance:
    if n_pairs < 2:
        raise InvalidInstance("need at least two pairs")
    rng = np.random.Generator(np.random.Philox(seed))
    abo_p = np.asarray(params.abo_freq, dtype=float)
    abo_p = abo_p / abo_p.sum()
    pra_vals = np.array([t[0] for t in params.pra_tiers])
    pra_p = np.array([t[1] for t in params.pra_tiers])
    pra_p = pra_p / pra_p.sum()
    patients, donors, pra = [], [], []
    while len(patients) < n_pairs:
        pt = ABO[rng.choice(4, p=abo_p)]
        dn = ABO[rng.choice(4, p=abo_p)]
        pr = float(pra_vals[rng.choice(len(pra_vals), p=pra_p)])
        if params.require_incompatible and abo_compatible(dn, pt) and rng.random() >= pr:
            # this pair could transplant directly and would not enter the pool
            continue
        patients.append(pt)
        donors.append(dn)
        pra.append(pr)
    arcs = set()
    for a in range(n_pairs):
        for b in range(n_pairs):
            if a != b and abo_compatible(donors[a], patients[b]) and rng.random() >= pra[b]:
                arcs.add((a, b))
    return KidneyInstance(n_pairs, frozenset(arcs), params.max_cycle_len,
                          name or f"ke{n_pairs}_s{seed}")


def build_kidney_ilp(inst: KidneyInstance) -> IlpInstance:
    """max sum x_v  s.t.  sum_{c ni v} y_c = x_v,  x, y binary."""
    cycles = inst.cycles
    n = inst.n_pairs
    rows = []
    for v in range(n):
        coeffs = {v: -1.0}
        for k, c in enumerate(cycles):
            if v in c:
                coeffs[n + k] = 1.0
        rows.append(Row.of(coeffs, "=", 0.0))
    return IlpInstance.binary(np.ones(n), rows, w=np.zeros(len(cycles)), name=inst.name)


def read_kidney(path) -> KidneyInstance:
    lines = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise InvalidInstance("empty kidney file")
    n = int(lines[0].split()[0])
    arcs = set()
    for ln in lines[1:]:
        a, b = ln.split()[:2]
        arcs.add((int(a), int(b)))
    return KidneyInstance(n, frozenset(arcs), name=Path(path).stem)


def write_kidney(inst: KidneyInstance, path) -> None:
    body = [str(inst.n_pairs)] + [f"{a} {b}" for a, b in sorted(inst.arcs)]
    Path(path).write_text("\n".join(body) + "\n")


@dataclasses.dataclass(frozen=True)
class TardinessInstance:
    p: tuple
    d: tuple
    beta: Optional[float] = None
    name: str = "tt"

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(int(x) for x in self.p))
        object.__setattr__(self, "d", tuple(int(x) for x in self.d))
        if len(self.p) != len(self.d) or not self.p:
            raise InvalidInstance("p and d must be non-empty and equally long")
        if min(self.p) < 1 or min(self.d) < 0:
            raise InvalidInstance("processing times must be >= 1 and due dates >= 0")

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def horizon(self) -> int:
        return int(sum(self.p))

    def utilities(self, order: Sequence[int]) -> np.ndarray:
        """-tardiness of each job when processed back to back in ``order``."""
        u = np.zeros(self.n)
        t = 0
        for j in order:
            t += self.p[j]
            u[j] = -max(t - self.d[j], 0)
        return u


def gen_tardiness(n: int, beta: float, seed: int, name: Optional[str] = None) -> TardinessInstance:
    if n < 1 or beta <= 0:
        raise InvalidInstance("need n >= 1 and beta > 0")
    rng = np.random.Generator(np.random.Philox(seed))
    p = rng.integers(1, 11, size=n)
    d = rng.integers(0, int(np.floor(beta * p.sum())) + 1, size=n)
    return TardinessInstance(tuple(p), tuple(d), beta, name or f"tt{n}_b{beta:g}_s{seed}")


def build_tardiness_ilp(inst: TardinessInstance) -> IlpInstance:
    """Time-indexed formulation; agents x_j in [-T, 0] are continuous utilities.

    y_jt (binary, t = 0..T-1) starts job j at t. Rows: one start per job,
    at most one job in process at each t, and sum_t t*y_jt + p_j <= d_j - x_j.
    """
    n, T = inst.n, inst.horizon
    def y(j, t):
        return n + j * T + t

    rows = []
    for j in range(n):
        rows.append(Row.of({y(j, t): 1.0 for t in range(T)}, "=", 1.0))
    for t in range(T):
        coeffs = {}
        for j in range(n):
            for s in range(max(0, t - inst.p[j] + 1), t + 1):
                coeffs[y(j, s)] = 1.0
        rows.append(Row.of(coeffs, "<=", 1.0))
    for j in range(n):
        coeffs = {y(j, t): float(t) for t in range(1, T)}
        coeffs[j] = 1.0
        rows.append(Row.of(coeffs, "<=", float(inst.d[j] - inst.p[j])))
    m = n * T
    return IlpInstance(
        v=np.ones(n), w=np.zeros(m), rows=tuple(rows),
        x_lb=np.full(n, -float(T)), x_ub=np.zeros(n), x_integer=np.zeros(n, dtype=bool),
        y_lb=np.zeros(m), y_ub=np.ones(m), y_integer=np.ones(m, dtype=bool),
        mode=CARDINAL, name=inst.name,
    )


def read_tardiness(path) -> TardinessInstance:
    p, d = [], []
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#")[0].strip()
        if ln:
            a, b = ln.split()[:2]
            p.append(int(a))
            d.append(int(b))
    return TardinessInstance(tuple(p), tuple(d), name=Path(path).stem)


def write_tardiness(inst: TardinessInstance, path) -> None:
    Path(path).write_text("".join(f"{a} {b}\n" for a, b in zip(inst.p, inst.d)))


def tardiness_brute_force(inst: TardinessInstance) -> tuple[float, np.ndarray]:
    """Optimal total utility and the distinct optimal utility vectors over all job orders.

    Idle time never helps, so back-to-back schedules reach every optimal utility vector.
    """
    best = -np.inf
    vecs: dict = {}
    for order in itertools.permutations(range(inst.n)):
        u = inst.utilities(order)
        s = u.sum()
        if s > best + 1e-9:
            best, vecs = s, {}
        if abs(s - best) <= 1e-9:
            vecs[tuple(u)] = u
    return float(best), np.array(sorted(vecs.values(), key=tuple))


__all__ = [
    "KidneyParams", "KidneyInstance", "enumerate_cycles", "gen_kidney", "build_kidney_ilp",
    "read_kidney", "write_kidney", "TardinessInstance", "gen_tardiness", "build_tardiness_ilp",
    "read_tardiness", "write_tardiness", "tardiness_brute_force", "abo_compatible",
]
