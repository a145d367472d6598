import itertools

import numpy as np
import pytest

from fairilp.model import IlpInstance, Row

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f" -- {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def example1() -> IlpInstance:
    """v = (4,3,1,1), one knapsack row; optimal set {(1,0,0,0),(0,1,1,0),(0,1,0,1)}."""
    return IlpInstance.binary([4, 3, 1, 1], [Row.of({0: 4, 1: 2.5, 2: 2.5, 3: 2.5}, "<=", 6)], name="example1")


def twins_knapsack() -> IlpInstance:
    """max 2x1 + x2 + x3 + x4 s.t. the same weights <= 3."""
    return IlpInstance.binary([2, 1, 1, 1], [Row.of({0: 2, 1: 1, 2: 1, 3: 1}, "<=", 3)], name="twins")


@pytest.fixture
def ex1():
    return example1()


@pytest.fixture
def twins():
    return twins_knapsack()


def random_knapsack(rng: np.random.Generator, n: int) -> IlpInstance:
    """Few distinct small weights so that ties, and hence many optima, are common."""
    v = rng.integers(1, 4, size=n)
    a = v if rng.random() < 0.5 else rng.integers(1, 4, size=n)
    cap = int(max(a.max(), rng.integers(1, max(2, a.sum() // 2) + 1)))
    return IlpInstance.binary(v, [Row.of(dict(enumerate(a.astype(float))), "<=", cap)], name=f"knap{n}")


def random_constrained(rng: np.random.Generator, n: int) -> IlpInstance:
    """Objective in {0,1,2}, a couple of random <= rows and an occasional >= row."""
    v = rng.integers(0, 3, size=n)
    rows = []
    for _ in range(int(rng.integers(1, 4))):
        support = rng.random(n) < 0.6
        if not support.any():
            support[rng.integers(n)] = True
        coef = {int(i): float(rng.integers(1, 3)) for i in np.flatnonzero(support)}
        rhs = int(rng.integers(1, max(2, sum(coef.values()) // 2) + 1))
        rows.append(Row.of(coef, "<=", rhs))
    if rng.random() < 0.3:
        i, j = rng.choice(n, size=2, replace=False)
        rows.append(Row.of({int(i): 1.0, int(j): 1.0}, ">=", 1))
    return IlpInstance.binary(v, rows, name=f"rand{n}")


def random_instances(count: int, seed: int, n_max: int = 10, n_min: int = 3) -> list[IlpInstance]:
    """Feasible random dichotomous instances, alternating the two generators."""
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    while len(out) < count:
        n = int(rng.integers(n_min, n_max + 1))
        inst = random_knapsack(rng, n) if len(out) % 2 == 0 else random_constrained(rng, n)
        if any(inst.is_feasible(np.array(x, float)) for x in itertools.product((0, 1), repeat=n)):
            out.append(inst)
    return out


def brute_optimal_set(inst: IlpInstance) -> tuple[float, np.ndarray]:
    """Optimal value and optimal 0/1 vectors by listing all 2^n points (pure-x instances only)."""
    assert inst.aux_count == 0
    best, rows = -np.inf, []
    for x in itertools.product((0, 1), repeat=inst.n_agents):
        x = np.array(x, float)
        if not inst.is_feasible(x):
            continue
        val = float(inst.v @ x)
        if val > best + 1e-9:
            best, rows = val, [x]
        elif abs(val - best) <= 1e-9:
            rows.append(x)
    return best, np.array(rows)
