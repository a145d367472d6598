import itertools

import networkx as nx
import numpy as np
import pytest

from fairilp.errors import InvalidInstance
from fairilp.instances import (
    KidneyInstance,
    KidneyParams,
    TardinessInstance,
    build_kidney_ilp,
    build_tardiness_ilp,
    enumerate_cycles,
    gen_kidney,
    gen_tardiness,
    read_kidney,
    read_tardiness,
    tardiness_brute_force,
    write_kidney,
    write_tardiness,
)
from fairilp.model import IlpInstance, solve_optimal
from fairilp.partition import compute_bounds, partition_agents


def test_universal_three_pairs_has_five_cycles():
    ke = gen_kidney(3, seed=0, params=KidneyParams.universal())
    assert len(ke.arcs) == 6
    assert len(ke.cycles) == 5


def test_no_compatibility_gives_no_cycles():
    ke = gen_kidney(10, seed=1, params=KidneyParams.none())
    assert not ke.arcs and not ke.cycles
    inst = build_kidney_ilp(ke)
    _, z = solve_optimal(inst)
    assert z == 0


def test_generator_is_deterministic():
    assert gen_kidney(25, seed=9) == gen_kidney(25, seed=9)
    assert gen_kidney(25, seed=9).arcs != gen_kidney(25, seed=10).arcs
    assert gen_tardiness(6, 0.5, 3) == gen_tardiness(6, 0.5, 3)


@pytest.mark.parametrize("seed", range(5))
def test_cycles_match_networkx(seed):
    ke = gen_kidney(15, seed=seed)
    g = nx.DiGraph(list(ke.arcs))
    g.add_nodes_from(range(ke.n_pairs))
    expected = sum(1 for c in nx.simple_cycles(g, length_bound=3))
    assert len(ke.cycles) == expected
    for c in ke.cycles:
        assert c[0] == min(c)
        assert all((c[i], c[(i + 1) % len(c)]) in ke.arcs for i in range(len(c)))


def test_three_cycle_has_no_varying_agents():
    ke = KidneyInstance(3, frozenset({(0, 1), (1, 2), (2, 0)}))
    inst = build_kidney_ilp(ke)
    _, z = solve_optimal(inst)
    assert z == 3 and partition_agents(inst, z).M == frozenset()


def test_disjoint_two_cycles():
    ke = KidneyInstance(4, frozenset({(0, 1), (1, 0), (2, 3), (3, 2)}))
    _, z = solve_optimal(build_kidney_ilp(ke))
    assert z == 4


def test_overlapping_two_cycles():
    ke = KidneyInstance(3, frozenset({(0, 1), (1, 0), (1, 2), (2, 1)}))
    inst = build_kidney_ilp(ke)
    _, z = solve_optimal(inst)
    part = partition_agents(inst, z)
    assert z == 2 and part.M == {0, 2} and part.Y == {1}


def test_cycle_length_cap():
    arcs = {(0, 1), (1, 2), (2, 3), (3, 0)}
    assert enumerate_cycles(4, arcs, 3) == []
    assert enumerate_cycles(4, arcs, 4) == [(0, 1, 2, 3)]


def test_bad_arc_rejected():
    with pytest.raises(InvalidInstance):
        KidneyInstance(2, frozenset({(0, 0)}))


def test_kidney_file_round_trip(tmp_path):
    ke = gen_kidney(12, seed=4)
    path = tmp_path / "k.txt"
    write_kidney(ke, path)
    back = read_kidney(path)
    assert back.n_pairs == ke.n_pairs and back.arcs == ke.arcs


def test_tardiness_generator_ranges():
    for seed in range(20):
        tt = gen_tardiness(7, 0.5, seed)
        assert all(1 <= p <= 10 for p in tt.p)
        assert all(0 <= d <= np.floor(0.5 * sum(tt.p)) for d in tt.d)


def test_single_job():
    tt = TardinessInstance((3,), (1,))
    _, z = solve_optimal(build_tardiness_ilp(tt))
    assert z == -2


def test_two_job_toy_optimum():
    tt = TardinessInstance((1, 2), (1, 2))
    best, U = tardiness_brute_force(tt)
    _, z = solve_optimal(build_tardiness_ilp(tt))
    assert z == best == -1


@pytest.mark.parametrize("seed", range(6))
def test_agents_equal_minus_tardiness(seed):
    tt = gen_tardiness(int(3 + seed % 4), 0.5, seed)
    inst = build_tardiness_ilp(tt)
    sol, z = solve_optimal(inst)
    best, U = tardiness_brute_force(tt)
    assert z == pytest.approx(best)
    # read the schedule back from the start-time variables
    T = tt.horizon
    starts = [int(np.flatnonzero(sol.y[j * T:(j + 1) * T] > 0.5)[0]) for j in range(tt.n)]
    finish = [s + p for s, p in zip(starts, tt.p)]
    np.testing.assert_allclose(sol.x, [-max(f - d, 0) for f, d in zip(finish, tt.d)], atol=1e-6)
    b = compute_bounds(inst, z)
    np.testing.assert_allclose(b.utopia, U.max(0), atol=1e-6)
    np.testing.assert_allclose(b.dystopia, U.min(0), atol=1e-6)


def test_tardiness_file_and_json_round_trip(tmp_path):
    tt = gen_tardiness(5, 0.3, 2)
    path = tmp_path / "t.txt"
    write_tardiness(tt, path)
    back = read_tardiness(path)
    assert back.p == tt.p and back.d == tt.d
    inst = build_tardiness_ilp(tt)
    assert IlpInstance.from_json(inst.to_json()).to_dict() == inst.to_dict()


def test_tardiness_validation():
    with pytest.raises(InvalidInstance):
        TardinessInstance((0, 1), (1, 1))
    with pytest.raises(InvalidInstance):
        TardinessInstance((1,), (1, 2))


def test_utilities_of_orders():
    tt = TardinessInstance((2, 2), (2, 2))
    assert tt.utilities((0, 1)).tolist() == [0, -2]
    assert {tuple(u) for u in tardiness_brute_force(tt)[1]} == {(0, -2), (-2, 0)}
    assert len(list(itertools.permutations(range(tt.n)))) == 2
