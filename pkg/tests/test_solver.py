import numpy as np
import pytest
from conftest import random_signed_graph
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_polarity_cut

from dcqaoa.graph import WeightedGraph, all_spin_assignments, brute_force_maxcut, cut_value, performance_ratio
from dcqaoa.partition import Partition, random_partition
from dcqaoa.sim import QaoaAngles
from dcqaoa.solver import (
    FixedTopLevel,
    HeuristicStrategy,
    QAOA2Solver,
    SimConfig,
    SubSolution,
    build_merge_graph,
    expected_call_counts,
    merge_constant,
    propagate_polarities,
    recursive_solve,
    solve_subgraph,
    split_subgraphs,
)

FAST = SimConfig(steps=5, shots=200)


def random_subs(part, rng):
    return [SubSolution(nodes, rng.choice([-1, 1], len(nodes)), 0.0) for nodes in part.groups()]


def merge_case(n, capacity, seed, integer=False):
    rng = np.random.default_rng(seed)
    g = random_signed_graph(n, p=0.5, seed=seed)
    if integer:
        g = WeightedGraph(g.num_nodes, g.u, g.v, np.round(g.w * 8))
        g = WeightedGraph(g.num_nodes, g.u[g.w != 0], g.v[g.w != 0], g.w[g.w != 0])
    part = random_partition(g, capacity, rng)
    subs = random_subs(part, rng)
    for sub, h in zip(subs, split_subgraphs(g, part)):
        sub.cut = cut_value(h, sub.spins)
    return g, part, subs


@pytest.mark.parametrize("case", range(40))
def test_merge_equivalence_every_polarity(case):
    n = 4 + case % 9
    g, part, subs = merge_case(n, 2 + case % 4, case, integer=True)
    merge = build_merge_graph(g, part, subs)
    base = sum(s.cut for s in subs) + merge_constant(g, part, merge)
    for s in all_spin_assignments(part.k):
        z = propagate_polarities(subs, s, n)
        assert cut_value(g, z) == base + cut_value(merge, s)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_merge_argmax_matches_global(n, capacity, seed):
    g, part, subs = merge_case(n, capacity, seed)
    merge = build_merge_graph(g, part, subs)
    _, s_star = brute_force_maxcut(merge)
    best_global = brute_polarity_cut(lambda s: cut_value(g, propagate_polarities(subs, s, n)), part.k)
    assert cut_value(g, propagate_polarities(subs, s_star, n)) == pytest.approx(best_global, abs=1e-9)


def test_flipping_a_subsolution_negates_its_row():
    g, part, subs = merge_case(10, 3, 5)
    W = build_merge_graph(g, part, subs).adjacency
    subs[1].spins = -subs[1].spins
    W2 = build_merge_graph(g, part, subs).adjacency
    sign = np.ones(part.k)
    sign[1] = -1
    np.testing.assert_allclose(W2, W * np.outer(sign, sign))


def test_merge_examples():
    g = WeightedGraph.from_edges(2, [(0, 1, 2.0)])
    part = Partition([0, 1], 1)
    subs = [SubSolution(np.array([0]), np.array([1]), 0.0), SubSolution(np.array([1]), np.array([1]), 0.0)]
    merge = build_merge_graph(g, part, subs)
    assert merge.edges() == [(0, 1, 2.0)]
    h = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, -1.0)])
    part2 = Partition([0, 0, 1, 1], 2)
    subs2 = [SubSolution(np.array([0, 1]), np.array([1, -1]), 1.0), SubSolution(np.array([2, 3]), np.array([1, 1]), 0.0)]
    assert build_merge_graph(h, part2, subs2).num_edges == 0


def test_split_examples():
    g = random_signed_graph(6, seed=1)
    (only,) = split_subgraphs(g, Partition(np.zeros(6), 6))
    assert sorted(only.edges()) == sorted(g.edges())
    singles = split_subgraphs(g, Partition(np.arange(6), 1))
    assert len(singles) == 6 and all(s.num_edges == 0 for s in singles)


def test_propagate_examples():
    subs = [SubSolution(np.array([0, 2]), np.array([1, -1]), 0.0), SubSolution(np.array([1]), np.array([-1]), 0.0)]
    np.testing.assert_array_equal(propagate_polarities(subs, [1, 1]), [1, -1, -1])
    g = random_signed_graph(3, p=1.0, seed=2)
    assert cut_value(g, propagate_polarities(subs, [-1, -1])) == cut_value(g, propagate_polarities(subs, [1, 1]))


def test_solve_subgraph_edgeless_and_single_edge():
    rng = np.random.default_rng(0)
    edgeless = solve_subgraph(WeightedGraph.from_edges(3, []), None, SimConfig(), rng)
    np.testing.assert_array_equal(edgeless.spins, 1)
    assert edgeless.cut == 0.0
    edge = WeightedGraph.from_edges(2, [(0, 1, 0.7)])
    sol = solve_subgraph(edge, QaoaAngles([0.1], [0.1]), SimConfig(random_cut_floor=False), rng)
    assert sol.cut == pytest.approx(0.7)


def test_call_counts_500_nodes():
    g = random_signed_graph(500, p=0.01, seed=0)
    rep = recursive_solve(g, "random", SimConfig(steps=1, shots=20), seed=1)
    assert [lv.calls for lv in rep.levels] == [50, 5, 1]
    assert rep.total_calls == 56 and rep.depth == 2
    assert expected_call_counts(500, 10) == [50, 5, 1]


def test_small_graph_single_call():
    g = random_signed_graph(8, seed=3)
    rep = recursive_solve(g, "kl", FAST, seed=0)
    assert rep.total_calls == 1 and rep.depth == 0


@pytest.mark.parametrize("name", ["random", "modularity", "boundary", "kl"])
def test_ratio_bounds_and_z2(name):
    g = random_signed_graph(18, p=0.3, seed=4)
    opt = brute_force_maxcut(g)[0]
    rep = recursive_solve(g, name, FAST, seed=2, opt=opt)
    assert 0.5 <= rep.ratio <= 1.0
    assert rep.ratio == performance_ratio(rep.cut, opt, g.negative_weight_sum)
    assert performance_ratio(cut_value(g, -rep.spins), opt, g.negative_weight_sum) == rep.ratio


def test_recursive_solve_deterministic():
    g = random_signed_graph(25, p=0.2, seed=6)
    a = recursive_solve(g, "boundary", FAST, seed=9)
    b = recursive_solve(g, "boundary", FAST, seed=9)
    np.testing.assert_array_equal(a.spins, b.spins)


def test_exact_merge_flag():
    g = random_signed_graph(30, p=0.2, seed=7)
    rep = recursive_solve(g, "kl", SimConfig(steps=5, shots=200, exact_merge=True), seed=0)
    assert rep.cut == cut_value(g, rep.spins)


def test_fixed_top_level_uses_given_partition_and_angles():
    g = random_signed_graph(20, p=0.3, seed=8)
    part = random_partition(g, 10, seed=0)
    angles = [QaoaAngles([0.2], [0.3])] * part.k
    rep = recursive_solve(g, FixedTopLevel(part, angles, HeuristicStrategy("random")), FAST, seed=0)
    assert rep.levels[0].num_subgraphs == part.k


def test_invalid_partition_rejected():
    class Bad:
        def propose(self, g, capacity, level, rng):
            return Partition(np.zeros(g.num_nodes, dtype=int), capacity), None

        def whole_graph_angles(self, g, level, rng):
            return None

    with pytest.raises(ValueError):
        recursive_solve(random_signed_graph(15, seed=1), Bad(), FAST, seed=0)


def test_estimator_front_end():
    g = random_signed_graph(14, p=0.3, seed=9)
    opt = brute_force_maxcut(g)[0]
    est = QAOA2Solver(partitioner="kl", steps=5, shots=200)
    spins = est.fit_predict(g, opt=opt)
    assert spins.shape == (14,) and 0.5 <= est.ratio_ <= 1.0
    assert est.get_params()["max_nodes"] == 10


def test_sim_config_defaults():
    c = SimConfig()
    assert (c.max_nodes, c.p, c.steps, c.lr, c.shots) == (10, 1, 20, 0.01, 1000)
    with pytest.raises(ValueError):
        SimConfig(max_nodes=17)
