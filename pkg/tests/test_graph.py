import itertools

import networkx as nx
import numpy as np
import pytest
from conftest import random_signed_graph
from hypothesis import given, settings
from hypothesis import strategies as st

from dcqaoa.graph import (
    BestKnownTable,
    InstanceParseError,
    QuboInstance,
    WeightedGraph,
    all_spin_assignments,
    best_known_cut,
    brute_force_maxcut,
    cut_value,
    cut_values_batch,
    embed_qubo_assignment,
    estimate_optimum,
    local_search_cut,
    normalize_edge_weights,
    parse_instance,
    performance_ratio,
    qubo_to_maxcut,
    reference_optimum,
    write_edge_list,
)


def write(tmp_path, text, name="g.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_small_edge_list(tmp_path):
    g = parse_instance(write(tmp_path, "3 2\n1 2 1.0\n2 3 -2.0"))
    assert g.num_nodes == 3
    assert sorted(g.edges()) == [(0, 1, 1.0), (1, 2, -2.0)]
    assert g.name == "g"


@pytest.mark.parametrize(
    "text, fragment, line",
    [
        ("3 1\n1 1 5.0\n", "self-loop", 2),
        ("3 2\n1 2 1\n2 1 3\n", "duplicate", 3),
        ("3 1\n1 2 abc\n", "non-numeric", 2),
        ("3\n1 2 1\n", "header", 1),
        ("3 1\n1 4 1\n", "range", 2),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, text, fragment, line):
    with pytest.raises(InstanceParseError) as exc:
        parse_instance(write(tmp_path, text))
    assert fragment in str(exc.value)
    assert exc.value.lineno == line


def test_parse_edge_count_mismatch(tmp_path):
    with pytest.raises(InstanceParseError):
        parse_instance(write(tmp_path, "3 2\n1 2 1\n"))


def test_parse_drops_zero_weights_and_keeps_header_count(tmp_path):
    g = parse_instance(write(tmp_path, "3 2\n1 2 0\n2 3 1\n"))
    assert g.num_edges == 1


def test_parse_large_instance_matches_header(tmp_path):
    rng = np.random.default_rng(0)
    pairs = [(a, b) for a in range(1, 101) for b in range(a + 1, 101)]
    chosen = [pairs[i] for i in rng.choice(len(pairs), 300, replace=False)]
    lines = [f"100 {len(chosen)}"] + [f"{a} {b} {rng.choice([-1, 1])}" for a, b in chosen]
    g = parse_instance(write(tmp_path, "\n".join(lines), "g05_100.1"))
    assert (g.num_nodes, g.num_edges) == (100, 300)
    assert g.name == "g05_100.1"


def test_write_then_parse_round_trip(tmp_path):
    g = random_signed_graph(9, seed=3)
    path = tmp_path / "r.txt"
    write_edge_list(g, path)
    h = parse_instance(path)
    assert sorted(h.edges()) == sorted(g.edges())


def test_graph_invariants():
    with pytest.raises(ValueError):
        WeightedGraph.from_edges(3, [(0, 0, 1.0)])
    with pytest.raises(ValueError):
        WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 0, 2.0)])
    with pytest.raises(ValueError):
        WeightedGraph.from_edges(0, [])


def test_qubo_parse_symmetrises(tmp_path):
    q = parse_instance(write(tmp_path, "2\n1 1 3\n1 2 4\n", "q.qubo"), "qubo")
    assert isinstance(q, QuboInstance)
    np.testing.assert_array_equal(q.Q, [[0, 2], [2, 0]])
    np.testing.assert_array_equal(q.c, [3, 0])
    assert q.objective([1, 1]) == 7.0


def test_qubo_sizes():
    q = QuboInstance(np.zeros((4, 4)), np.zeros(4))
    g, offset = qubo_to_maxcut(q)
    assert g.num_nodes == 5
    assert g.num_edges == 0 and offset == 0.0
    assert cut_value(g, np.array([1, -1, 1, -1, 1])) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_qubo_round_trip_exhaustive(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(n, n)).round(2)
    c = rng.normal(size=n).round(2)
    q = QuboInstance(Q, c)
    g, offset = qubo_to_maxcut(q)
    for bits in itertools.product((0, 1), repeat=n):
        x = np.array(bits)
        z = embed_qubo_assignment(x)
        assert z[0] == 1
        assert q.objective(x) == pytest.approx(offset - cut_value(g, z), abs=1e-9)


def test_qubo_round_trip_ten_variables():
    rng = np.random.default_rng(5)
    q = QuboInstance(rng.normal(size=(10, 10)), rng.normal(size=10))
    g, offset = qubo_to_maxcut(q)
    X = (all_spin_assignments(10) < 0).astype(int)
    Z = np.column_stack([np.ones(len(X), dtype=int), 1 - 2 * X])
    f = np.einsum("bi,ij,bj->b", X, q.Q, X) + X @ q.c
    np.testing.assert_allclose(f, offset - cut_values_batch(g, Z), atol=1e-9)


def test_normalize_examples():
    g = WeightedGraph.from_edges(3, [(0, 1, 2.0), (1, 2, -4.0)])
    np.testing.assert_array_equal(normalize_edge_weights(g).w, [0.5, -1.0])
    one = WeightedGraph.from_edges(2, [(0, 1, 1.0)])
    np.testing.assert_array_equal(normalize_edge_weights(one).w, [1.0])
    with pytest.raises(ValueError):
        normalize_edge_weights(WeightedGraph.from_edges(2, []))


def test_cut_examples():
    g = random_signed_graph(6, seed=1)
    assert cut_value(g, np.ones(6, dtype=int)) == 0.0
    single = WeightedGraph.from_edges(2, [(0, 1, 1.0)])
    assert cut_value(single, np.array([1, -1])) == 1.0


def test_cut_matches_independent_sum(rng):
    g = random_signed_graph(8, seed=2)
    A = g.adjacency
    for _ in range(20):
        z = rng.choice([-1, 1], 8)
        expected = sum(A[i, j] for i in range(8) for j in range(i + 1, 8) if z[i] != z[j])
        assert cut_value(g, z) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_cut_z2_symmetry(n, seed):
    g = random_signed_graph(n, seed=seed)
    z = np.random.default_rng(seed).choice([-1, 1], n)
    assert cut_value(g, z) == cut_value(g, -z)


def test_ratio_examples():
    assert performance_ratio(5.0, 5.0, -2.0) == 1.0
    g = WeightedGraph.from_edges(3, [(0, 1, 3.0), (1, 2, -1.0)])
    z = np.array([1, -1, 1])
    cut = cut_value(g, z)
    assert cut == 2.0
    opt = max(cut_value(g, s) for s in all_spin_assignments(3))
    assert performance_ratio(cut, opt, g.negative_weight_sum) == pytest.approx(3.0 / (opt + 1.0))


def test_ratio_errors_and_warning():
    with pytest.raises(ValueError):
        performance_ratio(0.0, -1.0, -1.0)
    with pytest.warns(RuntimeWarning):
        assert performance_ratio(3.0, 2.0, 0.0) == 1.5


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_ratio_monotone_in_cut(a, b):
    lo, hi = sorted((a, b))
    assert performance_ratio(lo, 10.0, -6.0) <= performance_ratio(hi, 10.0, -6.0)


def test_brute_force_against_networkx_enumeration():
    g = random_signed_graph(9, seed=4)
    G = nx.Graph()
    G.add_nodes_from(range(9))
    G.add_weighted_edges_from(g.edges())
    best = max(
        nx.cut_size(G, [i for i in range(9) if (b >> i) & 1], weight="weight") for b in range(2**9)
    )
    opt, z = brute_force_maxcut(g)
    assert opt == pytest.approx(best, abs=1e-9)
    assert cut_value(g, z) == pytest.approx(opt)


def test_brute_force_chunking_consistent():
    g = random_signed_graph(14, seed=7)
    assert brute_force_maxcut(g, chunk_bits=4)[0] == pytest.approx(brute_force_maxcut(g)[0])


@pytest.mark.parametrize("seed", range(4))
def test_best_known_reaches_exact_optimum_on_small_graphs(seed):
    g = random_signed_graph(16, p=0.3, seed=seed)
    assert best_known_cut(g)[0] == pytest.approx(brute_force_maxcut(g)[0])


def test_local_search_floor(rng):
    g = random_signed_graph(15, seed=9)
    for _ in range(10):
        z = local_search_cut(g, rng.choice([-1, 1], 15))
        assert cut_value(g, z) >= g.w.sum() / 2 - 1e-9


def test_reference_optimum_policy(tmp_path):
    small = random_signed_graph(8, seed=1)
    assert reference_optimum(small) == brute_force_maxcut(small)[0]
    big = random_signed_graph(25, p=0.2, seed=1, name="big.3")
    with pytest.raises(KeyError):
        reference_optimum(big)
    table = BestKnownTable({"big.3": 12.5})
    table.save(tmp_path / "bk.csv")
    loaded = BestKnownTable.load(tmp_path / "bk.csv")
    assert reference_optimum(big, loaded) == 12.5
    assert estimate_optimum(big) == pytest.approx(best_known_cut(big)[0])
