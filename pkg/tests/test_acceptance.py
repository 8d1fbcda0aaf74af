"""Acceptance checks. Each test prints one ``PASS``/``FAIL`` line for its criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the desk-scale criteria (9, 10
and 11) train both networks once per session and cache the models in the pytest cache.
"""

import hashlib
import json
import time

import numpy as np
import pytest
from conftest import random_signed_graph
from oracles import dense_qaoa_expectation, reference_gcd

from dcqaoa import bench, cli, gen
from dcqaoa.graph import WeightedGraph, all_spin_assignments, brute_force_maxcut, cut_value, estimate_optimum
from dcqaoa.partition import random_partition
from dcqaoa.sim import TWO_PI, QaoaAngles, qaoa_expectation, qaoa_gradient
from dcqaoa.solver import SimConfig, SubSolution, build_merge_graph, merge_constant, propagate_polarities, recursive_solve, split_subgraphs


def announce(capsys, number, title, passed, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}")


# --- 1. simulator oracle ------------------------------------------------------------


def test_c01_simulator_matches_dense_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_val, worst_grad = 0.0, 0.0
    for draw in range(50):
        m = int(rng.integers(2, 5))
        g = random_signed_graph(m, p=0.8, seed=draw)
        p = int(rng.integers(1, 4))
        angles = QaoaAngles.random(p, rng)
        val = qaoa_expectation(g, angles)
        worst_val = max(worst_val, abs(val - dense_qaoa_expectation(g, angles.gamma, angles.beta)))
        exact = np.concatenate(qaoa_gradient(g, angles))
        vec, h = angles.as_vector(), 1e-5
        fd = np.empty_like(vec)
        for i in range(len(vec)):
            up, dn = vec.copy(), vec.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (qaoa_expectation(g, QaoaAngles.from_vector(up)) - qaoa_expectation(g, QaoaAngles.from_vector(dn))) / (2 * h)
        worst_grad = max(worst_grad, np.linalg.norm(exact - fd) / max(np.linalg.norm(fd), 1e-3))
    elapsed = time.perf_counter() - t0
    passed = worst_val < 1e-9 and worst_grad < 1e-4 and elapsed < 60
    announce(capsys, 1, "simulator oracle", passed, f"max |dE| {worst_val:.2e}, max grad rel err {worst_grad:.2e}, {elapsed:.1f}s")
    assert passed


# --- 2. merge equivalence -----------------------------------------------------------


def test_c02_merge_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    mismatches, checked = 0, 0
    for case in range(200):
        n = int(rng.integers(3, 13))
        g = random_signed_graph(n, p=0.5, seed=case)
        # integer weights keep every sum exact in floating point
        w = np.round(g.w * 8)
        g = WeightedGraph(n, g.u[w != 0], g.v[w != 0], w[w != 0])
        part = random_partition(g, int(rng.integers(1, n + 1)), rng)
        subs = []
        for nodes, sub in zip(part.groups(), split_subgraphs(g, part)):
            spins = rng.choice([-1, 1], len(nodes))
            subs.append(SubSolution(nodes, spins, cut_value(sub, spins)))
        merge = build_merge_graph(g, part, subs)
        base = sum(s.cut for s in subs) + merge_constant(g, part, merge)
        for s in all_spin_assignments(part.k):
            checked += 1
            mismatches += cut_value(g, propagate_polarities(subs, s, n)) != base + cut_value(merge, s)
    elapsed = time.perf_counter() - t0
    passed = mismatches == 0 and elapsed < 60
    announce(capsys, 2, "merge-graph equivalence", passed, f"{checked} polarity vectors over 200 cases, {mismatches} mismatches, {elapsed:.1f}s")
    assert passed


# --- 3. ratio bounds ----------------------------------------------------------------


def planted_graph(n, seed):
    """Signed graph with no frustration: the planted cut takes every positive edge and no negative one."""
    rng = np.random.default_rng(seed)
    side = rng.choice([-1, 1], n)
    iu, iv = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < min(1.0, 4.0 / (n - 1))
    iu, iv = iu[keep], iv[keep]
    w = rng.uniform(0.1, 1.0, len(iu)) * np.where(side[iu] != side[iv], 1.0, -1.0)
    g = WeightedGraph(n, iu, iv, w, name=f"planted{n}.{seed}")
    # evaluated with the solver's own summation so the bound check is not blurred by rounding
    opt = cut_value(g, side)
    assert opt == pytest.approx(w[w > 0].sum(), rel=1e-12)
    return g, opt


def test_c03_ratio_bounds(capsys):
    t0 = time.perf_counter()
    cfg = SimConfig(steps=10, shots=500)
    methods = bench.BASELINES
    ratios, floors = [], 0
    for run in range(200):
        n = 12 + run % 29
        if n <= 20:
            g = random_signed_graph(n, p=0.3, seed=run, name=f"signed{n}.{run}")
            opt = brute_force_maxcut(g)[0]
        else:
            g, opt = planted_graph(n, run)
        rep = recursive_solve(g, methods[run % len(methods)], cfg, seed=run, opt=opt)
        ratios.append(rep.ratio)
        floors += rep.floor_count
    ratios = np.array(ratios)
    elapsed = time.perf_counter() - t0
    passed = bool(np.all((ratios >= 0.5) & (ratios <= 1.0))) and elapsed < 600
    announce(capsys, 3, "ratio within [0.5, 1]", passed, f"200 runs, min {ratios.min():.4f}, max {ratios.max():.4f}, subgraph floor applied {floors}x, {elapsed:.1f}s")
    assert passed


# --- 4. recursion accounting --------------------------------------------------------


def test_c04_recursion_accounting(capsys):
    g = random_signed_graph(500, p=0.01, seed=0)
    rep = recursive_solve(g, "random", SimConfig(steps=1, shots=20), seed=1)
    calls = [lv.calls for lv in rep.levels]
    passed = calls == [50, 5, 1] and rep.total_calls == 56
    announce(capsys, 4, "recursion accounting", passed, f"per-level calls {calls}, total {rep.total_calls}")
    assert passed


# --- 5. GCD fidelity ----------------------------------------------------------------


def test_c05_gcd_fidelity(capsys):
    rng = np.random.default_rng(505)
    cases = agree = 0
    grid = np.array([0.1, 0.3, 0.6])
    for n in range(1, 7):
        for k in range(1, 4):
            for cap in range(-(-n // k), n + 1):
                for _ in range(40):
                    S = rng.choice(grid, size=(n, k)) + rng.uniform(0, 1e-3, (n, k)) * rng.integers(0, 2)
                    cases += 1
                    agree += np.array_equal(gen.gcd_discretize(S, cap), reference_gcd(S, cap))
    violations = 0
    for _ in range(10_000):
        n = int(rng.integers(20, 120))
        k = int(rng.integers(2, 13))
        cap = -(-n // k) + int(rng.integers(0, 3))
        S = gen.gcd_discretize(rng.dirichlet(np.ones(k), size=n), cap)
        violations += not (np.all(S.sum(axis=1) == 1) and np.all(S.sum(axis=0) <= cap))
    passed = agree == cases and violations == 0
    announce(capsys, 5, "greedy capacity discretisation", passed, f"{agree}/{cases} grid cases agree with the reference, {violations} constraint violations in 10000 large draws")
    assert passed


# --- 6. OCH geometry ----------------------------------------------------------------


def test_c06_och_geometry(capsys):
    rng = np.random.default_rng(606)
    worst_orth = worst_g = 0.0
    for _ in range(1000):
        h = int(rng.integers(8, 65))
        k = int(rng.integers(1, min(h - 1, gen.K_MAX) + 1))
        res = gen.och_centers(rng.normal(size=(int(rng.integers(2, 60)), h)), k, rng.normal(size=(gen.K_MAX, h)))
        C = res.centers
        worst_orth = max(worst_orth, np.abs(C @ C.T - np.eye(k)).max())
        worst_g = max(worst_g, np.abs(C @ res.global_vector).max())
    passed = worst_orth < 1e-6 and worst_g < 1e-6
    announce(capsys, 6, "orthogonal centres", passed, f"max |CC^T - I| {worst_orth:.1e}, max |Cg| {worst_g:.1e} over 1000 draws")
    assert passed


# --- 7. evaluator contracts ---------------------------------------------------------


def test_c07_evaluator_contracts(capsys):
    rng = np.random.default_rng(707)
    net = gen.EvaluatorNet(seed=7)
    g = random_signed_graph(34, p=0.15, seed=7)
    part = random_partition(g, 10, rng)
    S = np.eye(part.k)[part.labels]
    P = rng.uniform(0, TWO_PI, (2, part.k))
    # angles whose shift by 2*pi is exact in floating point (Sterbenz), so periodicity can be tested bitwise
    P = (P + TWO_PI) - TWO_PI
    base = float(gen.evaluator_forward(net, g, S, P).value)
    periodic = all(float(gen.evaluator_forward(net, g, S, P + c * TWO_PI).value) == base for c in (1, -1))
    outputs = [base]
    worst_perm = 0.0
    for _ in range(20):
        perm = rng.permutation(g.num_nodes)
        inv = np.argsort(perm)
        h = WeightedGraph(g.num_nodes, inv[g.u], inv[g.v], g.w)
        val = float(gen.evaluator_forward(net, h, S[perm], P).value)
        worst_perm = max(worst_perm, abs(val - base))
    for seed in range(30):
        g2 = random_signed_graph(15 + seed, p=0.2, seed=seed)
        p2 = random_partition(g2, 10, rng)
        outputs.append(float(gen.evaluator_forward(net, g2, np.eye(p2.k)[p2.labels], rng.uniform(-10, 10, (2, p2.k))).value))
    in_range = all(0.5 < v < 1.0 for v in outputs)
    passed = in_range and periodic and worst_perm < 1e-8
    announce(capsys, 7, "evaluator contracts", passed, f"outputs in ({min(outputs):.4f}, {max(outputs):.4f}), periodic {periodic}, max permutation change {worst_perm:.1e}")
    assert passed


# --- 8. gradient probes -------------------------------------------------------------


def test_c08_gradient_probes(capsys):
    net = gen.GeneratorNet(seed=8)
    ev = gen.EvaluatorNet(seed=8)
    g = random_signed_graph(40, p=0.1, seed=8)
    net.zero_grad()
    out = gen.generator_forward(net, g)
    from dcqaoa import autodiff as ad

    ad.sum_(out.P).backward()
    leak = max((float(np.abs(t.grad).max()) for t in net.topology.parameters() if t.grad is not None), default=0.0)
    net.zero_grad()
    with gen._Frozen(ev):
        out = gen.generator_forward(net, g)
        gen.evaluator_forward(ev, g, out.S, out.P).backward()
    topo = float(np.sqrt(sum(np.sum(t.grad**2) for t in net.topology.parameters() if t.grad is not None)))
    passed = leak == 0.0 and topo > 0.0
    announce(capsys, 8, "stop-gradient and straight-through", passed, f"topology gradient via angles {leak:.1e}, end-to-end topology gradient norm {topo:.2e}")
    assert passed


# --- desk-scale learning (9, 10, 11) ------------------------------------------------

DESK = dict(
    train_seed=1,
    test_seed=2,
    graphs=30,
    sizes=(20, 60),
    dataset_runs=17,
    dataset_seed=0,
    evaluator_epochs=100,
    generator_epochs=1500,
    net_seed=0,
    runs=10,
    tta_steps=64,
)


@pytest.fixture(scope="module")
def desk(request):
    """Train (or load from the pytest cache) the desk-scale evaluator and generator."""
    key = hashlib.sha256(json.dumps(DESK, sort_keys=True).encode()).hexdigest()[:12]
    root = request.config.cache.mkdir(f"dcqaoa-desk-{key}")
    train = bench.synthetic_suite(DESK["graphs"], DESK["sizes"], seed=DESK["train_seed"], prefix="tr")
    test = bench.synthetic_suite(DESK["graphs"], DESK["sizes"], seed=DESK["test_seed"], prefix="te")
    optima = {g.name: estimate_optimum(g) for g in train + test}
    data_path, ev_path, gen_path = root / "dataset.jsonl", root / "evaluator.npz", root / "generator.npz"
    if not data_path.exists():
        gen.save_dataset(gen.build_offline_dataset(train, SimConfig(), seed=DESK["dataset_seed"], runs=DESK["dataset_runs"], optima=optima), data_path)
    samples = gen.load_dataset(data_path)
    if not ev_path.exists():
        ev = gen.EvaluatorNet(seed=DESK["net_seed"])
        gen.train_evaluator(ev, samples, train, gen.EvaluatorTrainConfig(epochs=DESK["evaluator_epochs"]))
        gen.save_model(ev_path, ev)
    ev = gen.load_model(ev_path)
    if not gen_path.exists():
        net = gen.GeneratorNet(seed=DESK["net_seed"])
        hist = gen.train_generator(net, ev, train, gen.GeneratorTrainConfig(epochs=DESK["generator_epochs"]))
        gen.save_model(gen_path, net, extra={"history": hist})
    net = gen.load_model(gen_path)
    methods = (*bench.BASELINES, "gen")
    config = bench.RunConfig(test, methods=methods, runs=DESK["runs"], optima=optima, tta_steps=DESK["tta_steps"])
    table = bench.evaluate_suite(config, {"gen": gen.GenStrategy(net, ev, DESK["tta_steps"])})
    return dict(test=test, optima=optima, evaluator=ev, generator=net, samples=len(samples), config=config, table=table)


@pytest.mark.slow
def test_c09_desk_learning_trend(desk, capsys):
    table = desk["table"]
    means = {m: float(table.means(m).mean()) for m in table.methods}
    best = max(means[m] for m in ("modularity", "boundary", "kl"))
    passed = means["gen"] > means["random"] and means["gen"] >= best - 0.01
    detail = ", ".join(f"{m} {v:.4f}" for m, v in means.items())
    announce(capsys, 9, "desk-scale learning trend", passed, f"{desk['samples']} samples; mean ratio {detail}")
    assert passed


@pytest.mark.slow
def test_c10_tta_monotone(desk, capsys):
    g = desk["test"][0]
    res = gen.tta_adapt(desk["generator"], desk["evaluator"], g, steps=64)
    monotone = bool(np.all(np.diff(res.best_so_far) >= 0))
    cfg = bench.RunConfig(desk["test"], methods=("gen",), runs=DESK["runs"], optima=desk["optima"], tta_steps=0)
    zero = float(bench.evaluate_suite(cfg, {"gen": gen.GenStrategy(desk["generator"], desk["evaluator"], 0)}).means("gen").mean())
    full = float(desk["table"].means("gen").mean())
    passed = monotone and full >= zero
    announce(capsys, 10, "test-time adaptation", passed, f"best-so-far non-decreasing {monotone}; mean ratio 0 steps {zero:.4f}, 64 steps {full:.4f}")
    assert passed


@pytest.mark.slow
def test_c11_noise_robustness(desk, capsys):
    base = desk["config"]
    noisy_cfg = bench.RunConfig(**{**bench.asdict_shallow(base), "readout_p": 0.05})
    noisy = bench.evaluate_suite(noisy_cfg, {"gen": gen.GenStrategy(desk["generator"], desk["evaluator"], DESK["tta_steps"])})
    drops = {m: float(desk["table"].means(m).mean() - noisy.means(m).mean()) for m in base.methods}
    passed = drops["gen"] < 0.02
    detail = ", ".join(f"{m} {v:+.4f}" for m, v in drops.items())
    announce(capsys, 11, "readout-noise robustness", passed, f"degradation at p=0.05: {detail}")
    assert passed


# --- 12. determinism ----------------------------------------------------------------


def test_c12_deterministic_csv(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path))
    args = ["evaluate", "--synthetic", "4", "--sizes", "20", "30", "--runs", "3", "--steps", "5", "--shots", "200"]
    cli.main([*args, "--out", str(tmp_path / "a")])
    cli.main([*args, "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    capsys.readouterr()
    passed = a == b and len(a) > 0
    announce(capsys, 12, "deterministic evaluation", passed, f"two evaluate runs, {len(a)} CSV bytes, identical {a == b}")
    assert passed
