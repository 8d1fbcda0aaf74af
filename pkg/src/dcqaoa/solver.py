"""Recursive divide-and-conquer MaxCut with QAOA on every subproblem (QAOA-in-QAOA)."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import partition as _partition
from .graph import WeightedGraph, brute_force_maxcut, cut_value, cut_values_batch, local_search_cut, performance_ratio
from .partition import Partition, validate_partition
from .sim import DEFAULT_QUBIT_CAP, NoiseSpec, QaoaAngles, QubitCapError, interp_expand, optimize_angles, sample_bitstrings
from .validation import check_random_state, check_spins


@dataclass(frozen=True)
class SimConfig:
    """QAOA protocol applied to each subproblem."""

    max_nodes: int = 10
    p: int = 1
    steps: int = 20
    lr: float = 0.01
    shots: int = 1000
    readout_p: float = 0.0
    shot_noise: int | None = None
    cap: int = DEFAULT_QUBIT_CAP
    exact_merge: bool = False
    random_cut_floor: bool = True

    def __post_init__(self):
        if self.max_nodes < 1 or self.max_nodes > self.cap:
            raise ValueError(f"max_nodes must lie in [1, {self.cap}]")
        if self.p < 1 or self.steps < 0 or self.shots < 1:
            raise ValueError("invalid QAOA protocol settings")

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(shots=self.shot_noise, readout_bitphase_p=self.readout_p)


@dataclass
class SubSolution:
    nodes: np.ndarray
    spins: np.ndarray
    cut: float
    floor_applied: bool = False


@dataclass
class LevelStats:
    num_nodes: int
    num_subgraphs: int
    calls: int


@dataclass
class SolveReport:
    spins: np.ndarray
    cut: float
    levels: list[LevelStats]
    wall_time: float
    ratio: float | None = None
    opt: float | None = None
    floor_count: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def total_calls(self) -> int:
        return sum(lv.calls for lv in self.levels)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def to_dict(self) -> dict:
        return {
            "spins": self.spins.astype(int).tolist(),
            "cut": self.cut,
            "ratio": self.ratio,
            "opt": self.opt,
            "levels": [asdict(lv) for lv in self.levels],
            "total_calls": self.total_calls,
            "depth": self.depth,
            "wall_time": self.wall_time,
            "floor_count": self.floor_count,
            "notes": list(self.notes),
        }


# --- partition strategies ---------------------------------------------------


class HeuristicStrategy:
    """A baseline partitioner with uniformly random initial angles.

    ``shuffle`` feeds the run seed to the deterministic heuristics too (node-order
    shuffling), which is how repeated runs are diversified when building datasets.
    """

    _funcs = {
        "random": lambda g, c, rng, shuffle: _partition.random_partition(g, c, rng),
        "modularity": lambda g, c, rng, shuffle: _partition.modularity_partition(g, c, rng, shuffle)[0],
        "boundary": _partition.boundary_partition,
        "kl": lambda g, c, rng, shuffle: _partition.kl_partition(g, c, rng),
    }

    def __init__(self, name: str, shuffle: bool = False):
        if name not in self._funcs:
            raise ValueError(f"unknown partitioner {name!r}")
        self.name = name
        self.shuffle = shuffle

    def propose(self, g: WeightedGraph, capacity: int, level: int, rng):
        return self._funcs[self.name](g, capacity, rng, self.shuffle), None

    def whole_graph_angles(self, g: WeightedGraph, level: int, rng):
        return None

    def __repr__(self):
        return f"HeuristicStrategy({self.name!r})"


class FixedTopLevel:
    """Use a given partition and angle set at level 0, then defer to ``fallback``."""

    def __init__(self, partition: Partition, angles, fallback):
        self.partition = partition
        self.angles = angles
        self.fallback = fallback

    def propose(self, g, capacity, level, rng):
        if level == 0:
            return self.partition, self.angles
        return self.fallback.propose(g, capacity, level, rng)

    def whole_graph_angles(self, g, level, rng):
        return self.fallback.whole_graph_angles(g, level, rng)


def make_strategy(partitioner, shuffle=False):
    if isinstance(partitioner, str):
        return HeuristicStrategy(partitioner, shuffle=shuffle)
    if hasattr(partitioner, "propose"):
        return partitioner
    raise TypeError(f"cannot use {partitioner!r} as a partition strategy")


# --- building blocks --------------------------------------------------------


def split_subgraphs(g: WeightedGraph, part: Partition) -> list[WeightedGraph]:
    """Induced subgraphs, i.e. ``A * (S S^T)`` split into blocks; nodes keep their order."""
    problems = validate_partition(part, g)
    if problems:
        raise ValueError("invalid partition: " + "; ".join(problems))
    return [g.induced_subgraph(nodes) for nodes in part.groups()]


def _prepare_angles(angles, p, rng):
    if angles is None:
        return QaoaAngles.random(p, rng)
    if angles.p < p:
        return interp_expand(angles, p)
    if angles.p > p:
        raise ValueError(f"initial angles have depth {angles.p} > {p}")
    return angles


def solve_subgraph(sub: WeightedGraph, init: QaoaAngles | None, config: SimConfig, rng, nodes=None) -> SubSolution:
    """Optimise angles, sample, keep the best-cut bitstring.

    With ``random_cut_floor`` the kept bitstring is improved by single flips whenever
    its cut is below ``sum(w)/2``, the expected cut of a uniformly random assignment.
    """
    nodes = np.arange(sub.num_nodes) if nodes is None else np.asarray(nodes)
    if sub.num_nodes > config.cap:
        raise QubitCapError(f"subgraph of {sub.num_nodes} nodes exceeds the cap {config.cap}")
    if sub.num_edges == 0:
        return SubSolution(nodes, np.ones(sub.num_nodes, dtype=np.int64), 0.0)
    angles = _prepare_angles(init, config.p, rng)
    opt_seed = int(rng.integers(2**63))
    sample_seed = int(rng.integers(2**63))
    angles = optimize_angles(sub, angles, config.steps, config.lr, config.noise, seed=opt_seed, cap=config.cap)
    samples = sample_bitstrings(sub, angles, config.shots, config.readout_p, seed=sample_seed, cap=config.cap)
    cuts = cut_values_batch(sub, samples)
    best = int(np.argmax(cuts))
    z, cut = samples[best].astype(np.int64), float(cuts[best])
    floor = False
    if config.random_cut_floor and cut < 0.5 * sub.w.sum() - 1e-12:
        z = local_search_cut(sub, z)
        cut = cut_value(sub, z)
        floor = True
    return SubSolution(nodes, z, cut, floor)


def build_merge_graph(g: WeightedGraph, part: Partition, subs: list[SubSolution]) -> WeightedGraph:
    """``w'_ij = sum over cross edges (u in i, v in j) of w_uv z_u z_v``.

    Then for every polarity vector ``s`` the global cut equals
    ``sum(local cuts) + (sum(cross w) - sum(w'))/2 + cut(merge graph, s)``.
    """
    if len(subs) != part.k:
        raise ValueError("need one sub-solution per subgraph")
    z = np.zeros(g.num_nodes, dtype=np.int64)
    for sub in subs:
        z[sub.nodes] = sub.spins
    lab = part.labels
    cross = lab[g.u] != lab[g.v]
    a, b = lab[g.u[cross]], lab[g.v[cross]]
    contrib = g.w[cross] * z[g.u[cross]] * z[g.v[cross]]
    W = np.zeros((part.k, part.k))
    np.add.at(W, (np.minimum(a, b), np.maximum(a, b)), contrib)
    iu, iv = np.nonzero(W)
    return WeightedGraph(part.k, iu, iv, W[iu, iv])


def merge_constant(g: WeightedGraph, part: Partition, merge: WeightedGraph) -> float:
    lab = part.labels
    cross = lab[g.u] != lab[g.v]
    return 0.5 * (g.w[cross].sum() - merge.w.sum())


def propagate_polarities(subs: list[SubSolution], s, num_nodes: int | None = None) -> np.ndarray:
    """Global spins with ``z_u = s_i * z_u^(i)`` for node ``u`` in subgraph ``i``."""
    s = check_spins(s, len(subs))
    n = num_nodes if num_nodes is not None else sum(len(sub.nodes) for sub in subs)
    z = np.zeros(n, dtype=np.int64)
    for si, sub in zip(s, subs):
        z[sub.nodes] = si * sub.spins
    return z


# --- recursion ----------------------------------------------------------------


def recursive_solve(g: WeightedGraph, partitioner="modularity", config: SimConfig = SimConfig(), seed=None, opt=None) -> SolveReport:
    """Partition, solve every subgraph, merge through a ``k``-node MaxCut, recurse.

    ``partitioner`` is a heuristic name or a strategy object with ``propose`` and
    ``whole_graph_angles``. The graph that finally fits ``max_nodes`` is solved with
    the same QAOA protocol (or exactly, with ``config.exact_merge``).
    """
    strategy = make_strategy(partitioner)
    rng = check_random_state(seed)
    levels: list[LevelStats] = []
    counter = {"floor": 0}
    notes: list[str] = []
    start = time.perf_counter()

    def solve(graph: WeightedGraph, level: int) -> np.ndarray:
        if graph.num_nodes <= config.max_nodes:
            levels.append(LevelStats(graph.num_nodes, 1, 1))
            if config.exact_merge and level > 0:
                return brute_force_maxcut(graph)[1]
            init = strategy.whole_graph_angles(graph, level, rng)
            sol = solve_subgraph(graph, init, config, rng)
            counter["floor"] += sol.floor_applied
            return sol.spins
        part, angles = strategy.propose(graph, config.max_nodes, level, rng)
        problems = validate_partition(part, graph, config.max_nodes)
        if problems:
            raise ValueError("partitioner produced an invalid partition: " + "; ".join(problems))
        if angles is not None:
            keep = np.flatnonzero(part.sizes > 0)
            angles = [angles[j] for j in keep]
        if part.note:
            notes.append(f"level {level}: {part.note}")
        part = part.compact()
        subs = []
        for nodes, sub in zip(part.groups(), split_subgraphs(graph, part)):
            init = angles[len(subs)] if angles is not None else None
            sol = solve_subgraph(sub, init, config, rng, nodes=nodes)
            counter["floor"] += sol.floor_applied
            subs.append(sol)
        levels.append(LevelStats(graph.num_nodes, part.k, part.k))
        merge = build_merge_graph(graph, part, subs)
        s = solve(merge, level + 1)
        return propagate_polarities(subs, s, graph.num_nodes)

    z = solve(g, 0)
    cut = cut_value(g, z)
    report = SolveReport(z, cut, levels, time.perf_counter() - start, floor_count=counter["floor"], notes=notes)
    if opt is not None:
        report.opt = float(opt)
        report.ratio = performance_ratio(cut, opt, g.negative_weight_sum)
    return report


def expected_call_counts(num_nodes: int, max_nodes: int) -> list[int]:
    """Calls per level when every level splits into exactly ``ceil(N / max_nodes)`` parts."""
    counts = []
    n = num_nodes
    while n > max_nodes:
        k = -(-n // max_nodes)
        counts.append(k)
        n = k
    counts.append(1)
    return counts


class QAOA2Solver(BaseEstimator):
    """Estimator front-end for :func:`recursive_solve`.

    ``fit(graph, opt=None)`` stores ``spins_``, ``cut_``, ``report_`` and, when an
    optimum is supplied, ``ratio_``.
    """

    def __init__(
        self,
        partitioner="modularity",
        max_nodes=10,
        p=1,
        steps=20,
        lr=0.01,
        shots=1000,
        readout_p=0.0,
        shot_noise=None,
        exact_merge=False,
        random_cut_floor=True,
        random_state=42,
    ):
        self.partitioner = partitioner
        self.max_nodes = max_nodes
        self.p = p
        self.steps = steps
        self.lr = lr
        self.shots = shots
        self.readout_p = readout_p
        self.shot_noise = shot_noise
        self.exact_merge = exact_merge
        self.random_cut_floor = random_cut_floor
        self.random_state = random_state

    def _config(self) -> SimConfig:
        return SimConfig(
            max_nodes=self.max_nodes,
            p=self.p,
            steps=self.steps,
            lr=self.lr,
            shots=self.shots,
            readout_p=self.readout_p,
            shot_noise=self.shot_noise,
            exact_merge=self.exact_merge,
            random_cut_floor=self.random_cut_floor,
        )

    def fit(self, X, y=None, opt=None):
        report = recursive_solve(X, self.partitioner, self._config(), seed=self.random_state, opt=opt)
        self.report_ = report
        self.spins_ = report.spins
        self.cut_ = report.cut
        self.ratio_ = report.ratio
        return self

    def fit_predict(self, X, y=None, opt=None):
        return self.fit(X, opt=opt).spins_
