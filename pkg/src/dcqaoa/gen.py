"""Generative evaluative network.

A surrogate evaluator predicts the QAOA-in-QAOA performance ratio of a (partition,
angles) pair; a generator proposes capacity-feasible partitions plus per-subgraph
initial angles and is trained, then adapted per instance, against the frozen evaluator.
"""

from __future__ import annotations

import hashlib
import json
import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, RegressorMixin

from . import autodiff as ad
from .autodiff import Tensor
from .features import FEATURE_NAMES, compute_node_features
from .graph import WeightedGraph, reference_optimum
from .nn import MLP, AdamW, EdgeAdjacency, GATEncoder, GCNEncoder, Module, PlateauSchedule, load_checkpoint, save_checkpoint
from .partition import Partition, validate_partition
from .sim import TWO_PI, QaoaAngles
from .solver import FixedTopLevel, HeuristicStrategy, SimConfig, recursive_solve
from .validation import check_random_state, derive_seed

NUM_FEATURES = len(FEATURE_NAMES)
K_MAX = 127
TTA_DEFAULT_STEPS = 64
TTA_MAX_STEPS = 1000
HEURISTIC_NAMES = ("random", "modularity", "boundary", "kl")


# --- per-graph inputs -------------------------------------------------------


@dataclass
class GraphInputs:
    graph: WeightedGraph
    features: np.ndarray
    adjacency: EdgeAdjacency

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


_INPUT_CACHE: "weakref.WeakKeyDictionary[WeightedGraph, GraphInputs]" = weakref.WeakKeyDictionary()


def prepare_inputs(g: WeightedGraph) -> GraphInputs:
    """Standardised node features and the directed edge list of ``g`` (cached per graph)."""
    if isinstance(g, GraphInputs):
        return g
    cached = _INPUT_CACHE.get(g)
    if cached is None:
        src = np.concatenate([g.u, g.v])
        dst = np.concatenate([g.v, g.u])
        w = np.concatenate([g.w, g.w])
        cached = GraphInputs(g, compute_node_features(g), EdgeAdjacency(g.num_nodes, src, dst, w))
        _INPUT_CACHE[g] = cached
    return cached


def _masked_weights(adj: EdgeAdjacency, S: Tensor) -> Tensor:
    """Edge weights of ``A * (S S^T)``; differentiable in ``S``."""
    same = ad.sum_(ad.take_rows(S, adj.src) * ad.take_rows(S, adj.dst), axis=1)
    return adj.weight * same


# --- evaluator --------------------------------------------------------------


class EvaluatorNet(Module):
    """Three-view surrogate ``f(G, S, P) -> rho_hat`` in ``[0.5, 1]``."""

    def __init__(self, p: int = 1, hidden: int = 64, layers: int = 3, head_hidden: int = 256, unweighted: bool = False, seed=0):
        super().__init__()
        self.p, self.hidden, self.layers, self.head_hidden, self.unweighted, self.seed = p, hidden, layers, head_hidden, unweighted, seed
        rng = check_random_state(seed)
        self.topology = self.child("topology", GATEncoder(NUM_FEATURES, hidden, layers, rng, unweighted))
        self.partition = self.child("partition", GCNEncoder(NUM_FEATURES, hidden, layers, rng, unweighted))
        self.parameter = self.child("parameter", GATEncoder(4 * p, hidden, layers, rng, unweighted))
        self.head = self.child("head", MLP([3 * hidden, head_hidden, 1], rng))

    def get_config(self) -> dict:
        return {"p": self.p, "hidden": self.hidden, "layers": self.layers, "head_hidden": self.head_hidden, "unweighted": self.unweighted, "seed": self.seed}


def evaluator_forward_batch(net: EvaluatorNet, items) -> Tensor:
    """``rho_hat`` for a list of ``(graph_or_inputs, S, P)``; graphs are joined into one disjoint union."""
    xs, xps, srcs, dsts, w_full, w_sub, batch = [], [], [], [], [], [], []
    offset = 0
    for b, (g, S, P) in enumerate(items):
        inp = prepare_inputs(g)
        n = inp.num_nodes
        S, P = ad.as_tensor(S), ad.as_tensor(P)
        if S.shape[0] != n or P.shape != (2 * net.p, S.shape[1]):
            raise ValueError(f"expected S of shape ({n}, k) and P of shape ({2 * net.p}, k), got {S.shape} and {P.shape}")
        xs.append(inp.features)
        xps.append(ad.matmul(S, ad.transpose(P)))
        srcs.append(inp.adjacency.src + offset)
        dsts.append(inp.adjacency.dst + offset)
        w_full.append(inp.adjacency.weight.value)
        w_sub.append(_masked_weights(inp.adjacency, S))
        batch.append(np.full(n, b))
        offset += n
    src, dst = np.concatenate(srcs), np.concatenate(dsts)
    full = EdgeAdjacency(offset, src, dst, np.concatenate(w_full))
    sub = EdgeAdjacency(offset, src, dst, ad.concat(w_sub, axis=0))
    x = Tensor(np.concatenate(xs))
    xp = ad.concat(xps, axis=0)
    xp = ad.wrap(xp, TWO_PI)
    x_param = ad.concat([ad.sin(xp), ad.cos(xp)], axis=1)
    batch = np.concatenate(batch)
    views = [
        ad.global_mean_pool(net.topology(x, full), batch, len(items)),
        ad.global_mean_pool(net.partition(x, sub), batch, len(items)),
        ad.global_mean_pool(net.parameter(x_param, sub), batch, len(items)),
    ]
    logit = net.head(ad.concat(views, axis=1))
    rho = (ad.sigmoid(logit) + 1.0) * 0.5
    return ad.reshape(rho, (-1,))


def evaluator_forward(net: EvaluatorNet, g, S, P) -> Tensor:
    """Predicted performance ratio of partition ``S`` (``N x k``) with angles ``P`` (``2p x k``)."""
    return ad.reshape(evaluator_forward_batch(net, [(g, S, P)]), ())


# --- orthogonal complement head ---------------------------------------------


@dataclass
class OchResult:
    centers: np.ndarray
    global_vector: np.ndarray
    fallback: bool = False


def och_centers(H, k: int, pool) -> OchResult:
    """Cluster centres orthonormal to each other and to the global embedding direction."""
    H = np.asarray(getattr(H, "value", H), dtype=np.float64)
    pool = np.asarray(pool, dtype=np.float64)
    h = H.shape[1]
    if k < 1 or k + 1 > h:
        raise ValueError(f"need 1 <= k and k + 1 <= hidden size ({h}), got k={k}")
    if k > pool.shape[0]:
        raise ValueError(f"k={k} exceeds the anchor pool size {pool.shape[0]}")
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    unit = np.divide(H, norms, out=np.zeros_like(H), where=norms > 0)
    g_raw = unit.mean(axis=0)
    fallback = False
    if np.linalg.norm(g_raw) < 1e-12:
        fallback = True
        g_raw = H.mean(axis=0) + 1e-9 * pool[-1]
    g = g_raw / np.linalg.norm(g_raw)
    M = np.column_stack([g, pool[:k].T])
    Q, _ = np.linalg.qr(M, mode="reduced")
    return OchResult(Q[:, 1:].T.copy(), g, fallback)


def soft_partition(H, centers, temperature: float) -> Tensor:
    return ad.softmax_rows(ad.matmul(ad.as_tensor(H), Tensor(np.asarray(centers).T)), temperature)


# --- greedy capacity discretisation -----------------------------------------


def gcd_discretize(S_soft, capacity: int) -> np.ndarray:
    """Round-based greedy admission of soft assignments into capacity-limited groups.

    Every node ranks the groups by its own scores. In round ``l`` each unassigned node
    applies to its ``l``-th choice; an over-subscribed group admits the applicants with
    the highest scores up to its remaining room. Ties go to the lower index.
    """
    S_soft = np.asarray(getattr(S_soft, "value", S_soft), dtype=np.float64)
    if S_soft.ndim != 2:
        raise ValueError("soft partition must be N x k")
    n, k = S_soft.shape
    if capacity < 1 or k * capacity < n:
        raise ValueError(f"infeasible: {k} groups of capacity {capacity} cannot hold {n} nodes")
    ranks = np.argsort(-S_soft, axis=1, kind="stable")
    labels = np.full(n, -1, dtype=np.int64)
    load = np.zeros(k, dtype=np.int64)
    for rnd in range(k):
        pending = np.flatnonzero(labels < 0)
        if len(pending) == 0:
            break
        target = ranks[pending, rnd]
        score = S_soft[pending, target]
        order = np.lexsort((pending, -score, target))
        pending, target = pending[order], target[order]
        starts = np.searchsorted(target, np.arange(k))
        pos = np.arange(len(target)) - starts[target]
        accept = pos < (capacity - load)[target]
        labels[pending[accept]] = target[accept]
        load += np.bincount(target[accept], minlength=k)
    # rejection from a group only happens once it is full, so k*capacity >= n leaves nobody out
    assert np.all(labels >= 0)
    S = np.zeros((n, k))
    S[np.arange(n), labels] = 1.0
    return S


def ste_backward(S, S_soft, upstream):
    """Straight-through rule: the gradient reaching the hard ``S`` is passed to ``S_soft`` as is."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != np.shape(S) or np.shape(S) != np.shape(getattr(S_soft, "value", S_soft)):
        raise ValueError("shape mismatch")
    return upstream.copy()


# --- generator --------------------------------------------------------------


class GeneratorNet(Module):
    """Topology encoder + OCH + GCD for ``S``; partition encoder + MLP for per-subgraph angles."""

    def __init__(
        self,
        p: int = 1,
        max_nodes: int = 10,
        hidden: int = 128,
        layers: int = 2,
        k_max: int = K_MAX,
        temperature: float = 0.05,
        unweighted: bool = False,
        seed=0,
    ):
        super().__init__()
        if k_max + 1 > hidden:
            raise ValueError("k_max + 1 must not exceed the hidden size")
        self.p, self.max_nodes, self.hidden, self.layers = p, max_nodes, hidden, layers
        self.k_max, self.temperature, self.unweighted, self.seed = k_max, temperature, unweighted, seed
        rng = check_random_state(seed)
        self.topology = self.child("topology", GATEncoder(NUM_FEATURES, hidden, layers, rng, unweighted))
        self.partition = self.child("partition", GCNEncoder(NUM_FEATURES, hidden, layers, rng, unweighted))
        self.head = self.child("head", MLP([hidden, hidden, 4 * p], rng))
        self.buffer("anchor_pool", rng.standard_normal((k_max, hidden)))

    @property
    def anchor_pool(self) -> np.ndarray:
        return self._buffers["anchor_pool"]

    def get_config(self) -> dict:
        return {
            "p": self.p,
            "max_nodes": self.max_nodes,
            "hidden": self.hidden,
            "layers": self.layers,
            "k_max": self.k_max,
            "temperature": self.temperature,
            "unweighted": self.unweighted,
            "seed": self.seed,
        }

    def clone(self) -> "GeneratorNet":
        twin = GeneratorNet(**self.get_config())
        twin.load_state_dict(self.state_dict())
        return twin


def choose_k(num_nodes: int, capacity: int, k_max: int = K_MAX) -> int:
    k = min(-(-num_nodes // capacity), k_max)
    if k * capacity < num_nodes:
        raise ValueError(f"{num_nodes} nodes do not fit into {k_max} groups of {capacity}")
    return max(k, 1)


def angles_in_range(theta: Tensor) -> Tensor:
    """Shift by a multiple of 2*pi into ``[0, 2*pi)``; the gradient is unchanged."""
    return ad.wrap(theta, TWO_PI)


@dataclass
class GeneratorOutput:
    labels: np.ndarray
    S: Tensor
    S_soft: Tensor
    P: Tensor
    centers: np.ndarray
    global_vector: np.ndarray
    capacity: int
    och_fallback: bool = False

    @property
    def k(self) -> int:
        return self.S.shape[1]

    def partition(self) -> Partition:
        return Partition(self.labels, self.capacity, self.k, note="OCH global-vector fallback" if self.och_fallback else "")

    def angle_list(self, P=None) -> list[QaoaAngles]:
        P = self.P.value if P is None else P
        return [QaoaAngles.from_vector(P[:, j]) for j in range(P.shape[1])]


def generator_forward(net: GeneratorNet, g, k: int | None = None, capacity: int | None = None) -> GeneratorOutput:
    """Partition first (OCH soft assignment, GCD, straight-through), then angles from the
    stop-gradient partition."""
    inp = prepare_inputs(g)
    n = inp.num_nodes
    capacity = net.max_nodes if capacity is None else capacity
    k = choose_k(n, capacity, net.k_max) if k is None else k
    x = Tensor(inp.features)
    H = net.topology(x, inp.adjacency)
    och = och_centers(H.value, k, net.anchor_pool)
    S_soft = soft_partition(H, och.centers, net.temperature)
    S_hard = gcd_discretize(S_soft.value, capacity)
    S = ad.straight_through(S_hard, S_soft)
    labels = S_hard.argmax(axis=1)

    adj = inp.adjacency
    same = labels[adj.src] == labels[adj.dst]
    sub = EdgeAdjacency(n, adj.src, adj.dst, adj.weight.value * same)
    Hp = net.partition(x, sub)
    H_sub = ad.segment_mean(Hp, labels, k)
    raw = ad.reshape(net.head(H_sub), (k, 2 * net.p, 2))
    theta = angles_in_range(ad.atan2(raw[:, :, 0], raw[:, :, 1]))
    return GeneratorOutput(labels, S, S_soft, ad.transpose(theta), och.centers, och.global_vector, capacity, och.fallback)


# --- offline dataset --------------------------------------------------------


def graph_fingerprint(g: WeightedGraph) -> str:
    h = hashlib.sha256()
    h.update(np.int64(g.num_nodes).tobytes())
    for arr in (g.u.astype(np.int64), g.v.astype(np.int64), g.w.astype(np.float64)):
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


@dataclass
class OfflineSample:
    graph_name: str
    graph_hash: str
    labels: np.ndarray
    angles: np.ndarray
    rho: float
    heuristic: str = ""
    graph_file: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "graph": self.graph_name,
                "graph_file": self.graph_file,
                "graph_hash": self.graph_hash,
                "heuristic": self.heuristic,
                "labels": np.asarray(self.labels).astype(int).tolist(),
                "angles_shape": list(np.shape(self.angles)),
                "angles": np.asarray(self.angles, dtype=float).ravel().tolist(),
                "rho": float(self.rho),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "OfflineSample":
        d = json.loads(line)
        angles = np.asarray(d["angles"], dtype=np.float64).reshape(d["angles_shape"])
        return cls(d["graph"], d["graph_hash"], np.asarray(d["labels"], dtype=np.int64), angles, float(d["rho"]), d.get("heuristic", ""), d.get("graph_file", ""))

    def matrix(self) -> np.ndarray:
        return Partition(self.labels, max(1, len(self.labels))).matrix


def save_dataset(samples, path):
    with open(path, "w") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


def load_dataset(path) -> list[OfflineSample]:
    with open(path) as fh:
        return [OfflineSample.from_json(line) for line in fh if line.strip()]


def label_partition(g, part: Partition, angles: np.ndarray, heuristic: str, config: SimConfig, opt: float, seed) -> float:
    """Performance ratio of a QAOA-in-QAOA run pinned to ``(part, angles)`` at the top level."""
    strategy = FixedTopLevel(part, [QaoaAngles.from_vector(angles[:, j]) for j in range(part.k)], HeuristicStrategy(heuristic))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return recursive_solve(g, strategy, config, seed=seed, opt=opt).ratio


def build_offline_dataset(
    graphs,
    config: SimConfig = SimConfig(),
    seed=0,
    runs: int = 70,
    heuristics=HEURISTIC_NAMES,
    optima: dict | None = None,
    graph_files: dict | None = None,
) -> list[OfflineSample]:
    """Partitions from repeated, node-order-shuffled heuristic runs, deduplicated per graph,
    each paired with uniform random angles and labelled by simulation."""
    samples = []
    for g in graphs:
        opt = (optima or {}).get(g.name)
        if opt is None:
            opt = reference_optimum(g)
        fp = graph_fingerprint(g)
        seen = set()
        for h in heuristics:
            strategy = HeuristicStrategy(h, shuffle=True)
            for r in range(runs):
                rng = check_random_state(derive_seed(seed, g.name, h, r))
                part, _ = strategy.propose(g, config.max_nodes, 0, rng)
                part = part.canonical()
                key = part.key()
                if key in seen:
                    continue
                seen.add(key)
                angles = rng.uniform(0.0, TWO_PI, size=(2 * config.p, part.k))
                rho = label_partition(g, part, angles, h, config, opt, derive_seed(seed, g.name, h, r, "label"))
                if rho > 1.0 + 1e-9:
                    warnings.warn(f"{g.name}: label {rho:.6f} beats the reference optimum", RuntimeWarning, stacklevel=2)
                samples.append(OfflineSample(g.name, fp, part.labels, angles, rho, h, (graph_files or {}).get(g.name, "")))
    return samples


# --- training ---------------------------------------------------------------


@dataclass
class EvaluatorTrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 5e-4
    epochs: int = 100
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 0.0
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class EvaluatorHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1


def _sample_items(samples, graphs):
    items = []
    for s in samples:
        g = graphs[s.graph_name]
        items.append((g, s.matrix(), s.angles))
    return items


def evaluator_mse(net: EvaluatorNet, samples, graphs, batch_size: int = 64) -> float:
    items = _sample_items(samples, graphs)
    y = np.array([s.rho for s in samples])
    preds = np.concatenate([evaluator_forward_batch(net, items[i : i + batch_size]).value for i in range(0, len(items), batch_size)])
    return float(np.mean((preds - y) ** 2))


def train_evaluator(net: EvaluatorNet, samples, graphs, config: EvaluatorTrainConfig = EvaluatorTrainConfig(), log=None) -> EvaluatorHistory:
    """Minimise the mean squared error of ``rho_hat`` against simulated labels.

    ``graphs`` maps graph names to graphs. A seeded ``val_fraction`` of samples is held
    out for the plateau schedule and best-checkpoint selection (the training set is used
    when that would leave nothing).
    """
    if not samples:
        raise ValueError("empty dataset")
    graphs = _as_graph_map(graphs)
    rng = check_random_state(config.seed)
    order = rng.permutation(len(samples))
    n_val = int(round(config.val_fraction * len(samples)))
    if n_val == 0 or n_val >= len(samples):
        train, val = list(samples), list(samples)
    else:
        val = [samples[i] for i in order[:n_val]]
        train = [samples[i] for i in order[n_val:]]
    items = _sample_items(train, graphs)
    y = np.array([s.rho for s in train])
    opt = AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    sched = PlateauSchedule(config.lr, config.factor, config.patience, config.min_lr, mode="min")
    hist = EvaluatorHistory()
    best_state, best_val = net.state_dict(), np.inf
    for epoch in range(config.epochs):
        perm = rng.permutation(len(items))
        sq = 0.0
        for i in range(0, len(perm), config.batch_size):
            idx = perm[i : i + config.batch_size]
            opt.zero_grad()
            pred = evaluator_forward_batch(net, [items[j] for j in idx])
            err = pred - Tensor(y[idx])
            loss = ad.mean(err * err)
            loss.backward()
            opt.step()
            sq += float(loss.value) * len(idx)
        hist.train_mse.append(sq / len(items))
        val_mse = evaluator_mse(net, val, graphs)
        hist.val_mse.append(val_mse)
        if val_mse < best_val:
            best_val, best_state, hist.best_epoch = val_mse, net.state_dict(), epoch
        opt.lr = sched.step(val_mse)
        hist.lr.append(opt.lr)
        if log:
            log(f"evaluator epoch {epoch + 1}: train {hist.train_mse[-1]:.6f} val {val_mse:.6f} lr {opt.lr:.2e}")
    net.load_state_dict(best_state)
    return hist


@dataclass
class GeneratorTrainConfig:
    batch_size: int = 16
    lr: float = 4e-3
    weight_decay: float = 5e-4
    epochs: int = 1500
    factor: float = 0.8
    patience: int = 100
    min_lr: float = 0.0
    seed: int = 0


class _Frozen:
    def __init__(self, net: Module):
        self.net = net

    def __enter__(self):
        self.flags = [t.requires_grad for t in self.net.parameters()]
        self.net.set_requires_grad(False)
        return self.net

    def __exit__(self, *exc):
        for t, f in zip(self.net.parameters(), self.flags):
            t.requires_grad = f


def _as_graph_map(graphs) -> dict:
    return graphs if isinstance(graphs, dict) else {g.name: g for g in graphs}


def train_generator(gen: GeneratorNet, evaluator: EvaluatorNet, graphs, config: GeneratorTrainConfig = GeneratorTrainConfig(), log=None) -> list[float]:
    """Gradient ascent on the mean ``rho_hat`` of generated configurations; returns the per-epoch mean."""
    graphs = list(_as_graph_map(graphs).values())
    rng = check_random_state(config.seed)
    opt = AdamW(gen.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    sched = PlateauSchedule(config.lr, config.factor, config.patience, config.min_lr, mode="max")
    history = []
    with _Frozen(evaluator):
        for epoch in range(config.epochs):
            perm = rng.permutation(len(graphs))
            total = 0.0
            for i in range(0, len(perm), config.batch_size):
                batch = perm[i : i + config.batch_size]
                opt.zero_grad()
                for j in batch:
                    out = generator_forward(gen, graphs[j])
                    rho = evaluator_forward(evaluator, graphs[j], out.S, out.P)
                    (-rho).backward()
                    total += float(rho.value)
                opt.step(scale=1.0 / len(batch))
            history.append(total / len(graphs))
            opt.lr = sched.step(history[-1])
            if log:
                log(f"generator epoch {epoch + 1}: mean rho_hat {history[-1]:.6f} lr {opt.lr:.2e}")
    return history


# --- test-time adaptation ---------------------------------------------------


@dataclass
class TTAConfig:
    lr: float = 1e-3
    min_lr: float = 1e-4
    factor: float = 0.8
    patience: int = 100
    weight_decay: float = 0.0


@dataclass
class TTAResult:
    partition: Partition
    angles: np.ndarray
    rho_hat: float
    best_step: int
    trajectory: list
    best_so_far: list

    def angle_list(self) -> list[QaoaAngles]:
        return [QaoaAngles.from_vector(self.angles[:, j]) for j in range(self.angles.shape[1])]


def tta_adapt(gen: GeneratorNet, evaluator: EvaluatorNet, g, steps: int = TTA_DEFAULT_STEPS, config: TTAConfig = TTAConfig(), k=None, capacity=None) -> TTAResult:
    """Fine-tune a copy of the generator on one instance and return the best configuration seen.

    ``trajectory[t]`` is ``rho_hat`` after ``t`` updates; ``steps=0`` is the plain forward pass.
    """
    if not 0 <= steps <= TTA_MAX_STEPS:
        raise ValueError(f"steps must lie in [0, {TTA_MAX_STEPS}]")
    local = gen.clone()
    opt = AdamW(local.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    sched = PlateauSchedule(config.lr, config.factor, config.patience, config.min_lr, mode="max")
    trajectory, best_so_far = [], []
    best = None
    with _Frozen(evaluator):
        for t in range(steps + 1):
            out = generator_forward(local, g, k=k, capacity=capacity)
            rho = evaluator_forward(evaluator, g, out.S, out.P)
            val = float(rho.value)
            trajectory.append(val)
            if best is None or val > best[0]:
                best = (val, t, out.labels.copy(), out.P.value.copy(), out.capacity, out.och_fallback)
            best_so_far.append(best[0])
            if t == steps:
                break
            opt.zero_grad()
            (-rho).backward()
            opt.step()
            opt.lr = sched.step(val)
    val, t, labels, P, cap, fallback = best
    part = Partition(labels, cap, P.shape[1], note="OCH global-vector fallback" if fallback else "")
    return TTAResult(part, P, val, t, trajectory, best_so_far)


# --- solver integration -----------------------------------------------------


class GenStrategy:
    """Partition strategy for :func:`recursive_solve` backed by a trained generator.

    Adaptation is deterministic, so results are cached per (graph, capacity).
    """

    def __init__(self, generator: GeneratorNet, evaluator: EvaluatorNet, tta_steps: int = TTA_DEFAULT_STEPS, tta_config: TTAConfig = TTAConfig()):
        self.generator = generator
        self.evaluator = evaluator
        self.tta_steps = tta_steps
        self.tta_config = tta_config
        self._cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def adapt(self, g: WeightedGraph, capacity: int) -> TTAResult:
        per_graph = self._cache.setdefault(g, {})
        if capacity not in per_graph:
            per_graph[capacity] = tta_adapt(self.generator, self.evaluator, g, self.tta_steps, self.tta_config, capacity=capacity)
        return per_graph[capacity]

    def propose(self, g, capacity, level, rng):
        res = self.adapt(g, capacity)
        return res.partition, res.angle_list()

    def whole_graph_angles(self, g, level, rng):
        if g.num_edges == 0:
            return None
        out = generator_forward(self.generator, g, k=1, capacity=max(g.num_nodes, 1))
        return out.angle_list()[0]

    def __repr__(self):
        return f"GenStrategy(tta_steps={self.tta_steps})"


# --- checkpoints for the two networks ----------------------------------------


def save_model(path, net: Module, optimizer: AdamW | None = None, extra: dict | None = None):
    kind = "evaluator" if isinstance(net, EvaluatorNet) else "generator"
    save_checkpoint(path, net, optimizer, {"kind": kind, "config": net.get_config(), **(extra or {})})


def load_model(path) -> Module:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["header"]).decode())["meta"]
    cls = {"evaluator": EvaluatorNet, "generator": GeneratorNet}[meta["kind"]]
    net = cls(**meta["config"])
    load_checkpoint(path, net)
    return net


# --- estimator wrappers -----------------------------------------------------


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """``fit(X, y)`` with ``X`` a list of ``(graph, labels, angles)`` and ``y`` the ratios."""

    def __init__(self, p=1, hidden=64, layers=3, batch_size=32, lr=1e-3, weight_decay=5e-4, epochs=100, val_fraction=0.1, unweighted=False, random_state=0):
        self.p = p
        self.hidden = hidden
        self.layers = layers
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.unweighted = unweighted
        self.random_state = random_state

    def _samples(self, X, y=None):
        graphs, samples = {}, []
        for i, (g, labels, angles) in enumerate(X):
            key = f"{g.name}#{id(g)}"
            graphs[key] = g
            samples.append(OfflineSample(key, "", np.asarray(labels), np.asarray(angles, dtype=float), float(y[i]) if y is not None else 0.0))
        return samples, graphs

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        self.net_ = EvaluatorNet(self.p, self.hidden, self.layers, unweighted=self.unweighted, seed=self.random_state)
        samples, graphs = self._samples(X, y)
        cfg = EvaluatorTrainConfig(self.batch_size, self.lr, self.weight_decay, self.epochs, val_fraction=self.val_fraction, seed=self.random_state)
        self.history_ = train_evaluator(self.net_, samples, graphs, cfg)
        return self

    def predict(self, X):
        samples, graphs = self._samples(X)
        items = _sample_items(samples, graphs)
        return np.array([float(evaluator_forward_batch(self.net_, [it]).value[0]) for it in items])


class GenPartitioner(ClusterMixin, BaseEstimator):
    """Partition a graph with a trained generator plus test-time adaptation.

    ``fit(graph)`` sets ``labels_``, ``angles_`` (``2p x k``) and ``rho_hat_``.
    """

    def __init__(self, generator=None, evaluator=None, max_nodes=10, tta_steps=TTA_DEFAULT_STEPS):
        self.generator = generator
        self.evaluator = evaluator
        self.max_nodes = max_nodes
        self.tta_steps = tta_steps

    def fit(self, X, y=None):
        if self.generator is None or self.evaluator is None:
            raise ValueError("a trained generator and evaluator are required")
        res = tta_adapt(self.generator, self.evaluator, X, self.tta_steps, capacity=self.max_nodes)
        problems = validate_partition(res.partition, X, self.max_nodes)
        if problems:
            raise RuntimeError("; ".join(problems))
        self.result_ = res
        self.labels_ = res.partition.labels
        self.angles_ = res.angles
        self.rho_hat_ = res.rho_hat
        return self

