"""Capacity-constrained graph partitioners used as QAOA-in-QAOA baselines.

Every partitioner follows the scikit-learn clustering protocol: ``fit(graph)`` sets
``labels_`` (a subgraph index per node) and ``fit_predict`` returns it. Ties are
broken towards the lowest node id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .graph import WeightedGraph
from .validation import check_capacity, check_random_state


@dataclass(frozen=True, eq=False)
class Partition:
    """Hard node-to-subgraph assignment under a size cap."""

    labels: np.ndarray
    capacity: int
    k: int | None = None
    note: str = ""

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.k is None:
            object.__setattr__(self, "k", int(labels.max()) + 1 if len(labels) else 0)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    @property
    def matrix(self) -> np.ndarray:
        """The ``N x k`` one-hot matrix ``S``."""
        S = np.zeros((self.num_nodes, self.k))
        ok = (self.labels >= 0) & (self.labels < self.k)
        S[np.flatnonzero(ok), self.labels[ok]] = 1.0
        return S

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == j) for j in range(self.k)]

    def compact(self) -> "Partition":
        """Drop empty groups, keeping the relative order of the rest."""
        used = np.unique(self.labels)
        remap = np.full(self.k, -1)
        remap[used] = np.arange(len(used))
        return Partition(remap[self.labels], self.capacity, len(used))

    def canonical(self) -> "Partition":
        """Relabel groups by their smallest member id (used for de-duplication)."""
        return Partition(canonical_labels(self.labels), self.capacity)

    def key(self) -> tuple:
        return tuple(canonical_labels(self.labels).tolist())


def canonical_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    order = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        if lab not in order:
            order[lab] = len(order)
        out[i] = order[lab]
    return out


def validate_partition(part, g_or_n, capacity: int | None = None) -> list[str]:
    """Violations of the assignment and capacity constraints; empty list means valid.

    ``part`` is a :class:`Partition`, a label vector, or an ``N x k`` 0/1 matrix.
    """
    n = g_or_n.num_nodes if isinstance(g_or_n, WeightedGraph) else int(g_or_n)
    problems = []
    if isinstance(part, Partition):
        capacity = part.capacity if capacity is None else capacity
        S = part.matrix
        labels = part.labels
    else:
        arr = np.asarray(part)
        if arr.ndim == 2:
            S = arr
        else:
            labels = arr.astype(np.int64)
            k = int(labels.max()) + 1 if len(labels) else 0
            S = np.zeros((len(labels), max(k, 0)))
            ok = labels >= 0
            S[np.flatnonzero(ok), labels[ok]] = 1.0
    if capacity is None:
        raise ValueError("capacity is required")
    if S.shape[0] != n:
        problems.append(f"assignment covers {S.shape[0]} nodes, graph has {n}")
        return problems
    if S.size and not np.all((S == 0) | (S == 1)):
        problems.append("assignment matrix is not binary")
    row = S.sum(axis=1)
    for i in np.flatnonzero(row == 0):
        problems.append(f"node {i} is unassigned")
    for i in np.flatnonzero(row > 1):
        problems.append(f"node {i} is assigned {int(row[i])} times")
    sizes = S.sum(axis=0)
    for j in np.flatnonzero(sizes > capacity):
        problems.append(f"subgraph {j} has {int(sizes[j])} nodes, capacity {capacity}")
    nonempty = int(np.count_nonzero(sizes))
    if n and nonempty < math.ceil(n / capacity):
        problems.append(f"only {nonempty} subgraphs for {n} nodes at capacity {capacity}")
    return problems


def modularity(g: WeightedGraph, labels) -> float:
    """Newman modularity on signed weights with ``2m = sum_ij A_ij``."""
    A = g.adjacency
    two_m = A.sum()
    if two_m <= 0:
        raise ValueError("modularity undefined for non-positive total weight")
    d = A.sum(axis=1)
    same = np.equal.outer(labels, labels)
    return float(((A - np.outer(d, d) / two_m) * same).sum() / two_m)


def boundary_count(g: WeightedGraph, labels) -> int:
    labels = np.asarray(labels)
    cross = labels[g.u] != labels[g.v]
    mark = np.zeros(g.num_nodes, dtype=bool)
    mark[g.u[cross]] = True
    mark[g.v[cross]] = True
    return int(mark.sum())


def cross_weight(g: WeightedGraph, labels, absolute=True) -> float:
    labels = np.asarray(labels)
    cross = labels[g.u] != labels[g.v]
    w = np.abs(g.w) if absolute else g.w
    return float(w[cross].sum())


# --- random ---------------------------------------------------------------


def random_partition(g: WeightedGraph, capacity: int, seed=None) -> Partition:
    """Shuffle the nodes and cut them into consecutive blocks of ``capacity``."""
    check_capacity(capacity)
    rng = check_random_state(seed)
    n = g.num_nodes
    order = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[order] = np.arange(n) // capacity
    return Partition(labels, capacity, math.ceil(n / capacity))


# --- greedy modularity ----------------------------------------------------


def _cnm_capacity(A: np.ndarray, capacity: int) -> np.ndarray:
    """Greedy agglomeration on the modularity gain, refusing merges above ``capacity``."""
    n = A.shape[0]
    two_m = A.sum()
    E = A / two_m
    a = A.sum(axis=1) / two_m
    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    members = [[i] for i in range(n)]
    connected = A != 0
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    while True:
        ok = connected & upper & active[:, None] & active[None, :]
        ok &= (size[:, None] + size[None, :]) <= capacity
        if not ok.any():
            break
        gain = np.where(ok, 2.0 * (E - np.outer(a, a)), -np.inf)
        flat = int(np.argmax(gain))
        if gain.flat[flat] <= 1e-14:
            break
        i, j = divmod(flat, n)
        E[i, :] += E[j, :]
        E[:, i] += E[:, j]
        E[j, :] = 0.0
        E[:, j] = 0.0
        a[i] += a[j]
        a[j] = 0.0
        connected[i, :] |= connected[j, :]
        connected[:, i] |= connected[:, j]
        connected[i, i] = False
        size[i] += size[j]
        active[j] = False
        members[i].extend(members[j])
        members[j] = []
    labels = np.empty(n, dtype=np.int64)
    groups = sorted((sorted(m) for m in members if m), key=lambda m: m[0])
    for lab, group in enumerate(groups):
        labels[group] = lab
    return labels


def _split_oversize(A, labels, capacity):
    """Peel off ``capacity`` nodes of highest internal strength until every group fits."""
    labels = labels.copy()
    nxt = int(labels.max()) + 1
    for lab in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == lab)
        while len(idx) > capacity:
            strength = np.abs(A[np.ix_(idx, idx)]).sum(axis=1)
            order = np.lexsort((idx, -strength))
            take = idx[order[:capacity]]
            labels[take] = nxt
            nxt += 1
            idx = np.setdiff1d(idx, take)
    return canonical_labels(labels)


def modularity_partition(g: WeightedGraph, capacity: int, seed=None, shuffle=None):
    """Capacity-aware greedy modularity (Clauset-Newman-Moore style).

    With ``shuffle`` (default: whenever a seed is given) the nodes are relabelled at
    random before agglomeration, which only changes how ties are broken. Returns
    ``(Partition, fell_back)``; ``fell_back`` is true when the total signed weight is
    not positive and a seeded random partition was used instead.
    """
    check_capacity(capacity)
    n = g.num_nodes
    A = g.adjacency
    if g.num_edges == 0 or A.sum() <= 0:
        part = random_partition(g, capacity, seed)
        return Partition(part.labels, capacity, part.k, note="modularity undefined, random fallback"), True
    shuffle = seed is not None if shuffle is None else shuffle
    perm = check_random_state(seed).permutation(n) if shuffle else np.arange(n)
    labels_perm = _cnm_capacity(A[np.ix_(perm, perm)], capacity)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = labels_perm
    labels = _split_oversize(A, canonical_labels(labels), capacity)
    return Partition(labels, capacity), False


# --- boundary minimisation -------------------------------------------------


def _is_boundary(nbrs, labels, x):
    return bool(np.any(labels[nbrs[x]] != labels[x]))


def refine_boundary(g: WeightedGraph, labels, capacity: int, trace: list | None = None) -> np.ndarray:
    """Single-node moves that strictly reduce the boundary-node count, within capacity.

    Nodes are visited in id order; each takes its best target group. Stops when a full
    sweep makes no move or after ``N^2`` moves.
    """
    labels = np.array(labels, dtype=np.int64)
    n = g.num_nodes
    nbrs = g.neighbors
    sizes = np.bincount(labels, minlength=int(labels.max()) + 1)
    moves = 0
    if trace is not None:
        trace.append(boundary_count(g, labels))
    improved = True
    while improved and moves < n * n:
        improved = False
        for x in range(n):
            if moves >= n * n:
                break
            src = labels[x]
            targets = sorted(set(labels[nbrs[x]].tolist()) - {src})
            if not targets:
                continue
            local = np.concatenate([[x], nbrs[x]])
            before = sum(_is_boundary(nbrs, labels, y) for y in local)
            best_delta, best_t = 0, None
            for t in targets:
                if sizes[t] >= capacity:
                    continue
                labels[x] = t
                after = sum(_is_boundary(nbrs, labels, y) for y in local)
                labels[x] = src
                if after - before < best_delta:
                    best_delta, best_t = after - before, t
            if best_t is not None:
                labels[x] = best_t
                sizes[src] -= 1
                sizes[best_t] += 1
                moves += 1
                improved = True
                if trace is not None:
                    trace.append(boundary_count(g, labels))
    return canonical_labels(labels)


def boundary_partition(g: WeightedGraph, capacity: int, seed=None, shuffle=None) -> Partition:
    """Greedy-modularity start followed by boundary-node refinement."""
    init, _ = modularity_partition(g, capacity, seed, shuffle)
    if g.num_edges == 0:
        return init
    return Partition(refine_boundary(g, init.labels, capacity), capacity, note=init.note)


# --- Kernighan-Lin ---------------------------------------------------------


def kl_pass(W: np.ndarray, side: np.ndarray):
    """One Kernighan-Lin pass on a bisection (``side`` is a bool vector).

    Returns ``(new_side, gain)``; the swap prefix is applied only if its gain is positive.
    """
    side = side.copy()
    a_idx = np.flatnonzero(~side)
    b_idx = np.flatnonzero(side)
    ext = np.where(side[:, None] != side[None, :], W, 0.0).sum(axis=1)
    internal = np.where(side[:, None] == side[None, :], W, 0.0).sum(axis=1)
    D = ext - internal
    locked = np.zeros(len(side), dtype=bool)
    swaps, gains = [], []
    for _ in range(min(len(a_idx), len(b_idx))):
        fa = a_idx[~locked[a_idx]]
        fb = b_idx[~locked[b_idx]]
        G = D[fa][:, None] + D[fb][None, :] - 2.0 * W[np.ix_(fa, fb)]
        flat = int(np.argmax(G))
        ia, ib = divmod(flat, len(fb))
        a, b = fa[ia], fb[ib]
        swaps.append((a, b))
        gains.append(G[ia, ib])
        locked[a] = locked[b] = True
        D[~side] += 2.0 * W[~side, a] - 2.0 * W[~side, b]
        D[side] += 2.0 * W[side, b] - 2.0 * W[side, a]
    if not gains:
        return side, 0.0
    cum = np.cumsum(gains)
    best = int(np.argmax(cum))
    if cum[best] <= 1e-12:
        return side, 0.0
    for a, b in swaps[: best + 1]:
        side[a], side[b] = True, False
    return side, float(cum[best])


def kl_bisect(W: np.ndarray, rng, trace: list | None = None) -> np.ndarray:
    """Balanced bisection (sizes differ by at most one) improved by KL passes."""
    n = W.shape[0]
    side = np.zeros(n, dtype=bool)
    side[rng.permutation(n)[: n // 2]] = True
    if trace is not None:
        trace.append(float(W[np.ix_(~side, side)].sum()))
    while True:
        side, gain = kl_pass(W, side)
        if trace is not None:
            trace.append(float(W[np.ix_(~side, side)].sum()))
        if gain <= 0.0:
            return side


def kl_partition(g: WeightedGraph, capacity: int, seed=None) -> Partition:
    """Recursive KL bisection on absolute weights until every part fits ``capacity``."""
    check_capacity(capacity)
    rng = check_random_state(seed)
    W = np.abs(g.adjacency)
    parts = []
    stack = [np.arange(g.num_nodes)]
    while stack:
        nodes = stack.pop()
        if len(nodes) <= capacity:
            parts.append(nodes)
            continue
        side = kl_bisect(W[np.ix_(nodes, nodes)], rng)
        stack.append(nodes[side])
        stack.append(nodes[~side])
    labels = np.empty(g.num_nodes, dtype=np.int64)
    for lab, nodes in enumerate(parts):
        labels[nodes] = lab
    return Partition(canonical_labels(labels), capacity)


# --- estimator wrappers ----------------------------------------------------


class _BasePartitioner(ClusterMixin, BaseEstimator):
    def __init__(self, max_nodes=10, random_state=None):
        self.max_nodes = max_nodes
        self.random_state = random_state

    def fit(self, X, y=None):
        part = self._partition(X, self.random_state)
        self.partition_ = part
        self.labels_ = part.labels
        self.n_partitions_ = part.k
        return self

    def partition(self, g, seed=None) -> Partition:
        """Partition ``g`` with an explicit seed (overrides ``random_state``)."""
        return self._partition(g, self.random_state if seed is None else seed)


class RandomPartitioner(_BasePartitioner):
    def _partition(self, g, seed):
        return random_partition(g, self.max_nodes, seed)


class ModularityPartitioner(_BasePartitioner):
    def _partition(self, g, seed):
        part, self.fell_back_ = modularity_partition(g, self.max_nodes, seed)
        return part


class BoundaryPartitioner(_BasePartitioner):
    def _partition(self, g, seed):
        return boundary_partition(g, self.max_nodes, seed)


class KLPartitioner(_BasePartitioner):
    def _partition(self, g, seed):
        return kl_partition(g, self.max_nodes, seed)


HEURISTICS = {
    "random": RandomPartitioner,
    "modularity": ModularityPartitioner,
    "boundary": BoundaryPartitioner,
    "kl": KLPartitioner,
}
