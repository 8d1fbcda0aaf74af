"""Weighted MaxCut instances, QUBO reduction, cut values and the performance ratio."""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class InstanceParseError(ValueError):
    """Raised for malformed instance files; carries the offending line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Signed, weighted, undirected simple graph on nodes ``0..num_nodes-1``.

    Edges are stored as parallel arrays with ``u < v``.
    """

    num_nodes: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64).reshape(-1)
        v = np.asarray(self.v, dtype=np.int64).reshape(-1)
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if self.num_nodes < 1:
            raise ValueError("graph needs at least one node")
        if not (len(u) == len(v) == len(w)):
            raise ValueError("edge arrays have different lengths")
        if len(u):
            if np.any(u == v):
                raise ValueError("self loops are not allowed")
            if u.min() < 0 or v.min() < 0 or max(u.max(), v.max()) >= self.num_nodes:
                raise ValueError("edge endpoint out of range")
            if not np.all(np.isfinite(w)):
                raise ValueError("edge weights must be finite")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        if len(set(zip(lo.tolist(), hi.tolist()))) != len(lo):
            raise ValueError("duplicate edge")
        object.__setattr__(self, "u", lo)
        object.__setattr__(self, "v", hi)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_edges(cls, num_nodes, edges, name=""):
        """Build from an iterable of ``(u, v, w)`` with 0-based ids; zero weights are dropped."""
        edges = [(int(a), int(b), float(c)) for a, b, c in edges if float(c) != 0.0]
        if not edges:
            return cls(num_nodes, np.zeros(0), np.zeros(0), np.zeros(0), name=name)
        a, b, c = zip(*edges)
        return cls(num_nodes, np.array(a), np.array(b), np.array(c), name=name)

    @classmethod
    def from_adjacency(cls, A, name=""):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.allclose(A, A.T):
            raise ValueError("adjacency must be symmetric")
        iu, iv = np.nonzero(np.triu(A, k=1))
        return cls(A.shape[0], iu, iv, A[iu, iv], name=name)

    @property
    def num_edges(self) -> int:
        return len(self.w)

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes))
        A[self.u, self.v] = self.w
        A[self.v, self.u] = self.w
        A.setflags(write=False)
        return A

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        A = self.adjacency
        return [np.flatnonzero(A[i]) for i in range(self.num_nodes)]

    @property
    def negative_weight_sum(self) -> float:
        return float(self.w[self.w < 0].sum())

    @property
    def positive_weight_sum(self) -> float:
        return float(self.w[self.w > 0].sum())

    def edges(self):
        return list(zip(self.u.tolist(), self.v.tolist(), self.w.tolist()))

    def induced_subgraph(self, nodes) -> "WeightedGraph":
        """Subgraph on ``nodes`` relabelled ``0..len(nodes)-1`` in the given order."""
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(self.num_nodes, -1)
        local[nodes] = np.arange(len(nodes))
        keep = (local[self.u] >= 0) & (local[self.v] >= 0)
        return WeightedGraph(len(nodes), local[self.u[keep]], local[self.v[keep]], self.w[keep])

    def __repr__(self):
        label = f"{self.name!r}, " if self.name else ""
        return f"WeightedGraph({label}N={self.num_nodes}, M={self.num_edges})"


@dataclass(frozen=True, eq=False)
class QuboInstance:
    """Minimise ``x^T Q x + c^T x`` over ``x in {0,1}^n``; ``Q`` is kept symmetric."""

    Q: np.ndarray
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != len(c):
            raise ValueError("Q must be n x n and c of length n")
        object.__setattr__(self, "Q", (Q + Q.T) / 2.0)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return len(self.c)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x @ self.Q @ x + self.c @ x)


def _tokens(line):
    return line.split("#", 1)[0].split()


def _number(tok, lineno, kind=float):
    try:
        value = kind(tok)
    except ValueError:
        raise InstanceParseError(f"non-numeric value {tok!r}", lineno) from None
    if kind is float and not math.isfinite(value):
        raise InstanceParseError(f"non-finite value {tok!r}", lineno)
    return value


def _content_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            toks = _tokens(raw)
            if toks:
                yield lineno, toks


_FILE_EXTENSIONS = {".txt", ".dat", ".mc", ".qubo", ".edges"}


def parse_instance(path, format="edge-list"):
    """Read an edge-list MaxCut file or a QUBO triplet file.

    Edge-list: header ``N M`` then ``M`` lines ``u v w`` with 1-based ids.
    QUBO: header ``n`` (an optional entry count is tolerated) then ``i j q``
    triplets; ``i == j`` rows are linear coefficients.
    """
    path = Path(path)
    if format not in ("edge-list", "qubo"):
        raise ValueError(f"unknown format {format!r}")
    lines = _content_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise InstanceParseError("empty file", 1) from None
    name = path.stem if path.suffix in _FILE_EXTENSIONS else path.name

    if format == "edge-list":
        if len(header) != 2:
            raise InstanceParseError("header must be 'N M'", lineno)
        n, m = (_number(t, lineno, int) for t in header)
        if n < 1 or m < 0:
            raise InstanceParseError("header counts out of range", lineno)
        seen = set()
        edges = []
        count = 0
        for lineno, toks in lines:
            if len(toks) != 3:
                raise InstanceParseError("edge line must be 'u v w'", lineno)
            a, b = _number(toks[0], lineno, int), _number(toks[1], lineno, int)
            w = _number(toks[2], lineno)
            if not (1 <= a <= n and 1 <= b <= n):
                raise InstanceParseError(f"node id out of range 1..{n}", lineno)
            if a == b:
                raise InstanceParseError(f"self-loop on node {a}", lineno)
            key = (min(a, b), max(a, b))
            if key in seen:
                raise InstanceParseError(f"duplicate edge {key}", lineno)
            seen.add(key)
            count += 1
            edges.append((a - 1, b - 1, w))
        if count != m:
            raise InstanceParseError(f"header announces {m} edges, found {count}")
        return WeightedGraph.from_edges(n, edges, name=name)

    if len(header) not in (1, 2):
        raise InstanceParseError("header must be 'n'", lineno)
    n = _number(header[0], lineno, int)
    if n < 1:
        raise InstanceParseError("variable count must be positive", lineno)
    Q = np.zeros((n, n))
    c = np.zeros(n)
    seen = set()
    for lineno, toks in lines:
        if len(toks) != 3:
            raise InstanceParseError("entry line must be 'i j q'", lineno)
        i, j = _number(toks[0], lineno, int), _number(toks[1], lineno, int)
        q = _number(toks[2], lineno)
        if not (1 <= i <= n and 1 <= j <= n):
            raise InstanceParseError(f"index out of range 1..{n}", lineno)
        if (i, j) in seen:
            raise InstanceParseError(f"duplicate entry ({i}, {j})", lineno)
        seen.add((i, j))
        if i == j:
            c[i - 1] += q
        else:
            Q[i - 1, j - 1] += q
    return QuboInstance(Q, c, name=name)


def write_edge_list(g: WeightedGraph, path):
    with open(path, "w") as fh:
        fh.write(f"{g.num_nodes} {g.num_edges}\n")
        for a, b, w in g.edges():
            fh.write(f"{a + 1} {b + 1} {w!r}\n")


def qubo_to_maxcut(q: QuboInstance):
    """Reduce a QUBO to weighted MaxCut on ``n + 1`` nodes (node 0 is the auxiliary spin).

    With ``x_i = (1 - z_i) / 2`` (variable ``i`` is node ``i + 1``) and ``z_0 = +1``,
    ``f(x) = offset - cut_value(graph, z)`` for every assignment.
    """
    n = q.n
    Q, c = q.Q, q.c
    diag = np.diag(Q).copy()
    off = Q - np.diag(diag)
    lin = diag + c
    edges = []
    iu, iv = np.triu_indices(n, k=1)
    for i, j in zip(iu.tolist(), iv.tolist()):
        edges.append((i + 1, j + 1, Q[i, j]))
    field_ = -lin - off.sum(axis=1)
    for i in range(n):
        edges.append((0, i + 1, field_[i]))
    const = lin.sum() / 2.0 + off[iu, iv].sum() / 2.0
    graph = WeightedGraph.from_edges(n + 1, edges, name=q.name)
    # offset = Ising constant + sum of Ising couplings (weights are twice the couplings)
    offset = float(const + graph.w.sum() / 2.0)
    return graph, offset


def embed_qubo_assignment(x) -> np.ndarray:
    """Spins on the reduced graph for binary ``x``: ``z_0 = +1``, ``z_{i+1} = 1 - 2 x_i``."""
    x = np.asarray(x, dtype=np.int64)
    return np.concatenate([[1], 1 - 2 * x])


def normalize_edge_weights(g: WeightedGraph) -> WeightedGraph:
    scale = np.abs(g.w).max() if g.num_edges else 0.0
    if scale == 0.0:
        raise ValueError("cannot normalise a graph without nonzero weights")
    return WeightedGraph(g.num_nodes, g.u, g.v, g.w / scale, name=g.name)


def cut_value(g: WeightedGraph, z) -> float:
    z = np.asarray(z)
    if z.shape != (g.num_nodes,):
        raise ValueError(f"spin vector has shape {z.shape}, expected ({g.num_nodes},)")
    return float(0.5 * np.sum(g.w * (1 - z[g.u] * z[g.v])))


def cut_values_batch(g: WeightedGraph, Z) -> np.ndarray:
    """Cut values for each row of a ``(B, N)`` spin matrix."""
    Z = np.asarray(Z)
    if g.num_edges == 0:
        return np.zeros(Z.shape[0])
    return 0.5 * ((1 - Z[:, g.u] * Z[:, g.v]) @ g.w)


def performance_ratio(cut: float, opt: float, neg: float) -> float:
    """``(cut - neg) / (opt - neg)``; ``neg`` is the sum of negative weights."""
    denom = opt - neg
    if not denom > 0:
        raise ValueError(f"degenerate ratio: opt - neg = {denom}")
    if cut > opt + 1e-9 * max(1.0, abs(opt)):
        warnings.warn(f"cut {cut} exceeds the reference optimum {opt}", RuntimeWarning, stacklevel=2)
    return (cut - neg) / denom


def all_spin_assignments(n: int) -> np.ndarray:
    """Every ``z`` in ``{+1,-1}^n`` as rows; row ``b`` encodes bit ``i`` of ``b`` on node ``i``."""
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    return 1 - 2 * bits


def brute_force_maxcut(g: WeightedGraph, chunk_bits: int = 16):
    """Exact MaxCut by enumeration with node 0 pinned to +1. Returns ``(opt, z)``."""
    n = g.num_nodes
    if n > 26:
        raise ValueError("brute force limited to 26 nodes")
    if n == 1 or g.num_edges == 0:
        return 0.0, np.ones(n, dtype=np.int64)
    free = n - 1
    lo_bits = min(free, chunk_bits)
    hi_bits = free - lo_bits
    lo = all_spin_assignments(lo_bits)
    best, best_z = -np.inf, None
    for hi in itertools.product((1, -1), repeat=hi_bits):
        Z = np.empty((len(lo), n), dtype=np.int64)
        Z[:, 0] = 1
        Z[:, 1 : 1 + lo_bits] = lo
        if hi_bits:
            Z[:, 1 + lo_bits :] = hi
        vals = cut_values_batch(g, Z)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, best_z = float(vals[i]), Z[i].copy()
    return best, best_z


def local_search_cut(g: WeightedGraph, z, max_flips: int | None = None):
    """Greedy single-spin-flip ascent; the result is a 1-flip local optimum.

    A local optimum always satisfies ``cut >= sum(w) / 2``.
    """
    z = np.array(z, dtype=np.int64)
    A = g.adjacency
    gain = z * (A @ z)  # cut change when flipping each spin
    flips = 0
    limit = max_flips if max_flips is not None else 10 * g.num_nodes**2 + 10
    while flips < limit:
        i = int(np.argmax(gain))
        if gain[i] <= 1e-12:
            break
        z[i] = -z[i]
        gain += 2 * A[i] * z * z[i]
        gain[i] = -gain[i]
        flips += 1
    return z


def best_known_cut(g: WeightedGraph, restarts: int = 64, seed: int = 0, sweeps: int = 200):
    """Strong classical reference cut via multi-start simulated annealing plus local search.

    Used as the best-known value for instances too large to enumerate.
    """
    n = g.num_nodes
    if g.num_edges == 0:
        return 0.0, np.ones(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    A = g.adjacency
    scale = np.abs(g.w).max()
    temps = np.geomspace(2.0 * scale, 0.01 * scale, sweeps)
    # all restarts anneal in lockstep, one node at a time
    Z = rng.choice(np.array([-1, 1]), size=(restarts, n))
    F = Z @ A
    for T in temps:
        for i in range(n):
            delta = Z[:, i] * F[:, i]
            u = rng.random(restarts)
            flip = (delta > 0) | (u < np.exp(np.minimum(delta, 0.0) / T))
            if flip.any():
                Z[flip, i] = -Z[flip, i]
                F[flip] += 2.0 * Z[flip, i][:, None] * A[i][None, :]
    best, best_z = -np.inf, None
    for z in Z:
        z = local_search_cut(g, z)
        val = cut_value(g, z)
        if val > best:
            best, best_z = val, z.copy()
    return best, best_z


class BestKnownTable(dict):
    """Mapping instance name to best-known cut value, stored as ``instance_name,opt_value`` CSV."""

    @classmethod
    def load(cls, path):
        table = cls()
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "instance_name":
                    continue
                if len(row) != 2:
                    raise ValueError(f"bad best-known row {row!r}")
                value = float(row[1])
                if not math.isfinite(value):
                    raise ValueError(f"non-finite optimum for {row[0]}")
                table[row[0].strip()] = value
        return table

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["instance_name", "opt_value"])
            for name in sorted(self):
                writer.writerow([name, repr(float(self[name]))])


def reference_optimum(g: WeightedGraph, table: BestKnownTable | None = None, brute_force_limit: int = 20):
    """OPT by enumeration for small graphs, otherwise from ``table`` (missing entry is an error)."""
    if g.num_nodes <= brute_force_limit:
        return brute_force_maxcut(g)[0]
    if table is None or g.name not in table:
        raise KeyError(f"no best-known value for instance {g.name!r}")
    return table[g.name]


def estimate_optimum(g: WeightedGraph, table: BestKnownTable | None = None, brute_force_limit: int = 20) -> float:
    """Like :func:`reference_optimum`, but falls back to :func:`best_known_cut` for unlisted large graphs."""
    try:
        return reference_optimum(g, table, brute_force_limit)
    except KeyError:
        return best_known_cut(g)[0]
