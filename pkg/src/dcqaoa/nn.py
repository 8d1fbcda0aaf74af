"""Neural building blocks: dense and graph layers, AdamW, a plateau schedule, checkpoints."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


# --- adjacency in edge-list form --------------------------------------------


@dataclass
class EdgeAdjacency:
    """Directed edge list ``src -> dst`` (both directions present, no self loops).

    ``weight`` may be a tape tensor so that a masked adjacency stays differentiable.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: Tensor

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = ad.as_tensor(self.weight)
        if not (len(self.src) == len(self.dst) == self.weight.shape[0]) or self.weight.ndim != 1:
            raise ValueError("src, dst and weight must be aligned 1-D arrays")
        if np.any(self.src == self.dst):
            raise ValueError("self loops are added by the layers, not the adjacency")

    @classmethod
    def from_dense(cls, A) -> "EdgeAdjacency":
        """Support of a dense adjacency; gradients reach the nonzero entries of a tensor ``A``."""
        A = ad.as_tensor(A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("adjacency must be square")
        mask = A.value != 0
        np.fill_diagonal(mask, False)
        dst, src = np.nonzero(mask)
        return cls(n, src, dst, ad.getitem(A, (dst, src)))

    def unweighted(self) -> "EdgeAdjacency":
        return EdgeAdjacency(self.num_nodes, self.src, self.dst, np.ones(len(self.src)))

    def nonzero(self) -> "EdgeAdjacency":
        """Drop edges whose current weight is exactly zero."""
        keep = np.flatnonzero(self.weight.value != 0)
        if len(keep) == len(self.src):
            return self
        return EdgeAdjacency(self.num_nodes, self.src[keep], self.dst[keep], ad.take_rows(self.weight, keep))

    def detached(self) -> "EdgeAdjacency":
        return EdgeAdjacency(self.num_nodes, self.src, self.dst, ad.stop_gradient(self.weight))


def _with_self_loops(adj: EdgeAdjacency):
    loops = np.arange(adj.num_nodes)
    src = np.concatenate([adj.src, loops])
    dst = np.concatenate([adj.dst, loops])
    w = ad.concat([adj.weight, Tensor(np.ones(adj.num_nodes))], axis=0)
    return src, dst, w


# --- layers as functions ----------------------------------------------------


def gcn_layer(x, adj: EdgeAdjacency, weight, bias=None) -> Tensor:
    """``D^-1/2 (A + I) D^-1/2 X W + b`` with ``D`` the row sums of ``|A| + I``."""
    x = ad.as_tensor(x)
    if x.shape[0] != adj.num_nodes:
        raise ValueError(f"{x.shape[0]} feature rows for {adj.num_nodes} nodes")
    src, dst, w = _with_self_loops(adj)
    deg = ad.segment_sum(ad.abs_(w), dst, adj.num_nodes)
    inv_sqrt = ad.power(deg, -0.5)
    norm = w * ad.take_rows(inv_sqrt, src) * ad.take_rows(inv_sqrt, dst)
    xw = ad.matmul(x, weight)
    msg = ad.take_rows(xw, src) * ad.reshape(norm, (-1, 1))
    out = ad.segment_sum(msg, dst, adj.num_nodes)
    return out if bias is None else out + bias


def gatv2_layer(x, adj: EdgeAdjacency, w_src, w_dst, att, bias=None, slope: float = 0.2) -> Tensor:
    """Single-head GATv2 over ``neighbors(i) + {i}``.

    ``e_ij = att . leaky_relu(W_dst h_i + W_src h_j)``, normalised over ``j`` per target
    ``i``; the message ``W_src h_j`` is scaled by the edge weight (1 on the self loop).
    """
    x = ad.as_tensor(x)
    if x.shape[0] != adj.num_nodes:
        raise ValueError(f"{x.shape[0]} feature rows for {adj.num_nodes} nodes")
    src, dst, w = _with_self_loops(adj)
    zs = ad.matmul(x, w_src)
    zd = ad.matmul(x, w_dst)
    hs = ad.take_rows(zs, src)
    pre = ad.leaky_relu(hs + ad.take_rows(zd, dst), slope)
    logits = ad.reshape(ad.matmul(pre, ad.reshape(att, (-1, 1))), (-1,))
    alpha = ad.segment_softmax(logits, dst, adj.num_nodes)
    msg = hs * ad.reshape(alpha * w, (-1, 1))
    out = ad.segment_sum(msg, dst, adj.num_nodes)
    return out if bias is None else out + bias


# --- modules ----------------------------------------------------------------


def glorot(shape, rng) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Container of named parameters and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def param(self, name, value) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def buffer(self, name, value) -> np.ndarray:
        """Register a frozen array that is checkpointed but never optimised."""
        arr = np.array(value, dtype=np.float64)
        arr.flags.writeable = False
        self._buffers[name] = arr
        return arr

    def child(self, name, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for name, m in self._children.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name, arr in self._buffers.items():
            yield prefix + name, arr
        for name, m in self._children.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.value.copy() for k, t in self.named_parameters()}
        state.update((k, arr.copy()) for k, arr in self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        if set(own) | set(bufs) != set(state):
            expected = set(own) | set(bufs)
            missing, extra = expected - set(state), set(state) - expected
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            ref = own[k].value if k in own else bufs[k]
            if v.shape != ref.shape:
                raise ValueError(f"{k}: shape {v.shape} != {ref.shape}")
        for k, t in own.items():
            t.value = np.array(state[k], dtype=np.float64)
        self._load_buffers(state)

    def _load_buffers(self, state, prefix: str = ""):
        for name in self._buffers:
            arr = np.array(state[prefix + name], dtype=np.float64)
            arr.flags.writeable = False
            self._buffers[name] = arr
        for name, m in self._children.items():
            m._load_buffers(state, f"{prefix}{name}.")

    def set_requires_grad(self, flag: bool):
        for t in self.parameters():
            t.requires_grad = flag


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng):
        super().__init__()
        self.weight = self.param("weight", glorot((d_in, d_out), rng))
        self.bias = self.param("bias", np.zeros(d_out))

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class GCNEncoder(Module):
    """Stack of GCN layers, ReLU in between, linear output."""

    def __init__(self, d_in: int, hidden: int, layers: int, rng, unweighted: bool = False):
        super().__init__()
        self.unweighted = unweighted
        self.layers = []
        for i in range(layers):
            lin = self.child(f"conv{i}", Linear(d_in if i == 0 else hidden, hidden, rng))
            self.layers.append(lin)

    def __call__(self, x, adj: EdgeAdjacency):
        if self.unweighted:
            adj = adj.nonzero().unweighted()
        h = x
        for i, lin in enumerate(self.layers):
            h = gcn_layer(h, adj, lin.weight, lin.bias)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h


class GATv2Conv(Module):
    def __init__(self, d_in: int, d_out: int, rng):
        super().__init__()
        self.w_src = self.param("w_src", glorot((d_in, d_out), rng))
        self.w_dst = self.param("w_dst", glorot((d_in, d_out), rng))
        self.att = self.param("att", glorot((d_out, 1), rng).ravel())
        self.bias = self.param("bias", np.zeros(d_out))

    def __call__(self, x, adj):
        return gatv2_layer(x, adj, self.w_src, self.w_dst, self.att, self.bias)


class GATEncoder(Module):
    """Embedding block (Linear-ReLU-Linear-ReLU) followed by GATv2 layers, linear output."""

    def __init__(self, d_in: int, hidden: int, layers: int, rng, unweighted: bool = False):
        super().__init__()
        self.unweighted = unweighted
        self.embed1 = self.child("embed1", Linear(d_in, hidden, rng))
        self.embed2 = self.child("embed2", Linear(hidden, hidden, rng))
        self.convs = [self.child(f"conv{i}", GATv2Conv(hidden, hidden, rng)) for i in range(layers)]

    def __call__(self, x, adj: EdgeAdjacency):
        adj = adj.nonzero()
        if self.unweighted:
            adj = adj.unweighted()
        h = ad.relu(self.embed2(ad.relu(self.embed1(x))))
        for i, conv in enumerate(self.convs):
            h = conv(h, adj)
            if i < len(self.convs) - 1:
                h = ad.relu(h)
        return h


class MLP(Module):
    """Linear layers with ReLU between them."""

    def __init__(self, sizes, rng):
        super().__init__()
        self.layers = [self.child(f"fc{i}", Linear(a, b, rng)) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, x):
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


# --- optimisation -----------------------------------------------------------


@dataclass
class AdamW:
    """Adam with decoupled weight decay (the decay is ``lr * weight_decay * p``)."""

    params: list[Tensor]
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in self.params]
            self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, scale: float = 1.0):
        """Apply one update; ``scale`` multiplies the accumulated gradients (e.g. 1/batch)."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.value) if p.grad is None else p.grad * scale
            if self.weight_decay:
                p.value = p.value - self.lr * self.weight_decay * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        return {"lr": self.lr, "weight_decay": self.weight_decay, "step_count": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        if len(state["m"]) != len(self.params):
            raise ValueError("optimizer state does not match the parameter list")
        self.lr = float(state["lr"])
        self.weight_decay = float(state["weight_decay"])
        self.step_count = int(state["step_count"])
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]


def adamw_step(params, grads, state: AdamW):
    """Functional form: write ``grads`` onto ``params`` and apply one AdamW update."""
    for p, g in zip(params, grads):
        p.grad = None if g is None else np.asarray(g, dtype=np.float64)
    state.step()
    return params


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` non-improving calls.

    ``mode="min"`` treats lower metrics as better (losses), ``"max"`` higher.
    """

    lr: float
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 0.0
    mode: str = "min"
    best: float | None = None
    stale: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.mode not in ("min", "max"):
            raise ValueError("mode must be 'min' or 'max'")
        self.lr = max(self.lr, self.min_lr)

    def step(self, metric: float) -> float:
        better = self.best is None or (metric < self.best if self.mode == "min" else metric > self.best)
        if better:
            self.best = float(metric)
            self.stale = 0
        else:
            self.stale += 1
            if self.stale > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stale = 0
        return self.lr


def plateau_step(sched: PlateauSchedule, metric: float) -> float:
    return sched.step(metric)


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(path, module: Module, optimizer: AdamW | None = None, meta: dict | None = None):
    """Write parameters (and optional optimizer state) to an ``.npz`` archive."""
    arrays = {f"param/{k}": v for k, v in module.state_dict().items()}
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    if optimizer is not None:
        names = [k for k, _ in module.named_parameters()]
        for name, m, v in zip(names, optimizer.m, optimizer.v):
            arrays[f"adam_m/{name}"] = m
            arrays[f"adam_v/{name}"] = v
        header["optimizer"] = {"lr": optimizer.lr, "weight_decay": optimizer.weight_decay, "step_count": optimizer.step_count}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, module: Module, optimizer: AdamW | None = None) -> dict:
    """Restore parameters in place and return the stored metadata."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        module.load_state_dict({k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")})
        if optimizer is not None and "optimizer" in header:
            names = [k for k, _ in module.named_parameters()]
            optimizer.load_state({**header["optimizer"], "m": [data[f"adam_m/{n}"] for n in names], "v": [data[f"adam_v/{n}"] for n in names]})
    return header["meta"]


