"""Dense statevector simulation of depth-p QAOA for MaxCut.

Basis index ``b`` encodes qubit ``i`` in bit ``i``; bit 0 is spin ``+1`` and bit 1 is
spin ``-1``. The cost operator is ``H_C = 1/2 sum_uv w_uv (1 - Z_u Z_v)``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .graph import WeightedGraph

TWO_PI = 2.0 * np.pi
DEFAULT_QUBIT_CAP = 16


class QubitCapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QaoaAngles:
    """Depth-p angles, stored reduced into ``[0, 2*pi)``."""

    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        g = np.mod(np.atleast_1d(np.asarray(self.gamma, dtype=np.float64)), TWO_PI)
        b = np.mod(np.atleast_1d(np.asarray(self.beta, dtype=np.float64)), TWO_PI)
        if g.ndim != 1 or g.shape != b.shape or len(g) < 1:
            raise ValueError("gamma and beta must be equal-length vectors with p >= 1")
        # np.mod can round up to exactly 2*pi for tiny negative inputs
        g[g >= TWO_PI] = 0.0
        b[b >= TWO_PI] = 0.0
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)

    @property
    def p(self) -> int:
        return len(self.gamma)

    def as_vector(self) -> np.ndarray:
        """Column layout used for parameter matrices: gammas then betas."""
        return np.concatenate([self.gamma, self.beta])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if len(vec) % 2:
            raise ValueError("angle vector must have even length 2p")
        p = len(vec) // 2
        return cls(vec[:p], vec[p:])

    @classmethod
    def random(cls, p, rng):
        return cls(rng.uniform(0, TWO_PI, p), rng.uniform(0, TWO_PI, p))

    def __repr__(self):
        return f"QaoaAngles(gamma={self.gamma.round(4).tolist()}, beta={self.beta.round(4).tolist()})"


@dataclass(frozen=True)
class NoiseSpec:
    """``shots``: estimate expectations from that many samples during optimisation.
    ``readout_bitphase_p``: per-qubit bit-phase flip probability at readout."""

    shots: int | None = None
    readout_bitphase_p: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.readout_bitphase_p <= 1.0:
            raise ValueError("readout probability must lie in [0, 1]")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")


NOISELESS = NoiseSpec()

_diag_cache: "weakref.WeakKeyDictionary[WeightedGraph, np.ndarray]" = weakref.WeakKeyDictionary()


def _check_cap(m, cap):
    if m < 1:
        raise ValueError("need at least one qubit")
    if m > cap:
        raise QubitCapError(f"{m} qubits exceed the simulator cap of {cap}")


def spins_from_indices(idx, m) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    bits = (idx[..., None] >> np.arange(m)) & 1
    return 1 - 2 * bits


def indices_from_spins(z) -> np.ndarray:
    z = np.asarray(z)
    bits = (1 - z) // 2
    return (bits << np.arange(z.shape[-1])).sum(axis=-1)


def edge_term_diagonal(m, u, v, w) -> np.ndarray:
    """Diagonal of ``w/2 (1 - Z_u Z_v)`` over the ``2^m`` basis."""
    idx = np.arange(2**m)
    differ = ((idx >> u) ^ (idx >> v)) & 1
    return w * differ.astype(np.float64)


def cost_diagonal(g: WeightedGraph) -> np.ndarray:
    """``H_C(z)`` for every basis state (cached per graph object)."""
    try:
        return _diag_cache[g]
    except KeyError:
        pass
    m = g.num_nodes
    idx = np.arange(2**m)
    h = np.zeros(2**m)
    for a, b, w in zip(g.u.tolist(), g.v.tolist(), g.w.tolist()):
        h += w * (((idx >> a) ^ (idx >> b)) & 1)
    h.setflags(write=False)
    _diag_cache[g] = h
    return h


def init_plus_state(m: int, cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    _check_cap(m, cap)
    return np.full(2**m, 2.0 ** (-m / 2), dtype=np.complex128)


def apply_cost_layer(state, g_or_diag, gamma: float) -> np.ndarray:
    h = g_or_diag if isinstance(g_or_diag, np.ndarray) else cost_diagonal(g_or_diag)
    return state * np.exp(-1j * gamma * h)


def _apply_rx_qubit(state, q, c, s):
    m = int(np.log2(state.size))
    t = state.reshape(2 ** (m - q - 1), 2, 2**q)
    a0, a1 = t[:, 0, :], t[:, 1, :]
    out = np.empty_like(t)
    out[:, 0, :] = c * a0 - 1j * s * a1
    out[:, 1, :] = c * a1 - 1j * s * a0
    return out.reshape(-1)


def apply_mixer_layer(state, beta: float) -> np.ndarray:
    """``exp(-i beta sum_j X_j)``: ``cos(beta) I - i sin(beta) X`` on every qubit."""
    m = int(np.log2(state.size))
    c, s = np.cos(beta), np.sin(beta)
    for q in range(m):
        state = _apply_rx_qubit(state, q, c, s)
    return state


def apply_sum_x(state) -> np.ndarray:
    m = int(np.log2(state.size))
    out = np.zeros_like(state)
    idx = np.arange(state.size)
    for q in range(m):
        out += state[idx ^ (1 << q)]
    return out


def qaoa_state(g: WeightedGraph, angles: QaoaAngles, cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    state = init_plus_state(g.num_nodes, cap)
    h = cost_diagonal(g)
    for gamma, beta in zip(angles.gamma, angles.beta):
        state = apply_mixer_layer(apply_cost_layer(state, h, gamma), beta)
    return state


def qaoa_expectation(g: WeightedGraph, angles: QaoaAngles, cap: int = DEFAULT_QUBIT_CAP) -> float:
    state = qaoa_state(g, angles, cap)
    return float(np.dot(np.abs(state) ** 2, cost_diagonal(g)))


def qaoa_value_and_gradient(g: WeightedGraph, angles: QaoaAngles, cap: int = DEFAULT_QUBIT_CAP):
    """Expectation and its exact gradient by a reverse (adjoint) sweep over the layers.

    For a layer ``exp(-i theta G)`` applied to give state ``phi``, the derivative is
    ``2 Im <lambda| G |phi>`` where ``lambda = H_C psi`` pulled back to the same point.
    """
    h = cost_diagonal(g)
    p = angles.p
    psi = qaoa_state(g, angles, cap)
    value = float(np.dot(np.abs(psi) ** 2, h))
    lam = h * psi
    d_gamma = np.zeros(p)
    d_beta = np.zeros(p)
    for layer in reversed(range(p)):
        beta, gamma = angles.beta[layer], angles.gamma[layer]
        d_beta[layer] = 2.0 * np.imag(np.vdot(lam, apply_sum_x(psi)))
        psi = apply_mixer_layer(psi, -beta)
        lam = apply_mixer_layer(lam, -beta)
        d_gamma[layer] = 2.0 * np.imag(np.vdot(lam, h * psi))
        phase = np.exp(1j * gamma * h)
        psi = psi * phase
        lam = lam * phase
    return value, d_gamma, d_beta


def qaoa_gradient(g: WeightedGraph, angles: QaoaAngles, cap: int = DEFAULT_QUBIT_CAP):
    _, d_gamma, d_beta = qaoa_value_and_gradient(g, angles, cap)
    return d_gamma, d_beta


def _sampled_mean(probs, h, shots, rng):
    counts = rng.multinomial(shots, probs / probs.sum())
    return float(counts @ h) / shots


def _shifted_expectation(g, h, angles, layer, shots, rng, edge=None, qubit=None, shift=0.0):
    """Shot-estimated expectation with one edge phase or one qubit rotation shifted."""
    m = g.num_nodes
    state = init_plus_state(m, cap=max(m, DEFAULT_QUBIT_CAP))
    for l, (gamma, beta) in enumerate(zip(angles.gamma, angles.beta)):
        state = apply_cost_layer(state, h, gamma)
        if l == layer and edge is not None:
            a, b, w = edge
            state = state * np.exp(-1j * shift * edge_term_diagonal(m, a, b, w))
        state = apply_mixer_layer(state, beta)
        if l == layer and qubit is not None:
            # the extra rotation commutes with the rest of the layer's mixer
            state = _apply_rx_qubit(state, qubit, np.cos(shift), np.sin(shift))
    return _sampled_mean(np.abs(state) ** 2, h, shots, rng)


def shot_gradient(g: WeightedGraph, angles: QaoaAngles, shots: int, rng):
    """Parameter-shift gradient with every expectation estimated from ``shots`` samples.

    The cost layer is split into per-edge terms with spectrum gap ``|w|``; the mixer
    into per-qubit ``X`` rotations with gap 2.
    """
    h = cost_diagonal(g)
    p = angles.p
    d_gamma = np.zeros(p)
    d_beta = np.zeros(p)
    edges = g.edges()
    for layer in range(p):
        for a, b, w in edges:
            r = abs(w)
            s = np.pi / (2 * r)
            plus = _shifted_expectation(g, h, angles, layer, shots, rng, edge=(a, b, w), shift=s)
            minus = _shifted_expectation(g, h, angles, layer, shots, rng, edge=(a, b, w), shift=-s)
            d_gamma[layer] += r / 2 * (plus - minus)
        for q in range(g.num_nodes):
            plus = _shifted_expectation(g, h, angles, layer, shots, rng, qubit=q, shift=np.pi / 4)
            minus = _shifted_expectation(g, h, angles, layer, shots, rng, qubit=q, shift=-np.pi / 4)
            d_beta[layer] += plus - minus
    return d_gamma, d_beta


def optimize_angles(
    g: WeightedGraph,
    init: QaoaAngles,
    steps: int = 20,
    lr: float = 0.01,
    noise: NoiseSpec = NOISELESS,
    seed=None,
    cap: int = DEFAULT_QUBIT_CAP,
    trajectory: list | None = None,
) -> QaoaAngles:
    """Plain gradient ascent on the expectation; angles are reduced mod 2*pi after each step.

    With ``noise.shots`` set, gradients come from shot-estimated parameter shifts.
    ``trajectory``, if given, receives the exact expectation before every step and at the end.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    _check_cap(g.num_nodes, cap)
    if steps == 0 or g.num_edges == 0:
        return init
    rng = np.random.default_rng(seed)
    gamma, beta = init.gamma.copy(), init.beta.copy()
    for _ in range(steps):
        current = QaoaAngles(gamma, beta)
        if noise.shots is None:
            value, dg, db = qaoa_value_and_gradient(g, current, cap)
        else:
            value = qaoa_expectation(g, current, cap) if trajectory is not None else None
            dg, db = shot_gradient(g, current, noise.shots, rng)
        if trajectory is not None:
            trajectory.append(value)
        gamma = np.mod(gamma + lr * dg, TWO_PI)
        beta = np.mod(beta + lr * db, TWO_PI)
    final = QaoaAngles(gamma, beta)
    if trajectory is not None:
        trajectory.append(qaoa_expectation(g, final, cap))
    return final


def apply_readout_flips(spins, p: float, rng) -> np.ndarray:
    """Bit-phase flip (Pauli Y) before a computational-basis measurement.

    Y = iXZ; the Z part only changes a phase, which the measurement cannot see, so
    the observable effect is a bit flip with probability ``p`` per qubit.
    """
    spins = np.asarray(spins)
    if p <= 0.0:
        return spins
    hit = rng.random(spins.shape) < p
    return np.where(hit, -spins, spins)


def sample_bitstrings(
    g: WeightedGraph,
    angles: QaoaAngles,
    shots: int = 1000,
    readout_p: float = 0.0,
    seed=None,
    cap: int = DEFAULT_QUBIT_CAP,
) -> np.ndarray:
    """``(shots, m)`` spin samples from ``|psi|^2`` with optional readout bit-phase flips."""
    if shots < 1:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng(seed)
    probs = np.abs(qaoa_state(g, angles, cap)) ** 2
    idx = rng.choice(probs.size, size=shots, p=probs / probs.sum())
    return apply_readout_flips(spins_from_indices(idx, g.num_nodes), readout_p, rng)


def interp_expand(angles: QaoaAngles, target_p: int) -> QaoaAngles:
    """INTERP depth expansion ``p -> p + 1`` by linear interpolation of each schedule.

    New entry ``i`` (1-based) is ``(i-1)/p * x_{i-1} + (p-i+1)/p * x_i`` with
    ``x_0 = x_{p+1} = 0``. Larger jumps apply the step repeatedly.
    """
    p = angles.p
    if target_p <= p:
        raise ValueError("target depth must exceed the current depth")
    gamma, beta = angles.gamma, angles.beta
    for depth in range(p, target_p):
        gamma, beta = _interp_step(gamma, depth), _interp_step(beta, depth)
    return QaoaAngles(gamma, beta)


def _interp_step(x, p):
    padded = np.concatenate([[0.0], x, [0.0]])
    i = np.arange(1, p + 2)
    return (i - 1) / p * padded[i - 1] + (p - i + 1) / p * padded[i]
