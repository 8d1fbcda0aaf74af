"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .graph import WeightedGraph


def check_random_state(seed) -> np.random.Generator:
    """``None``, an int seed, a ``SeedSequence`` or a ``Generator`` -> ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_capacity(capacity) -> int:
    if not isinstance(capacity, numbers.Integral) or capacity < 1:
        raise ValueError(f"capacity must be a positive integer, got {capacity!r}")
    return int(capacity)


def check_graph(g) -> WeightedGraph:
    if not isinstance(g, WeightedGraph):
        raise TypeError(f"expected a WeightedGraph, got {type(g).__name__}")
    return g


def check_spins(z, n: int | None = None) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim != 1:
        raise ValueError("spin assignment must be one-dimensional")
    if n is not None and len(z) != n:
        raise ValueError(f"spin assignment has length {len(z)}, expected {n}")
    if not np.all((z == 1) | (z == -1)):
        raise ValueError("spins must be +1 or -1")
    return z.astype(np.int64)


def derive_seed(seed: int, *keys) -> int:
    """Deterministic child seed from a base seed and hashable string/int keys."""
    material = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            material.extend(key.encode())
        else:
            material.append(int(key))
    return int(np.random.SeedSequence(material).generate_state(1)[0])
