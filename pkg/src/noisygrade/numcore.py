"""Shared numerical primitives.

Everything here works in float64. Functions accept a single vector or a
batch (rows are samples) unless stated otherwise. Class indices returned
to callers are 1-based; arrays inside the package are indexed from 0.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

PROB_TOL = 1e-9


class InvalidArgument(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class NumericError(FloatingPointError):
    """A non-finite value appeared; ``term`` names the loss term involved."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message)
        self.term = term


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for an independent (seed, stream) pair.

    Streams are spawn keys of one SeedSequence, so distinct streams of the
    same seed never overlap and the same pair always replays identically.
    """
    if seed < 0 or stream < 0:
        raise InvalidArgument("seed and stream must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    z = _as_float(logits)
    if z.size == 0 or z.shape[-1] == 0:
        raise InvalidArgument("softmax of an empty vector")
    if not temperature > 0:
        raise InvalidArgument(f"temperature must be positive, got {temperature}")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def check_probability(p, name: str = "p") -> np.ndarray:
    p = _as_float(p)
    if p.size == 0:
        raise InvalidArgument(f"{name} is empty")
    if not np.all(np.isfinite(p)) or np.any(p < -PROB_TOL):
        raise InvalidArgument(f"{name} has negative or non-finite entries")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_TOL):
        raise InvalidArgument(f"{name} does not sum to 1")
    return p


def entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats, with 0 ln 0 taken as 0."""
    p = check_probability(p)
    safe = np.where(p > 0, p, 1.0)
    h = -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def l2_normalize(v) -> np.ndarray:
    v = _as_float(v)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateInput("cannot normalize a zero vector")
    return v / norm


def cosine_similarity(a, b) -> np.ndarray | float:
    """Cosine of the angle between matching rows of ``a`` and ``b``."""
    a = _as_float(a)
    b = _as_float(b)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgument(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInput("cosine similarity with a zero-norm vector")
    c = np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)
    return float(c) if c.ndim == 0 else c


def argmax_tiebreak(p) -> int:
    """1-based index of the largest entry; ties go to the lowest index."""
    p = _as_float(p)
    if p.size == 0:
        raise InvalidArgument("argmax of an empty vector")
    # np.argmax already returns the first maximal position
    return int(np.argmax(p)) + 1


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    if not 1e-7 <= h <= 1e-4:
        raise InvalidArgument(f"step {h} outside [1e-7, 1e-4]")
    x = _as_float(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f(x)
        flat[k] = orig - h
        down = f(x)
        flat[k] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite function value near coordinate {k}")
        g[k] = (up - down) / (2 * h)
    return grad


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Map dL/dp to dL/dlogits through a temperature-1 softmax."""
    return p * (grad_p - np.sum(grad_p * p, axis=-1, keepdims=True))
