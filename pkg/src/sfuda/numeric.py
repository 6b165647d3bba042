"""Small numerical kernels shared by every stage of the adaptation method.

All functions are pure and operate on float64 numpy arrays.  Random draws go
through :func:`seeded_rng`, which always uses the PCG64 bit generator
(O'Neill, "PCG: A Family of Simple Fast Space-Efficient Statistically Good
Algorithms for Random Number Generation", 2014) so that a seed fully pins the
stream of raw 64-bit draws.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyInput, InvalidInput, ZeroNorm


def seeded_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator.  One generator per worker; never share."""
    if seed < 0 or seed >= 2**64:
        raise InvalidInput(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def _as_finite_vector(values, name="values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInput(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


def softmax(logits) -> np.ndarray:
    x = _as_finite_vector(logits, "logits")
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax for a 2-D array (no validation, hot path)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def self_entropy(p) -> float:
    """Shannon entropy in nats; zero-probability terms contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return np.maximum(0.0, -terms.sum(axis=1))


def minmax_normalize(values) -> tuple[np.ndarray, bool]:
    """Affinely map ``values`` onto [0, 1].

    Returns ``(normalized, degenerate)``.  When every entry is equal (including
    the single-element case) there is no range to map, so the result is all
    zeros and ``degenerate`` is True.
    """
    x = _as_finite_vector(values)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x), True
    out = (x - lo) / (hi - lo)
    # guard the endpoints against rounding
    return np.clip(out, 0.0, 1.0), False


def column_mean_variance(features) -> tuple[np.ndarray, float]:
    """Per-column population variance of an m x d matrix and its mean over columns."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise InvalidInput("features must be a 2-D matrix")
    if f.shape[0] == 0:
        raise EmptyInput("features has no rows")
    if f.shape[1] == 0:
        raise InvalidInput("features has no columns")
    var = f.var(axis=0)
    return var, float(var.mean())


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroNorm("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def l2_normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ZeroNorm("zero-norm row")
    return x / norms[:, None], norms


def cosine_matrix(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    ua, _ = l2_normalize_rows(np.asarray(a, dtype=np.float64))
    ub = ua if b is None else l2_normalize_rows(np.asarray(b, dtype=np.float64))[0]
    return np.clip(ua @ ub.T, -1.0, 1.0)
