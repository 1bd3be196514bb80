"""Exact discrete information measures on probability tables, in bits."""

import numpy as np

from .errors import DataError

LN2 = float(np.log(2.0))


def nats_to_bits(x):
    return np.asarray(x, dtype=np.float64) / LN2


def bits_to_nats(x):
    return np.asarray(x, dtype=np.float64) * LN2


def _checked_dist(p, name="p", axis=None, atol=1e-9):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-15):
        raise DataError(f"{name} has negative entries (min {p.min()})")
    sums = p.sum(axis=axis)
    if not np.allclose(sums, 1.0, atol=atol):
        raise DataError(f"{name} does not normalize to 1 (sum {sums})")
    return np.clip(p, 0.0, None)


def entropy_bits(p, validate=True):
    """Shannon entropy -sum p log2 p of a distribution, 0 log 0 = 0."""
    p = _checked_dist(p, "p") if validate else np.clip(np.asarray(p, dtype=np.float64), 0, None)
    mask = p > 0
    return float(-(p[mask] * np.log2(p[mask])).sum())


def binary_entropy_bits(p):
    """Elementwise entropy of Bernoulli(p), vectorized."""
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0)
    out = np.zeros_like(p)
    for q in (p, 1.0 - p):
        mask = q > 0
        out[mask] -= q[mask] * np.log2(q[mask])
    return out


def kl_bits(p, q):
    """KL(p || q) in bits over a shared finite support.

    q = 0 wherever p > 0 is a support violation and raises rather than
    returning inf, since downstream solvers would silently absorb it.
    """
    p = _checked_dist(p, "p")
    q = _checked_dist(q, "q")
    if p.shape != q.shape:
        raise DataError(f"KL operands must share shape, got {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise DataError("KL support mismatch: q assigns zero mass where p > 0")
    return float((p[mask] * (np.log2(p[mask]) - np.log2(q[mask]))).sum())


def mi_bits_from_joint(pxy, validate=True):
    """Mutual information of a joint table p(x, y), in bits."""
    pxy = np.asarray(pxy, dtype=np.float64)
    if pxy.ndim != 2:
        raise DataError(f"joint table must be 2-D, got shape {pxy.shape}")
    if validate:
        pxy = _checked_dist(pxy, "joint", axis=None)
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    mask = pxy > 0
    ratio = pxy[mask] / (px @ py)[mask]
    return float((pxy[mask] * np.log2(ratio)).sum())


def label_entropy_bits(labels, class_count=None):
    """Empirical entropy of an integer label vector in bits."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("label entropy of an empty vector")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    counts = np.bincount(labels, minlength=class_count or 0)
    return entropy_bits(counts / labels.size, validate=False)
