"""Shared independent oracles for the test suite.

These are deliberately written without the package's own machinery: finite
differences for gradients, plain-Python log/exp loops for losses, direct
formula transcriptions for closed forms. Slow is fine here.
"""

import math

import numpy as np


def fd_grad(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(flat_x.size):
        keep = flat_x[i]
        flat_x[i] = keep + h
        fp = f(x)
        flat_x[i] = keep - h
        fm = f(x)
        flat_x[i] = keep
        flat_g[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-12):
    """Max elementwise relative error with an absolute floor for near-zeros."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def softmax_ce_oracle(logits, labels):
    """Mean cross-entropy by a plain double loop, no vectorization tricks."""
    total = 0.0
    for row, y in zip(np.asarray(logits, dtype=np.float64), labels):
        hi = max(row)
        lse = hi + math.log(sum(math.exp(v - hi) for v in row))
        total += lse - row[int(y)]
    return total / len(labels)


def adam_reference(w0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam trajectory on one parameter array given a gradient list."""
    w = np.array(w0, dtype=np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t, g in enumerate(grads, start=1):
        g = np.asarray(g, dtype=np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)
    return w


def entropy_bits(p):
    """Shannon entropy of a probability vector, in bits, 0·log0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def mi_bits_from_joint(pxy):
    """Plug-in MI of a joint table, in bits, by the direct double sum."""
    pxy = np.asarray(pxy, dtype=np.float64)
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    total = 0.0
    for i in range(pxy.shape[0]):
        for j in range(pxy.shape[1]):
            if pxy[i, j] > 0:
                total += pxy[i, j] * math.log2(pxy[i, j] / (px[i] * py[j]))
    return total


def gaussian_mi_nats(rho):
    """Closed-form MI of a bivariate standard normal with correlation rho."""
    return -0.5 * math.log(1.0 - rho * rho)
