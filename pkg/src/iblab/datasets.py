"""Synthetic icosahedron classification task and IDX image ingestion.

The synthetic task enumerates all 4096 binary occupancy patterns over the
12 vertices of a regular icosahedron and labels them through a rotation-
invariant pairwise score, so the exact joint p(x, y) is available in closed
form. Image datasets come from the standard big-endian IDX files (gzipped
copies are detected by magic sniff).
"""

import csv
import gzip
import itertools
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigError, DataError
from .infotheory import binary_entropy_bits, entropy_bits

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def icosahedron_vertices():
    """The 12 unit vertex vectors: cyclic shifts of (0, ±1, ±φ), normalized."""
    rows = []
    for a in (1.0, -1.0):
        for b in (GOLDEN, -GOLDEN):
            rows.append((0.0, a, b))
    verts = [tuple(np.roll(r, s)) for r in rows for s in range(3)]
    u = np.array(verts, dtype=np.float64)
    return u / np.linalg.norm(u, axis=1, keepdims=True)


_VERTS = icosahedron_vertices()
_GRAM = _VERTS @ _VERTS.T


def pairwise_score(x):
    """g(x) = sum_{i<j} x_i x_j (u_i . u_j), vectorized over rows of x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    # x binary, so the diagonal contribution of x G x^T is just |x|
    return 0.5 * (((x @ _GRAM) * x).sum(axis=1) - x.sum(axis=1))


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Labeling rule p(y=1|x) = sigmoid(gamma * (g(x) - theta_rule))."""

    gamma: float
    theta_rule: float
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")


class LabeledDataset:
    """Feature matrix in [0,1], integer labels, optional exact joint table."""

    def __init__(self, features, labels, name, class_count, exact_joint=None, posterior=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.name = str(name)
        self.class_count = int(class_count)
        self.exact_joint = None if exact_joint is None else np.asarray(exact_joint, dtype=np.float64)
        self.posterior = None if posterior is None else np.asarray(posterior, dtype=np.float64)
        self._validate()

    def _validate(self):
        n = self.features.shape[0]
        if n == 0:
            raise DataError(f"dataset {self.name} is empty")
        if self.features.ndim != 2:
            raise DataError(f"features must be N x d, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise DataError(
                f"labels shape {self.labels.shape} does not match {n} feature rows"
            )
        lo, hi = self.features.min(), self.features.max()
        if lo < 0.0 or hi > 1.0:
            raise DataError(f"feature values must lie in [0,1], got range [{lo}, {hi}]")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise DataError(
                f"labels must lie in [0, {self.class_count}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        if self.exact_joint is not None:
            j = self.exact_joint
            if np.any(j < 0):
                raise DataError("exact joint has negative entries")
            if abs(j.sum() - 1.0) > 1e-12:
                raise DataError(f"exact joint sums to {j.sum()!r}, not 1")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def synthetic_posterior(spec, scores=None):
    """p(y=1|x) for every one of the 4096 patterns (or given score values)."""
    if scores is None:
        scores = pairwise_score(all_patterns())
    return _sigmoid(spec.gamma * (np.asarray(scores) - spec.theta_rule))


def all_patterns():
    """All 2^12 binary occupancy vectors in lexicographic order."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=12)), dtype=np.float64)


def exact_synthetic_mi_bits(spec):
    """Exact MI(X;Y) of the labeling rule, from the enumerable joint."""
    p1 = synthetic_posterior(spec)
    return float(entropy_bits(np.array([1 - p1.mean(), p1.mean()]), validate=False)
                 - binary_entropy_bits(p1).mean())


def gen_synthetic(spec):
    """Enumerate the 4096 patterns, sample labels, attach the exact joint."""
    x = all_patterns()
    p1 = synthetic_posterior(spec)
    rng = np.random.default_rng(spec.seed)
    labels = (rng.random(x.shape[0]) < p1).astype(np.int64)
    n = x.shape[0]
    joint = np.stack([(1.0 - p1) / n, p1 / n], axis=1)
    return LabeledDataset(x, labels, "synthetic", 2, exact_joint=joint, posterior=p1)


def calibrate_synthetic(target_mi_bits=0.99, target_balance=0.5,
                        mi_tolerance=0.02, balance_tolerance=0.05, seed=0):
    """Search (gamma, theta_rule) so the exact joint hits both target statistics.

    The score g takes ~39 discrete levels, and a split at exactly
    target_balance forces a level onto the decision boundary, capping exact
    MI well below 1 bit. So theta is gridded over the midpoints of
    inter-level gaps whose deterministic split lies inside the balance band;
    within each gap MI is monotone in gamma and a bisection pins the target.
    Among feasible gaps the one with balance closest to target wins.
    """
    if not 0.0 < target_mi_bits <= 1.0:
        raise ConfigError(f"target_mi_bits must be in (0, 1], got {target_mi_bits}")
    if not 0.0 < target_balance < 1.0:
        raise ConfigError(f"target_balance must be in (0, 1), got {target_balance}")

    scores = pairwise_score(all_patterns())
    levels = np.unique(np.round(scores, 10))
    n = scores.size

    def stats(gamma, theta):
        p1 = _sigmoid(gamma * (scores - theta))
        pbar = p1.mean()
        mi = entropy_bits(np.array([1 - pbar, pbar]), validate=False) - binary_entropy_bits(p1).mean()
        return pbar, mi

    best = None           # (balance distance, gamma, theta, pbar, mi)
    nearest_mi = 0.0      # best MI seen anywhere, for the error message
    for lo_level, hi_level in zip(levels[:-1], levels[1:]):
        theta = 0.5 * (lo_level + hi_level)
        frac_above = float((scores > theta).mean())
        if abs(frac_above - target_balance) > balance_tolerance:
            continue
        g_lo, g_hi = 1e-3, 65536.0
        _, mi_hi = stats(g_hi, theta)
        nearest_mi = max(nearest_mi, mi_hi)
        if mi_hi < target_mi_bits - 1e-12:
            continue  # even near-deterministic labels cannot reach the target here
        for _ in range(200):
            mid = np.sqrt(g_lo * g_hi)
            _, mi_mid = stats(mid, theta)
            if mi_mid < target_mi_bits:
                g_lo = mid
            else:
                g_hi = mid
        gamma = float(np.sqrt(g_lo * g_hi))
        pbar, mi = stats(gamma, theta)
        nearest_mi = max(nearest_mi, mi)
        if abs(mi - target_mi_bits) <= mi_tolerance and abs(pbar - target_balance) <= balance_tolerance:
            cand = (abs(pbar - target_balance), gamma, theta, pbar, mi)
            if best is None or cand[0] < best[0]:
                best = cand
    if best is None:
        raise CalibrationError(
            f"no (gamma, theta) meets MI {target_mi_bits} +/- {mi_tolerance} bits at "
            f"balance {target_balance} +/- {balance_tolerance}; nearest achievable MI "
            f"is {nearest_mi:.4f} bits",
            nearest=nearest_mi,
        )
    _, gamma, theta, _, _ = best
    return SyntheticSpec(gamma=gamma, theta_rule=theta, seed=seed)


def export_synthetic_csv(dataset, path):
    """4096 rows: twelve binary columns, p(y=1|x), and the sampled label."""
    if dataset.posterior is None:
        raise ConfigError("dataset has no posterior column; only synthetic datasets export")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dataset.dim)] + ["p_y1", "label"])
        for row, p1, y in zip(dataset.features, dataset.posterior, dataset.labels):
            w.writerow([int(v) for v in row] + [repr(float(p1)), int(y)])


# ---------------------------------------------------------------------------
# IDX ingestion

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx_bytes(path):
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
            fh.seek(0)
            if head == b"\x1f\x8b":
                with gzip.open(fh) as gz:
                    return gz.read()
            return fh.read()
    except OSError as e:
        raise DataError(f"cannot read IDX file {path}: {e}") from e


def _parse_idx(path, expect_magic, expect_ndim):
    blob = _read_idx_bytes(path)
    header = 4 * (1 + expect_ndim)
    if len(blob) < header:
        raise DataError(f"{path}: truncated before header (have {len(blob)} bytes)")
    magic = struct.unpack(">i", blob[:4])[0]
    if magic != expect_magic:
        raise DataError(
            f"{path}: bad IDX magic 0x{magic:08x} at offset 0 (expected 0x{expect_magic:08x})"
        )
    dims = struct.unpack(f">{expect_ndim}i", blob[4:header])
    count = int(np.prod(dims))
    if len(blob) != header + count:
        raise DataError(
            f"{path}: payload is {len(blob) - header} bytes at offset {header}, "
            f"dimensions {dims} require {count}"
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name=None, class_count=10):
    """Load a big-endian IDX image/label pair into a LabeledDataset.

    Images flatten to N x (rows*cols) and scale to [0,1] by /255. Plain and
    gzipped files both work; corruption raises DataError naming the file and
    the offending offset.
    """
    images = _parse_idx(images_path, _IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(labels_path, _IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"count mismatch: {images_path} has {images.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if name is None:
        name = Path(images_path).stem
    return LabeledDataset(feats, labels.astype(np.int64), name, class_count)


def default_data_dir():
    """Data root: $IBLAB_DATA_DIR, else ./data, else the repo-level data dir."""
    env = os.environ.get("IBLAB_DATA_DIR")
    if env:
        return Path(env)
    cwd = Path.cwd() / "data"
    if cwd.exists():
        return cwd
    repo = Path(__file__).resolve().parents[2] / "data"
    if repo.exists():
        return repo
    return cwd


def _find_idx_file(root, stem):
    for suffix in ("", ".gz"):
        p = Path(root) / (stem + suffix)
        if p.exists():
            return p
    raise DataError(f"no IDX file {stem}[.gz] under {root}")


def load_image_dataset(dataset="mnist", split="train", data_dir=None):
    """Load mnist/fashion train or test split from <data_dir>/<dataset>/."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(data_dir) if data_dir else default_data_dir()
    sub = root / dataset
    prefix = "train" if split == "train" else "t10k"
    images = _find_idx_file(sub, f"{prefix}-images-idx3-ubyte")
    labels = _find_idx_file(sub, f"{prefix}-labels-idx1-ubyte")
    return load_idx(images, labels, name=f"{dataset}-{split}", class_count=10)


# ---------------------------------------------------------------------------
# splits and minibatches


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    ratio: tuple
    seed: int


def _parse_ratio(ratio):
    if isinstance(ratio, str):
        parts = ratio.split(":")
    else:
        parts = list(ratio)
    try:
        parts = [float(p) for p in parts]
    except (TypeError, ValueError):
        raise ConfigError(f"unparseable split ratio {ratio!r}")
    if len(parts) != 2 or any(p <= 0 for p in parts):
        raise ConfigError(f"split ratio needs two positive parts, got {ratio!r}")
    return tuple(parts)


def split(dataset_or_n, ratio=(4, 1), seed=0):
    """Seeded shuffle of [0,N) partitioned train/validation by the ratio."""
    n = dataset_or_n if isinstance(dataset_or_n, int) else dataset_or_n.n
    a, b = _parse_ratio(ratio)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * a / (a + b)))
    n_train = min(max(n_train, 1), n - 1)
    return SplitIndices(
        train=np.sort(perm[:n_train]),
        validation=np.sort(perm[n_train:]),
        ratio=(a, b),
        seed=seed,
    )


def minibatches(dataset, indices, batch_size, seed, epoch, marginal=False):
    """Yield per-epoch shuffled (features, labels) batches from an index subset.

    The shuffle is a pure function of (seed, epoch). With marginal=True each
    step yields ((xb, yb), (xm, ym)) where the second batch comes from an
    independent permutation of the same indices, sliced to the same length,
    for estimators that need samples from the product of marginals.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    indices = np.asarray(indices)
    n = indices.size
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    perm = indices[rng.permutation(n)]
    perm2 = indices[rng.permutation(n)] if marginal else None
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        take = perm[sl]
        batch = (dataset.features[take], dataset.labels[take])
        if marginal:
            take2 = perm2[sl]
            yield batch, (dataset.features[take2], dataset.labels[take2])
        else:
            yield batch
