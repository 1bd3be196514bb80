"""Blahut-Arimoto self-consistent iteration for discrete information bottleneck.

Computes the optimal compression/prediction frontier exactly for enumerable
joints. The multiplier here (beta_ba) weights the prediction term: the
encoder update is p(z|x) proportional to p(z) exp(-beta_ba * d(x,z)) with
d the KL distortion to the decoder. The Lagrangian-side convention used by
the trainers is the reciprocal, beta = 1/beta_ba; curve exports carry both
so the two axes can never be silently swapped.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .infotheory import LN2, kl_bits, mi_bits_from_joint


class DiscreteJoint:
    """Validated joint table p(x, y) over finite alphabets."""

    def __init__(self, p_xy):
        p = np.asarray(p_xy, dtype=np.float64)
        if p.ndim != 2:
            raise DataError(f"joint must be a 2-D table, got shape {p.shape}")
        if np.any(p < 0):
            raise DataError("joint has negative entries")
        if abs(p.sum() - 1.0) > 1e-12:
            raise DataError(f"joint sums to {p.sum()!r}, not 1 within 1e-12")
        self.p_xy = p
        self.nx, self.ny = p.shape
        self.p_x = p.sum(axis=1)
        self.p_y = p.sum(axis=0)
        # conditional label law; rows with zero mass never contribute and get
        # a uniform placeholder so downstream logs stay finite
        safe = np.where(self.p_x > 0, self.p_x, 1.0)[:, None]
        self.p_y_given_x = np.where(self.p_x[:, None] > 0, p / safe, 1.0 / self.ny)

    @classmethod
    def from_dataset(cls, dataset):
        if dataset.exact_joint is None:
            raise DataError(f"dataset {dataset.name} has no exact joint table")
        return cls(dataset.exact_joint)

    def mi_xy_bits(self):
        return mi_bits_from_joint(self.p_xy, validate=False)


@dataclass
class BAConfig:
    cardinality: int = 10
    beta_ba: float = 1.0
    tol: float = 1e-9
    max_iter: int = 5000
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.cardinality < 1:
            raise ConfigError(f"cardinality must be >= 1, got {self.cardinality}")
        if not self.beta_ba > 0:
            raise ConfigError(f"beta_ba must be positive, got {self.beta_ba}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class BAEncoder:
    """Converged (or best-effort) solution tables plus iteration diagnostics."""

    p_z_given_x: np.ndarray
    p_z: np.ndarray
    p_y_given_z: np.ndarray
    converged: bool
    iterations: int
    functional_trace_bits: list = field(default_factory=list, repr=False)


def kl_discrete(p, q):
    """KL(p || q) in nats between two probability vectors."""
    return kl_bits(p, q) * LN2


def _decoder_tables(joint, enc):
    """Marginal p(z) and smoothed decoder p(y|z) consistent with the encoder."""
    pz = joint.p_x @ enc
    # p(z, y) = sum_x p(x) p(z|x) p(y|x)
    pzy = enc.T @ (joint.p_y_given_x * joint.p_x[:, None])
    safe = np.where(pz > 0, pz, 1.0)[:, None]
    pyz = np.where(pz[:, None] > 0, pzy / safe, 1.0 / joint.ny)
    # epsilon floor keeps the KL distortion finite when a cluster starves
    pyz = pyz + 1e-12
    pyz /= pyz.sum(axis=1, keepdims=True)
    return pz, pyz


def _mi_terms_bits(joint, enc, pz, pyz):
    """Exact MI(X;Z) and MI(Z;Y) from the current tables, in bits."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(enc > 0, enc / np.where(pz > 0, pz, 1.0)[None, :], 1.0)
        mi_xz = float((joint.p_x[:, None] * np.where(enc > 0, enc * np.log2(ratio), 0.0)).sum())
    joint_zy = pz[:, None] * pyz
    joint_zy = joint_zy / joint_zy.sum()
    mi_zy = mi_bits_from_joint(joint_zy, validate=False)
    # exact MI is nonnegative; strip float-rounding negatives near machine zero
    return max(mi_xz, 0.0), max(mi_zy, 0.0)


def ba_solve(joint, config, init_encoder=None):
    """Alternate encoder and decoder updates until the encoder stops moving.

    Returns (BAEncoder, mi_xz_bits, mi_zy_bits). Non-convergence within
    max_iter returns the final iterate with converged=False rather than
    raising; the curve layer propagates the flag.
    """
    if not isinstance(joint, DiscreteJoint):
        joint = DiscreteJoint(joint)
    nz = config.cardinality
    if init_encoder is not None:
        enc = np.asarray(init_encoder, dtype=np.float64).copy()
        if enc.shape != (joint.nx, nz):
            raise ConfigError(f"warm-start encoder shape {enc.shape} != {(joint.nx, nz)}")
    else:
        rng = np.random.default_rng(config.seed)
        noise = config.init_scale * rng.standard_normal((joint.nx, nz))
        noise -= noise.max(axis=1, keepdims=True)
        enc = np.exp(noise)
        enc /= enc.sum(axis=1, keepdims=True)

    pyx = joint.p_y_given_x
    with np.errstate(divide="ignore", invalid="ignore"):
        self_term = np.where(pyx > 0, pyx * np.log(pyx), 0.0).sum(axis=1)  # sum_y p log p

    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        pz, pyz = _decoder_tables(joint, enc)
        mi_xz, mi_zy = _mi_terms_bits(joint, enc, pz, pyz)
        trace.append(mi_xz - config.beta_ba * mi_zy)
        # d(x,z) = KL(p(y|x) || p(y|z)) in nats, vectorized over the grid
        d = self_term[:, None] - pyx @ np.log(pyz).T
        with np.errstate(divide="ignore"):
            logits = np.where(pz > 0, np.log(pz), -np.inf)[None, :] - config.beta_ba * d
        logits -= logits.max(axis=1, keepdims=True)
        new_enc = np.exp(logits)
        new_enc /= new_enc.sum(axis=1, keepdims=True)
        delta = np.max(np.abs(new_enc - enc))
        enc = new_enc
        if delta < config.tol:
            converged = True
            break

    pz, pyz = _decoder_tables(joint, enc)
    mi_xz, mi_zy = _mi_terms_bits(joint, enc, pz, pyz)
    trace.append(mi_xz - config.beta_ba * mi_zy)
    result = BAEncoder(
        p_z_given_x=enc,
        p_z=pz,
        p_y_given_z=pyz,
        converged=converged,
        iterations=iterations,
        functional_trace_bits=trace,
    )
    return result, mi_xz, mi_zy


@dataclass(frozen=True)
class BACurvePoint:
    beta_ba: float
    beta_lagrangian: float
    mi_xz_bits: float
    mi_zy_bits: float
    converged: bool
    iterations: int


def ba_curve(joint, cardinality, multiplier_grid, tol=1e-9, max_iter=5000,
             seed=0, warm_start=True):
    """Solve along an ascending beta_ba grid, warm-starting each point.

    Warm starts track one solution branch smoothly along the frontier;
    warm_start=False re-seeds every point for local-minimum detection.
    """
    grid = [float(b) for b in multiplier_grid]
    if not grid:
        raise ConfigError("multiplier grid is empty")
    if any(b <= 0 for b in grid):
        raise ConfigError("multiplier grid must be positive")
    if any(b2 < b1 for b1, b2 in zip(grid, grid[1:])):
        raise ConfigError("multiplier grid must be ascending")
    if not isinstance(joint, DiscreteJoint):
        joint = DiscreteJoint(joint)

    points = []
    prev_enc = None
    for beta_ba in grid:
        cfg = BAConfig(cardinality=cardinality, beta_ba=beta_ba, tol=tol,
                       max_iter=max_iter, seed=seed)
        init = prev_enc if warm_start else None
        result, mi_xz, mi_zy = ba_solve(joint, cfg, init_encoder=init)
        prev_enc = result.p_z_given_x
        points.append(BACurvePoint(
            beta_ba=beta_ba,
            beta_lagrangian=1.0 / beta_ba,
            mi_xz_bits=mi_xz,
            mi_zy_bits=mi_zy,
            converged=result.converged,
            iterations=result.iterations,
        ))
    return points


BA_CURVE_SCHEMA = "ba-curve-v1"


def write_ba_curve_csv(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# schema={BA_CURVE_SCHEMA}"])
        w.writerow(["beta_ba", "beta_lagrangian", "mi_xz_bits", "mi_zy_bits",
                    "converged", "iterations"])
        for p in points:
            w.writerow([repr(p.beta_ba), repr(p.beta_lagrangian), repr(p.mi_xz_bits),
                        repr(p.mi_zy_bits), int(p.converged), p.iterations])


def read_ba_curve_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0][0] != "beta_ba":
        raise DataError(f"{path} is not a {BA_CURVE_SCHEMA} CSV")
    return [BACurvePoint(float(r[0]), float(r[1]), float(r[2]), float(r[3]),
                         bool(int(r[4])), int(r[5])) for r in rows[1:]]
