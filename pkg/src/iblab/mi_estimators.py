"""Mutual information estimators: KDE pairwise bound, binning, trained
Donsker-Varadhan lower bound, and closed forms for oracles.

All public estimates report bits. Raw values (possibly negative, and in
nats where natural) ride along in MIEstimate.params so audits can see
what the clamps did.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, init_mlp_params, linear, logsumexp
from .errors import ConfigError, DataError, InstabilityError
from .infotheory import LN2, label_entropy_bits, mi_bits_from_joint

__all__ = [
    "KDEConfig", "MIEstimate", "StatisticNet", "kde_mi_xz", "kde_mi_zy",
    "binning_mi", "dv_bound", "dv_train_estimate", "gaussian_mi_closed_form",
    "label_entropy", "write_estimates_csv",
]


@dataclass
class MIEstimate:
    value_bits: float
    method: str
    params: dict = field(default_factory=dict)


@dataclass
class KDEConfig:
    """Gaussian-mixture pairwise bound bandwidth policy."""

    bandwidth_mode: str = "scaled"   # "scaled": sigma = scale * median pairwise distance
    scale: float = 0.1
    sigma: float = 1.0               # used when bandwidth_mode == "fixed"
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if self.bandwidth_mode not in ("scaled", "fixed"):
            raise ConfigError(f"unknown bandwidth mode {self.bandwidth_mode!r}")
        if not self.scale > 0:
            raise ConfigError(f"bandwidth scale must be positive, got {self.scale}")
        if self.bandwidth_mode == "fixed" and not self.sigma > 0:
            raise ConfigError(f"fixed sigma must be positive, got {self.sigma}")


def _pairwise_sq_dists(z):
    sq = (z * z).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    return np.maximum(d2, 0.0)


def _resolve_sigma(d2, config):
    warnings = []
    if config.bandwidth_mode == "fixed":
        return float(config.sigma), warnings
    n = d2.shape[0]
    off = d2[~np.eye(n, dtype=bool)]
    sigma = config.scale * float(np.sqrt(np.median(off))) if off.size else 0.0
    if sigma < config.sigma_floor:
        warnings.append(
            f"median-distance bandwidth {sigma:.3g} below floor; using {config.sigma_floor}"
        )
        sigma = config.sigma_floor
    return sigma, warnings


def _mixture_information_nats(d2, sigma):
    """-(1/N) sum_i log (1/N) sum_j exp(-d2_ij / (2 sigma^2)), in nats.

    The diagonal keeps every inner mean >= 1/N, so the log never sees zero.
    """
    n = d2.shape[0]
    k = np.exp(-d2 / (2.0 * sigma * sigma))
    return float(-np.mean(np.log(k.mean(axis=1))))


def kde_mi_xz(z, config=None):
    """KDE estimate of MI between inputs and their representations.

    Treats the N rows as N mixture components; the estimate is the mixture
    cross-entropy bound, saturating at log2(N) bits for well-separated rows.
    """
    config = config or KDEConfig()
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise DataError(f"need an N x d matrix with N >= 2, got shape {z.shape}")
    d2 = _pairwise_sq_dists(z)
    sigma, warnings = _resolve_sigma(d2, config)
    raw_nats = _mixture_information_nats(d2, sigma)
    raw_bits = raw_nats / LN2
    return MIEstimate(
        value_bits=max(raw_bits, 0.0),
        method="kde",
        params={"sigma": sigma, "raw_bits": raw_bits, "n": z.shape[0],
                "warnings": warnings},
    )


def kde_mi_zy(z, labels, config=None):
    """KDE MI between representations and labels.

    I(Z;Y) = I-hat(X;Z) - sum_c (N_c/N) H-hat_c with the per-class mixture
    entropies computed at the same global bandwidth; clamped to [0, H(Y)].
    """
    config = config or KDEConfig()
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] < 2:
        raise DataError(f"need an N x d matrix with N >= 2, got shape {z.shape}")
    if labels.shape != (z.shape[0],):
        raise DataError(f"labels shape {labels.shape} does not match {z.shape[0]} rows")
    n = z.shape[0]
    d2 = _pairwise_sq_dists(z)
    sigma, warnings = _resolve_sigma(d2, config)
    total_nats = _mixture_information_nats(d2, sigma)
    cond_nats = 0.0
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        if rows.size < 2:
            warnings.append(f"class {c} has {rows.size} sample(s); contributes 0")
            continue
        sub = d2[np.ix_(rows, rows)]
        cond_nats += (rows.size / n) * _mixture_information_nats(sub, sigma)
    raw_bits = (total_nats - cond_nats) / LN2
    hy = label_entropy_bits(labels)
    return MIEstimate(
        value_bits=float(np.clip(raw_bits, 0.0, hy)),
        method="kde",
        params={"sigma": sigma, "raw_bits": raw_bits, "label_entropy_bits": hy,
                "n": n, "warnings": warnings},
    )


def _bin_columns(a, bins):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    out = np.empty(a.shape, dtype=np.int64)
    for j in range(a.shape[1]):
        col = a[:, j]
        lo, hi = col.min(), col.max()
        if hi <= lo:
            out[:, j] = 0
            continue
        edges = np.linspace(lo, hi, bins + 1)
        out[:, j] = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, bins - 1)
    return out


def _row_codes(binned):
    _, codes = np.unique(binned, axis=0, return_inverse=True)
    return codes


def binning_mi(a, b, bins=30):
    """Plug-in MI after per-dimension uniform binning over the observed range."""
    if bins < 2:
        raise ConfigError(f"bins must be >= 2, got {bins}")
    a_codes = _row_codes(_bin_columns(a, bins))
    b = np.asarray(b)
    if np.issubdtype(b.dtype, np.integer) and b.ndim == 1:
        b_codes = b.astype(np.int64)
        b_codes = b_codes - b_codes.min()
    else:
        b_codes = _row_codes(_bin_columns(b, bins))
    if a_codes.shape[0] != b_codes.shape[0]:
        raise DataError(
            f"row mismatch: {a_codes.shape[0]} vs {b_codes.shape[0]} samples"
        )
    n = a_codes.shape[0]
    joint = np.zeros((a_codes.max() + 1, b_codes.max() + 1))
    np.add.at(joint, (a_codes, b_codes), 1.0)
    value = mi_bits_from_joint(joint / n, validate=False)
    return MIEstimate(value_bits=max(value, 0.0), method="binning",
                      params={"bins": bins, "n": n, "raw_bits": value})


def gaussian_mi_closed_form(rho):
    """MI of a bivariate normal with correlation rho: -0.5 ln(1-rho^2)."""
    rho = float(rho)
    if abs(rho) >= 1.0:
        raise ConfigError(f"|rho| must be < 1, got {rho}")
    nats = -0.5 * np.log(1.0 - rho * rho)
    return MIEstimate(value_bits=nats / LN2, method="exact", params={"rho": rho, "nats": nats})


def label_entropy(labels):
    """Plug-in entropy of the empirical label distribution, bits."""
    return label_entropy_bits(labels)


class StatisticNet:
    """MLP statistic T(x, z) -> scalar for the Donsker-Varadhan bound."""

    def __init__(self, x_dim, z_dim, hidden=(128, 64), seed=0):
        widths = [int(x_dim) + int(z_dim), *[int(h) for h in hidden], 1]
        self.x_dim = int(x_dim)
        self.z_dim = int(z_dim)
        self.store = init_mlp_params(widths, seed=seed, final_glorot=True)
        self.widths = widths

    def scores(self, x, z):
        """Batch of T values as a graph node; x, z are Tensors or arrays."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        z = z if isinstance(z, Tensor) else Tensor(z)
        h = concat([x, z], axis=1)
        last = len(self.widths) - 2
        for i in range(last + 1):
            h = linear(h, self.store[f"w{i}"], self.store[f"b{i}"])
            if i < last:
                h = h.relu()
        return h


def dv_bound(net, x_paired, z_paired, x_marginal, z_marginal):
    """Donsker-Varadhan lower bound as a scalar graph node, in nats.

    mean T over paired rows minus log mean exp T over marginal rows; the
    log-mean-exp is fused for stability.
    """
    t_p = net.scores(x_paired, z_paired)
    t_m = net.scores(x_marginal, z_marginal)
    m = t_m.data.shape[0]
    return t_p.mean() - (logsumexp(t_m) - float(np.log(m)))


def dv_train_estimate(x, z, net=None, steps=1500, batch=512, lr=5e-4, seed=0,
                      last_fraction=0.1):
    """Train the statistic net by Adam ascent; average the trailing bounds.

    Returns bits; params carry the nats value and the trace tail. A bound
    exceeding log N + 1 is a divergence (the finite-sample ceiling is log
    of the marginal-sample count) and raises InstabilityError.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if x.shape[0] == 1 and x.shape[1] > 1 and z.shape[0] > 1:
        x = x.T
    if z.shape[0] == 1 and z.shape[1] > 1 and x.shape[0] > 1:
        z = z.T
    n = x.shape[0]
    if z.shape[0] != n:
        raise DataError(f"X and Z must be row-aligned, got {x.shape[0]} vs {z.shape[0]}")
    if net is None:
        net = StatisticNet(x.shape[1], z.shape[1], seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD7]))
    batch = min(batch, n)
    ceiling = np.log(n) + 1.0

    trace = []
    for _ in range(int(steps)):
        idx = rng.integers(0, n, size=batch)
        midx = rng.integers(0, n, size=batch)
        bound = dv_bound(net, x[idx], z[idx], x[idx], z[midx])
        value = float(bound.data)
        if value > ceiling:
            raise InstabilityError(
                f"DV bound {value:.3f} exceeded ceiling log N + 1 = {ceiling:.3f}; "
                "reduce the learning rate"
            )
        trace.append(value)
        net.store.zero_grad()
        (-bound).backward()
        net.store.adam_step(lr=lr)

    tail = trace[-max(1, int(len(trace) * last_fraction)):]
    nats = float(np.mean(tail))
    return MIEstimate(
        value_bits=max(nats, 0.0) / LN2,
        method="dv",
        params={"nats": nats, "steps": int(steps), "batch": batch, "lr": lr,
                "seed": seed, "trace_tail": tail[-20:]},
    )


ESTIMATES_SCHEMA = "mi-estimates-v1"


def write_estimates_csv(rows, path):
    """rows: iterable of dicts with dataset, model_id, layer, method,
    params_digest, value_bits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# schema={ESTIMATES_SCHEMA}"])
        w.writerow(["dataset", "model_id", "layer", "method", "params_digest", "value_bits"])
        for r in rows:
            w.writerow([r["dataset"], r["model_id"], r["layer"], r["method"],
                        r["params_digest"], repr(float(r["value_bits"]))])
