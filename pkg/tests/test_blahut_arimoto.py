"""BA solver against brute-force simplex grids, exact-joint oracles, and the
monotone-functional property of the alternating iteration."""

import numpy as np
import pytest

from iblab.blahut_arimoto import (
    BAConfig,
    DiscreteJoint,
    ba_curve,
    ba_solve,
    kl_discrete,
    read_ba_curve_csv,
    write_ba_curve_csv,
)
from iblab.datasets import calibrate_synthetic, gen_synthetic
from iblab.errors import ConfigError, DataError

from helpers import mi_bits_from_joint


@pytest.fixture(scope="module")
def synthetic_joint():
    return DiscreteJoint.from_dataset(gen_synthetic(calibrate_synthetic()))


def brute_force_2x2(joint, beta_ba, n=2001):
    """Dense grid over the two encoder rows (a, 1-a), (b, 1-b); returns the
    MI coordinates of the global minimizer of I(X;Z) - beta * I(Z;Y)."""
    p = joint.p_xy
    px, py = joint.p_x, joint.p_y
    a = np.linspace(0, 1, n)[:, None]
    b = np.linspace(0, 1, n)[None, :]

    def xlogx(v):
        return np.where(v > 0, v * np.log2(np.maximum(v, 1e-300)), 0.0)

    pz0 = px[0] * a + px[1] * b
    hz = -(xlogx(pz0) + xlogx(1 - pz0))
    hz_x = -(px[0] * (xlogx(a) + xlogx(1 - a)) + px[1] * (xlogx(b) + xlogx(1 - b)))
    ixz = hz - hz_x
    pz0y0 = p[0, 0] * a + p[1, 0] * b
    pz0y1 = p[0, 1] * a + p[1, 1] * b
    pz1y0 = p[0, 0] * (1 - a) + p[1, 0] * (1 - b)
    pz1y1 = p[0, 1] * (1 - a) + p[1, 1] * (1 - b)
    hy = -(xlogx(py[0]) + xlogx(py[1]))
    hzy = -(xlogx(pz0y0) + xlogx(pz0y1) + xlogx(pz1y0) + xlogx(pz1y1))
    izy = hz + hy - hzy
    f = ixz - beta_ba * izy
    i, j = np.unravel_index(np.argmin(f), f.shape)
    return float(ixz[i, j]), float(izy[i, j])


def test_joint_validation():
    with pytest.raises(DataError):
        DiscreteJoint(np.array([0.5, 0.5]))
    with pytest.raises(DataError):
        DiscreteJoint(np.array([[0.6, 0.5]]))
    with pytest.raises(DataError):
        DiscreteJoint(np.array([[-0.1, 1.1]]))


def test_kl_discrete_examples():
    assert kl_discrete([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert abs(kl_discrete([1.0, 0.0], [0.5, 0.5]) - np.log(2)) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = rng.random(4) + 1e-3
        q = rng.random(4) + 1e-3
        assert kl_discrete(p / p.sum(), q / q.sum()) >= 0.0
    with pytest.raises(DataError):
        kl_discrete([1.0, 0.0], [0.0, 1.0])


def test_small_beta_reaches_trivial_solution():
    rng = np.random.default_rng(12)
    p = rng.random((2, 2))
    joint = DiscreteJoint(p / p.sum())
    _, mi_xz, mi_zy = ba_solve(joint, BAConfig(cardinality=2, beta_ba=1e-2, seed=0))
    assert mi_xz < 1e-9
    assert mi_zy < 1e-9


@pytest.mark.parametrize("beta_ba", [5.0, 20.0, 50.0])
def test_2x2_matches_brute_force_simplex_grid(beta_ba):
    rng = np.random.default_rng(12)
    p = rng.random((2, 2))
    joint = DiscreteJoint(p / p.sum())
    bx, bz = brute_force_2x2(joint, beta_ba)
    res, mx, mz = ba_solve(joint, BAConfig(cardinality=2, beta_ba=beta_ba, seed=0))
    assert res.converged
    assert abs(mx - bx) < 1e-3
    assert abs(mz - bz) < 1e-3


def test_returned_mi_matches_independent_recompute(synthetic_joint):
    res, mi_xz, mi_zy = ba_solve(
        synthetic_joint, BAConfig(cardinality=10, beta_ba=5.0, seed=0)
    )
    # joint p(x, z) from the tables, MI by the double-loop oracle
    pxz = synthetic_joint.p_x[:, None] * res.p_z_given_x
    assert abs(mi_bits_from_joint(pxz) - mi_xz) < 1e-10
    pzy = res.p_z[:, None] * res.p_y_given_z
    assert abs(mi_bits_from_joint(pzy / pzy.sum()) - mi_zy) < 1e-10
    # encoder rows and consistency invariants
    assert np.allclose(res.p_z_given_x.sum(axis=1), 1.0, atol=1e-10)
    assert np.allclose(res.p_y_given_z.sum(axis=1), 1.0, atol=1e-10)
    assert np.allclose(res.p_z, synthetic_joint.p_x @ res.p_z_given_x, atol=1e-10)


def test_iteration_functional_is_nonincreasing(synthetic_joint):
    for beta_ba in [2.0, 5.0, 20.0]:
        res, _, _ = ba_solve(
            synthetic_joint, BAConfig(cardinality=10, beta_ba=beta_ba, seed=1)
        )
        trace = np.array(res.functional_trace_bits)
        assert len(trace) >= 2
        assert np.max(np.diff(trace)) <= 1e-9


def test_synthetic_curve_properties(synthetic_joint):
    grid = np.geomspace(0.5, 100.0, 16)
    pts = ba_curve(synthetic_joint, 10, grid, seed=0)
    assert all(p.converged for p in pts)
    xz = np.array([p.mi_xz_bits for p in pts])
    zy = np.array([p.mi_zy_bits for p in pts])
    assert np.all(np.diff(xz) >= -1e-6)
    assert np.all(np.diff(zy) >= -1e-6)
    # concavity in the information plane on deduplicated points
    keep = np.concatenate([[True], np.diff(xz) > 1e-9])
    x2, y2 = xz[keep], zy[keep]
    if x2.size >= 3:
        slopes = np.diff(y2) / np.diff(x2)
        assert np.all(np.diff(slopes) <= 1e-6)
    hy = 1.0  # binary labels
    mi_xy = synthetic_joint.mi_xy_bits()
    for p in pts:
        assert p.mi_zy_bits <= min(p.mi_xz_bits, hy) + 1e-9
        assert p.mi_zy_bits <= mi_xy + 1e-9
    assert pts[-1].mi_zy_bits >= 0.95 * mi_xy
    assert pts[-1].beta_lagrangian == 1.0 / pts[-1].beta_ba


def test_cluster_support_nondecreasing_on_warm_curve(synthetic_joint):
    grid = np.geomspace(0.5, 100.0, 12)
    prev_enc = None
    supports = []
    for beta_ba in grid:
        res, _, _ = ba_solve(
            synthetic_joint,
            BAConfig(cardinality=10, beta_ba=beta_ba, seed=0),
            init_encoder=prev_enc,
        )
        prev_enc = res.p_z_given_x
        supports.append(int((res.p_z > 1e-6).sum()))
    assert all(b >= a for a, b in zip(supports, supports[1:]))


def test_warm_and_cold_start_options(synthetic_joint):
    grid = [5.0, 10.0]
    warm = ba_curve(synthetic_joint, 10, grid, seed=0, warm_start=True)
    cold = ba_curve(synthetic_joint, 10, grid, seed=0, warm_start=False)
    for a, b in zip(warm, cold):
        assert abs(a.mi_zy_bits - b.mi_zy_bits) < 0.05


def test_curve_grid_validation(synthetic_joint):
    with pytest.raises(ConfigError):
        ba_curve(synthetic_joint, 10, [])
    with pytest.raises(ConfigError):
        ba_curve(synthetic_joint, 10, [2.0, 1.0])
    with pytest.raises(ConfigError):
        ba_curve(synthetic_joint, 10, [-1.0, 1.0])
    with pytest.raises(ConfigError):
        BAConfig(cardinality=0, beta_ba=1.0)
    with pytest.raises(ConfigError):
        BAConfig(cardinality=2, beta_ba=0.0)


def test_curve_csv_round_trip(tmp_path, synthetic_joint):
    pts = ba_curve(synthetic_joint, 10, [1.0, 10.0], seed=0)
    path = tmp_path / "curve.csv"
    write_ba_curve_csv(pts, path)
    back = read_ba_curve_csv(path)
    assert back == list(pts)
    with pytest.raises(DataError):
        (tmp_path / "junk.csv").write_text("a,b\n1,2\n")
        read_ba_curve_csv(tmp_path / "junk.csv")


def test_nonconvergence_flagged(synthetic_joint):
    res, _, _ = ba_solve(
        synthetic_joint, BAConfig(cardinality=10, beta_ba=5.0, max_iter=2, seed=0)
    )
    assert not res.converged
    assert res.iterations == 2
