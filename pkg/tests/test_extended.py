import math
from dataclasses import replace

import numpy as np
import pytest
from conftest import H_POS, random_mixture

from rgmphd.errors import TooLarge
from rgmphd.extended import (CELL_PRUNE_EPS, ExtendedTargetModel, Partition, cell_likelihood, default_thresholds,
                             distance_partition, enumerate_partitions, extended_update)
from rgmphd.gm import GaussianComponent, GaussianMixture, gaussian_density
from rgmphd.models import ClutterModel, MeasurementModel
from rgmphd.robust import RobustnessState, robust_update

BELL = [1, 1, 2, 5, 15, 52, 203]
G_W_ORACLE = 0.0270670566473225384      # e^-2 * 2 * 0.1


@pytest.mark.parametrize("n", range(7))
def test_partition_counts_are_bell_numbers(n):
    parts = enumerate_partitions(np.zeros((n, 2)))
    assert len(parts) == BELL[n]
    assert len({p.cells for p in parts}) == BELL[n]
    for p in parts:
        assert p.covered() == frozenset(range(n))


def test_enumeration_limit():
    enumerate_partitions(np.zeros((8, 2)))
    with pytest.raises(TooLarge):
        enumerate_partitions(np.zeros((9, 2)))


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition(((0, 1), (1, 2)))
    with pytest.raises(ValueError):
        Partition(((),))


def test_partition_credibility_is_product():
    p = Partition(((0, 2), (1,)))
    w = np.array([0.2, 0.3, 0.5])
    assert p.credibilities(w) == (0.2 * 0.5, 0.3)


def test_distance_partition_two_points():
    Z = np.array([[0.0, 0.0], [1.0, 0.0]])
    parts = distance_partition(Z, [0.5, 2.0])
    assert [p.cells for p in parts] == [((0,), (1,)), ((0, 1),)]


def test_distance_partition_no_thresholds():
    parts = distance_partition(np.random.default_rng(0).normal(size=(5, 2)), [])
    assert [p.cells for p in parts] == [((0,), (1,), (2,), (3,), (4,))]


def test_distance_partition_requires_sorted_thresholds():
    with pytest.raises(ValueError):
        distance_partition(np.zeros((2, 2)), [2.0, 1.0])


def test_distance_partition_contains_true_clusters():
    rng = np.random.default_rng(1)
    a = rng.normal([0, 0], 1.0, (3, 2))
    b = rng.normal([100, 0], 1.0, (3, 2))
    Z = np.vstack([a, b])
    truth = ((0, 1, 2), (3, 4, 5))
    # oracle: among all 203 partitions, the one maximising a two-cluster Gaussian likelihood
    def score(p):
        s = 0.0
        for c in p.cells:
            pts = Z[list(c)]
            s += -0.5 * np.sum((pts - pts.mean(0)) ** 2) - 10.0
        return s
    best = max(enumerate_partitions(Z), key=score)
    assert best.cells == truth
    assert truth in [p.cells for p in distance_partition(Z, [0.5, 1, 2, 4, 20])]


def test_default_thresholds():
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), H=H_POS)
    np.testing.assert_allclose(default_thresholds(mm), np.array([0.5, 1, 2, 4]) * math.sqrt(20.0))


# ---------------------------------------------------------------- cell likelihood

def _unit_q_component(q=0.1, R=1.0):
    S = 1.0 / (2 * math.pi * q * q)
    return GaussianComponent(1.0, np.array([0.0]), np.array([[S - R]])), \
        MeasurementModel("linear", [[R]], 0.9, H=[[1.0]])


def test_cell_likelihood_oracle():
    comp, mm = _unit_q_component()
    assert cell_likelihood([[0.0]], comp, ExtendedTargetModel(2.0), mm) == pytest.approx(G_W_ORACLE, rel=1e-13)


def test_cell_likelihood_zero_rate():
    comp, mm = _unit_q_component()
    assert cell_likelihood([[0.0]], comp, ExtendedTargetModel(0.0), mm) == 0.0


def test_cell_likelihood_matches_joint_gaussian():
    mm = MeasurementModel("linear", np.diag([10.0, 4.0]), H=H_POS)
    rng = np.random.default_rng(2)
    m = rng.normal(0, 5, 4)
    A = rng.normal(size=(4, 4))
    P = A @ A.T + 4 * np.eye(4)
    W = rng.normal(0, 5, (2, 2))
    HPH = H_POS @ P @ H_POS.T
    joint_cov = np.block([[HPH + mm.R, HPH], [HPH, HPH + mm.R]])
    joint = gaussian_density(W.reshape(-1), np.tile(H_POS @ m, 2), joint_cov)
    lam = 4.0
    expected = math.exp(-lam) * lam**2 / 2 * joint
    got = cell_likelihood(W, GaussianComponent(1.0, m, P), ExtendedTargetModel(lam), mm)
    assert got == pytest.approx(expected, rel=1e-11)
    # cell ordering does not matter
    assert cell_likelihood(W[::-1], GaussianComponent(1.0, m, P), ExtendedTargetModel(lam), mm) == \
        pytest.approx(got, rel=1e-11)


# ---------------------------------------------------------------- update

def _setup():
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.9, H=H_POS)
    clutter = ClutterModel(10.0, [-1000, -1000], [1000, 1000])
    return mm, clutter


def test_extended_empty_scan_exact():
    mm, clutter = _setup()
    pred = random_mixture(np.random.default_rng(3), 4)
    rs = replace(RobustnessState.pinned(), w_global=0.7)
    out = extended_update(pred, np.zeros((0, 2)), [], ExtendedTargetModel(), mm, clutter, rs)
    assert np.array_equal(out.weights, (1 - 0.7 * 0.9) * pred.weights)
    assert np.array_equal(out.means, pred.means) and np.array_equal(out.covs, pred.covs)


def test_extended_singletons_reduce_to_point_update():
    """All-singleton cells with the Poisson factor folded into p_D give the point-target update."""
    mm, clutter = _setup()
    lam = 1.0
    pred = GaussianMixture([0.8], [[10.0, -5.0, 1.0, 2.0]], [np.diag([20.0, 30.0, 4.0, 5.0])])
    Z = np.array([[13.0, -1.0]])
    rs = RobustnessState.pinned()
    ext = extended_update(pred, Z, [Partition(((0,),))], ExtendedTargetModel(lam), mm, clutter, rs)
    mm_eff = replace(mm, p_D=mm.p_D * lam * math.exp(-lam))
    pt = robust_update(pred, Z, mm_eff, clutter, rs)
    np.testing.assert_allclose(ext.weights[1:], pt.weights[1:], rtol=1e-12)
    np.testing.assert_allclose(ext.means[1:], pt.means[1:], rtol=1e-12)
    np.testing.assert_allclose(ext.covs[1:], pt.covs[1:], rtol=1e-12)


def test_extended_prunes_low_credibility_cells():
    mm, clutter = _setup()
    pred = random_mixture(np.random.default_rng(4), 2, spread=20)
    Z = np.array([[0.0, 0.0], [5.0, 5.0]])
    parts = [Partition(((0,), (1,)))]
    rs = replace(RobustnessState.pinned(), w_meas=np.array([1e-7, 1 - 1e-7]))
    out = extended_update(pred, Z, parts, ExtendedTargetModel(), mm, clutter, rs)
    assert 1e-7 < CELL_PRUNE_EPS
    # missed + one retained cell
    assert len(out) == 2 * 2
    rs = replace(rs, w_meas=np.array([0.5, 0.5]))
    assert len(extended_update(pred, Z, parts, ExtendedTargetModel(), mm, clutter, rs)) == 2 * 3


def test_extended_weights_nonnegative():
    mm, clutter = _setup()
    rng = np.random.default_rng(5)
    pred = random_mixture(rng, 5, spread=50)
    Z = rng.uniform(-60, 60, (5, 2))
    out = extended_update(pred, Z, enumerate_partitions(Z), ExtendedTargetModel(), mm, clutter,
                          RobustnessState.pinned())
    assert np.all(out.weights >= 0) and np.all(np.isfinite(out.weights))
