"""Extended-target robust PHD update over measurement-set partitions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .errors import TooLarge
from .gm import GaussianComponent, GaussianMixture
from .models import ClutterModel, MeasurementModel
from .phd import gaussian_loglik, innovations, kalman_terms, mahalanobis_sq
from .robust import RobustnessState

MAX_ENUMERATION = 8
CELL_PRUNE_EPS = 1e-6


@dataclass(frozen=True)
class Partition:
    """Disjoint, nonempty cells of measurement indices."""

    cells: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for cell in self.cells:
            if not cell:
                raise ValueError("partition cells must be nonempty")
            if seen.intersection(cell):
                raise ValueError("partition cells must be disjoint")
            seen.update(cell)

    def credibilities(self, w_meas) -> tuple[float, ...]:
        w = np.asarray(w_meas, dtype=float)
        return tuple(math.prod(w[list(c)].tolist()) for c in self.cells)

    def covered(self) -> frozenset:
        return frozenset(i for c in self.cells for i in c)


@dataclass(frozen=True)
class ExtendedTargetModel:
    """Poisson number of measurements per target with constant rate."""

    rate: float = 4.0

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")


def _set_partitions(items: list[int]) -> Iterator[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in _set_partitions(rest):
        yield [[first]] + sub
        for i in range(len(sub)):
            yield sub[:i] + [[first] + sub[i]] + sub[i + 1:]


def enumerate_partitions(Z) -> list[Partition]:
    """All set partitions of the measurement indices (Bell(|Z|) of them)."""
    n = len(Z)
    if n > MAX_ENUMERATION:
        raise TooLarge(f"{n} measurements: exhaustive enumeration is limited to {MAX_ENUMERATION}; "
                       "use distance_partition")
    out = []
    for parts in _set_partitions(list(range(n))):
        cells = sorted(tuple(sorted(c)) for c in parts)
        out.append(Partition(tuple(cells)))
    return out


def distance_partition(Z, thresholds: Sequence[float]) -> list[Partition]:
    """Single-linkage partitions of Z, one per distance threshold, plus all-singletons."""
    Z = np.asarray(Z, dtype=float)
    n = len(Z)
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    singletons = Partition(tuple((i,) for i in range(n)))
    out = [singletons]
    if n < 2:
        return out
    tree = linkage(Z.reshape(n, -1), method="single", metric="euclidean")
    seen = {singletons.cells}
    for thr in thresholds:
        labels = fcluster(tree, t=thr, criterion="distance")
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        cells = tuple(sorted(tuple(g) for g in groups.values()))
        if cells not in seen:
            seen.add(cells)
            out.append(Partition(cells))
    return out


def default_thresholds(mm: MeasurementModel) -> list[float]:
    s = math.sqrt(float(np.trace(mm.R)))
    return [0.5 * s, 1.0 * s, 2.0 * s, 4.0 * s]


def _condition_on_cell(cell_Z: np.ndarray, mix: GaussianMixture, mm: MeasurementModel):
    """Sequentially condition every component on each measurement of a cell.

    Returns the summed log predictive likelihoods (J,), posterior means and covariances.
    """
    log_l = np.zeros(len(mix))
    cur = mix
    for z in cell_Z:
        terms = kalman_terms(cur, mm)
        nu = innovations(z[None, :], terms, mm)
        log_l += gaussian_loglik(mahalanobis_sq(nu, terms), terms)[:, 0]
        means = cur.means + np.einsum("jxz,jz->jx", terms.gain, nu[:, 0, :])
        cur = GaussianMixture(cur.weights, means, terms.post_covs, cur.k)
    return log_l, cur.means, cur.covs


def _log_poisson_factor(rate: float, size: int) -> float:
    if rate == 0.0:
        return -math.inf
    return -rate + size * math.log(rate) - math.lgamma(size + 1)


def cell_likelihood(W, component: GaussianComponent, etm: ExtendedTargetModel, mm: MeasurementModel) -> float:
    """Integral of g_W(x) against the component's Gaussian."""
    W = np.asarray(W, dtype=float).reshape(-1, mm.dim)
    if len(W) == 0:
        raise ValueError("cell must be nonempty")
    mix = GaussianMixture([1.0], np.asarray(component.mean, dtype=float)[None, :],
                          np.asarray(component.cov, dtype=float)[None, :, :])
    log_l, _, _ = _condition_on_cell(W, mix, mm)
    return math.exp(_log_poisson_factor(etm.rate, len(W)) + float(log_l[0]))


def extended_update(pred: GaussianMixture, Z, partitions: Sequence[Partition], etm: ExtendedTargetModel,
                    mm: MeasurementModel, clutter: ClutterModel, rs: RobustnessState,
                    prune_eps: float = CELL_PRUNE_EPS) -> GaussianMixture:
    """Missed term plus one credibility-weighted term per retained cell of every partition."""
    Z = np.asarray(Z, dtype=float).reshape(-1, mm.dim)
    missed = GaussianMixture((1.0 - rs.w_global * mm.p_D) * pred.weights, pred.means, pred.covs, pred.k)
    if len(Z) == 0 or len(pred) == 0:
        return missed
    wz = rs.credibilities(len(Z))
    kappa = clutter.intensity_batch(Z)
    parts = [missed]
    cache: dict[tuple[int, ...], tuple] = {}
    with np.errstate(divide="ignore"):
        log_w = np.log(pred.weights)
        pd_eff = rs.w_global * mm.p_D
        log_pd = math.log(pd_eff) if pd_eff > 0 else -math.inf
    for partition in partitions:
        for cell, w_W in zip(partition.cells, partition.credibilities(wz)):
            if w_W < prune_eps:
                continue
            if cell not in cache:
                cache[cell] = _condition_on_cell(Z[list(cell)], pred, mm)
            log_l, means, covs = cache[cell]
            with np.errstate(divide="ignore"):
                log_num = (math.log(w_W) if w_W > 0 else -math.inf) + log_pd + log_w \
                    + _log_poisson_factor(etm.rate, len(cell)) + log_l
                log_kappa = float(np.sum(np.log(kappa[list(cell)])))
                m = np.max(log_num)
                if np.isfinite(m):
                    log_sum = m + math.log(np.sum(np.exp(log_num - m)))
                else:
                    log_sum = -math.inf
                log_den = np.logaddexp(log_kappa, log_sum)
                w = np.exp(log_num - log_den) if np.isfinite(log_den) else np.zeros(len(pred))
            parts.append(GaussianMixture(np.where(np.isfinite(w), w, 0.0), means, covs, pred.k))
    return GaussianMixture.concat(parts, dim=pred.dim, k=pred.k)


def make_extended_update(etm: ExtendedTargetModel, thresholds: Sequence[float] | None = None,
                         prune_eps: float = CELL_PRUNE_EPS):
    """Adapter so the robust filter step can run the extended-target update."""

    def _update(pred, Z, models, rs, terms=None):
        thr = default_thresholds(models.measurement) if thresholds is None else list(thresholds)
        partitions = distance_partition(Z, thr) if len(Z) else []
        return extended_update(pred, Z, partitions, etm, models.measurement, models.clutter, rs, prune_eps)

    return _update
