"""Gaussian-mixture intensities and the component bookkeeping around them.

A PHD intensity is stored as three stacked arrays (weights, means, covariances)
so that prediction and update can be vectorised over components. Single
components are exposed through :class:`GaussianComponent` for convenience.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InvalidDof, SingularCovariance

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted sum of Gaussians. ``weights`` is (J,), ``means`` (J, n), ``covs`` (J, n, n)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    k: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        m = np.asarray(self.means, dtype=float)
        P = np.asarray(self.covs, dtype=float)
        if m.ndim == 1:
            m = m.reshape(len(w), -1)
        if P.ndim == 2:
            P = P.reshape(len(w), m.shape[1], m.shape[1])
        if not (len(w) == len(m) == len(P)):
            raise ValueError("weights, means and covs disagree on component count")
        if m.shape[1:] != P.shape[1:2] or P.shape[1] != P.shape[2]:
            raise ValueError("mean/covariance dimensions disagree")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", P)

    @classmethod
    def empty(cls, dim: int, k: int = 0) -> GaussianMixture:
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)), k)

    @classmethod
    def from_components(cls, components: Iterable[GaussianComponent], dim: int | None = None,
                        k: int = 0) -> GaussianMixture:
        comps = list(components)
        if not comps:
            if dim is None:
                raise ValueError("dim is required for an empty component list")
            return cls.empty(dim, k)
        return cls(np.array([c.weight for c in comps], dtype=float),
                   np.stack([np.asarray(c.mean, dtype=float) for c in comps]),
                   np.stack([np.asarray(c.cov, dtype=float) for c in comps]), k)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[GaussianComponent]:
        return list(iter(self))

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[GaussianComponent]:
        for w, m, P in zip(self.weights, self.means, self.covs):
            yield GaussianComponent(float(w), m, P)

    def __getitem__(self, idx) -> GaussianMixture:
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return GaussianMixture(self.weights[idx], self.means[idx], self.covs[idx], self.k)

    def scaled(self, factor: float) -> GaussianMixture:
        return GaussianMixture(factor * self.weights, self.means, self.covs, self.k)

    def with_step(self, k: int) -> GaussianMixture:
        return GaussianMixture(self.weights, self.means, self.covs, k)

    @staticmethod
    def concat(parts: Sequence[GaussianMixture], dim: int | None = None, k: int = 0) -> GaussianMixture:
        parts = [p for p in parts if p is not None]
        if not parts:
            if dim is None:
                raise ValueError("dim is required to concatenate nothing")
            return GaussianMixture.empty(dim, k)
        if dim is None:
            dim = parts[0].dim
        return GaussianMixture(np.concatenate([p.weights for p in parts]),
                               np.concatenate([p.means.reshape(-1, dim) for p in parts]),
                               np.concatenate([p.covs.reshape(-1, dim, dim) for p in parts]), k)


@dataclass(frozen=True)
class ComponentManagementConfig:
    """Pruning/merging thresholds and numerical floors.

    ``merge_threshold`` is compared against the *squared* Mahalanobis distance.
    ``eig_ceiling`` is not enforced; it only defines the conditioning bound
    ``eig_ceiling / eig_floor`` that diagnostics check against.
    """

    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    max_components: int = 100
    weight_floor: float = 1e-12
    eig_floor: float = 1e-4
    regularization: float = 1e-4 / 32
    eig_ceiling: float = 1e7
    max_regularization_steps: int = 64

    def __post_init__(self):
        if not self.prune_threshold >= 0:
            raise ValueError("prune_threshold must be >= 0")
        if not self.merge_threshold > 0:
            raise ValueError("merge_threshold must be > 0")
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")
        if not 0 < self.regularization < self.eig_floor:
            raise ValueError("regularization must satisfy 0 < delta < eig_floor")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be >= 0")

    @property
    def condition_bound(self) -> float:
        return self.eig_ceiling / self.eig_floor


def cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor(s); raises :class:`SingularCovariance` with the offending eigenvalue."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
        raise SingularCovariance(float(np.min(eig))) from None


def whiten(L: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve ``L y = d`` for lower-triangular ``L`` (broadcast over leading axes)."""
    return np.linalg.solve(L, d[..., None])[..., 0]


def log_det_from_chol(L: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def gaussian_logpdf(x, mean, cov) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if x.shape != mean.shape or cov.shape != (x.size, x.size):
        raise ValueError("dimension mismatch")
    L = cholesky(cov)
    y = whiten(L, x - mean)
    return float(-0.5 * (y @ y) - 0.5 * log_det_from_chol(L) - 0.5 * x.size * LOG_2PI)


def gaussian_density(x, mean, cov) -> float:
    """N(x; mean, cov) evaluated through a Cholesky factor."""
    return math.exp(gaussian_logpdf(x, mean, cov))


def student_t_logpdf(z, loc, scale, dof: float) -> float:
    if not dof > 2:
        raise InvalidDof(f"degrees of freedom must exceed 2, got {dof}")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    d = z.size
    L = cholesky(scale)
    y = whiten(L, z - loc)
    return float(_t_log_norm(dof, d) - 0.5 * log_det_from_chol(L)
                 - 0.5 * (dof + d) * math.log1p((y @ y) / dof))


def _t_log_norm(dof: float, d: int) -> float:
    return float(gammaln(0.5 * (dof + d)) - gammaln(0.5 * dof) - 0.5 * d * math.log(dof * math.pi))


def student_t_density(z, loc, scale, dof: float) -> float:
    """Multivariate Student-t density with location ``loc`` and scale matrix ``scale``."""
    return math.exp(student_t_logpdf(z, loc, scale, dof))


def sample_student_t(rng: np.random.Generator, loc, scale, dof: float, size: int) -> np.ndarray:
    """Draw from t(loc, scale, dof) as a Gaussian scale mixture; returns (size, d)."""
    if not dof > 2:
        raise InvalidDof(f"degrees of freedom must exceed 2, got {dof}")
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    L = cholesky(np.atleast_2d(np.asarray(scale, dtype=float)))
    g = rng.standard_normal((size, loc.size)) @ L.T
    u = rng.chisquare(dof, size) / dof
    return loc + g / np.sqrt(u)[:, None]


def total_mass(mix: GaussianMixture) -> float:
    return math.fsum(mix.weights.tolist())


def _merge_group(w: np.ndarray, m: np.ndarray, P: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    wt = math.fsum(w.tolist())
    mt = (w @ m) / wt
    d = mt - m
    Pt = np.einsum("i,ijk->jk", w, P + d[:, :, None] * d[:, None, :]) / wt
    return wt, mt, 0.5 * (Pt + Pt.T)


def prune_and_merge(mix: GaussianMixture, cfg: ComponentManagementConfig) -> GaussianMixture:
    """Threshold, greedily merge around the heaviest component, then cap the count."""
    keep = np.flatnonzero(mix.weights > cfg.prune_threshold)
    if keep.size == 0:
        return GaussianMixture.empty(mix.dim, mix.k)
    w, m, P = mix.weights[keep], mix.means[keep], mix.covs[keep]
    # distances use each candidate's own covariance
    L = cholesky(P)
    remaining = np.ones(len(w), dtype=bool)
    out_w, out_m, out_P = [], [], []
    while remaining.any():
        idx = np.flatnonzero(remaining)
        j = idx[np.argmax(w[idx])]
        y = whiten(L[idx], m[idx] - m[j])
        group = idx[np.einsum("ij,ij->i", y, y) <= cfg.merge_threshold]
        wt, mt, Pt = _merge_group(w[group], m[group], P[group])
        out_w.append(wt)
        out_m.append(mt)
        out_P.append(Pt)
        remaining[group] = False
    out_w = np.array(out_w)
    order = np.arange(len(out_w))
    if len(out_w) > cfg.max_components:
        order = np.sort(np.argsort(-out_w, kind="stable")[: cfg.max_components])
    return GaussianMixture(out_w[order], np.array(out_m)[order], np.array(out_P)[order], mix.k)


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def extract_states(mix: GaussianMixture) -> list[np.ndarray]:
    states = []
    for w, m in zip(mix.weights, mix.means):
        if w > 0.5:
            states.extend(m.copy() for _ in range(round_half_away(w)))
    return states


def regularize(mix: GaussianMixture, cfg: ComponentManagementConfig) -> GaussianMixture:
    """Symmetrise covariances, lift small eigenvalues by multiples of delta*I, floor weights."""
    if len(mix) == 0:
        return mix
    P = 0.5 * (mix.covs + np.swapaxes(mix.covs, -1, -2))
    lam = np.linalg.eigvalsh(P)[:, 0]
    low = lam < cfg.eig_floor
    if low.any():
        steps = np.ceil((cfg.eig_floor - lam[low]) / cfg.regularization)
        if steps.max() > cfg.max_regularization_steps:
            raise SingularCovariance(float(lam[low][np.argmax(steps)]),
                                     "covariance needs more than "
                                     f"{cfg.max_regularization_steps} regularization steps")
        P = P.copy()
        P[low] += (steps * cfg.regularization)[:, None, None] * np.eye(mix.dim)
        # guard against rounding leaving the floor a hair short
        lam2 = np.linalg.eigvalsh(P[low])[:, 0]
        short = lam2 < cfg.eig_floor
        if short.any():
            sub = np.flatnonzero(low)[short]
            P[sub] += cfg.regularization * np.eye(mix.dim)
    w = np.maximum(mix.weights, cfg.weight_floor)
    return GaussianMixture(w, mix.means, P, mix.k)
