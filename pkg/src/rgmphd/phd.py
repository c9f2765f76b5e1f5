"""Standard GM-PHD prediction and update (Vo & Ma closed form).

This is the baseline filter and the reference the robust recursion must
collapse to when its robustness parameters are pinned.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import SingularCovariance, SingularInnovation
from .gm import (LOG_2PI, ComponentManagementConfig, GaussianMixture, extract_states,
                 log_det_from_chol, prune_and_merge, regularize, total_mass, whiten)
from .models import BirthModel, ClutterModel, FilterModels, MeasurementModel, MotionModel, SpawnModel


def _propagate(mix: GaussianMixture, F: np.ndarray, Q: np.ndarray, d=None) -> tuple[np.ndarray, np.ndarray]:
    means = mix.means @ F.T
    if d is not None:
        means = means + d
    covs = Q + F @ mix.covs @ F.T
    return means, 0.5 * (covs + np.swapaxes(covs, -1, -2))


def predict_nominal(prior: GaussianMixture, motion: MotionModel, spawn: SpawnModel) -> GaussianMixture:
    """Surviving components followed by spawned ones (spawn term outer, prior component inner)."""
    means, covs = _propagate(prior, motion.F, motion.Q)
    parts = [GaussianMixture(motion.p_S * prior.weights, means, covs)]
    for term in spawn.terms:
        sm, sP = _propagate(prior, term.F, term.Q, term.d)
        parts.append(GaussianMixture(term.weight * prior.weights, sm, sP))
    return GaussianMixture.concat(parts, dim=prior.dim, k=prior.k + 1)


def predict(prior: GaussianMixture, motion: MotionModel, spawn: SpawnModel,
            birth: GaussianMixture | BirthModel) -> GaussianMixture:
    if isinstance(birth, BirthModel):
        birth = birth.components
    nominal = predict_nominal(prior, motion, spawn)
    return GaussianMixture.concat([nominal, birth], dim=prior.dim, k=prior.k + 1)


@dataclass(frozen=True, eq=False)
class KalmanTerms:
    """Per-component quantities shared by every measurement in a scan."""

    zhat: np.ndarray      # (J, n_z)
    S_chol: np.ndarray    # (J, n_z, n_z)
    gain: np.ndarray      # (J, n_x, n_z)
    post_covs: np.ndarray  # (J, n_x, n_x)

    @property
    def log_det_S(self) -> np.ndarray:
        return log_det_from_chol(self.S_chol)


def kalman_terms(pred: GaussianMixture, mm: MeasurementModel) -> KalmanTerms:
    """Innovation covariances, gains and Joseph-form posterior covariances."""
    J, n = len(pred), pred.dim
    zhat, H = mm.predict_batch(pred.means)
    PHt = pred.covs @ np.swapaxes(H, -1, -2)
    S = H @ PHt + mm.R
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(S)[:, 0]
        bad = int(np.argmin(eig))
        raise SingularInnovation(bad, float(eig[bad])) from None
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, -1, -2)), -1, -2)
    A = np.eye(n) - K @ H
    P = A @ pred.covs @ np.swapaxes(A, -1, -2) + K @ mm.R @ np.swapaxes(K, -1, -2)
    return KalmanTerms(zhat, L, K, 0.5 * (P + np.swapaxes(P, -1, -2)))


def innovations(Z: np.ndarray, terms: KalmanTerms, mm: MeasurementModel) -> np.ndarray:
    """Innovations z - zhat for every (component, measurement) pair: (J, M, n_z)."""
    return mm.innovation(Z[None, :, :], terms.zhat[:, None, :])


def mahalanobis_sq(nu: np.ndarray, terms: KalmanTerms) -> np.ndarray:
    """Squared innovation Mahalanobis distances (J, M)."""
    if nu.shape[1] == 0:
        return np.zeros(nu.shape[:2])
    y = whiten(terms.S_chol[:, None, :, :], nu)
    return np.einsum("jmi,jmi->jm", y, y)


def gaussian_loglik(maha_sq: np.ndarray, terms: KalmanTerms) -> np.ndarray:
    nz = terms.zhat.shape[1]
    return -0.5 * maha_sq - 0.5 * terms.log_det_S[:, None] - 0.5 * nz * LOG_2PI


def detection_components(pred: GaussianMixture, Z: np.ndarray, terms: KalmanTerms, nu: np.ndarray,
                         log_num: np.ndarray, log_kappa: np.ndarray) -> GaussianMixture:
    """Normalise log numerators (J, M) per measurement and build the detection terms.

    Output order is measurement-major: all components for z_1, then z_2, ...
    """
    J, M = log_num.shape
    n = pred.dim
    with np.errstate(divide="ignore", invalid="ignore"):
        log_den = np.logaddexp(log_kappa, logsumexp(log_num, axis=0)) if J else log_kappa
        w = np.exp(log_num - log_den[None, :])
    w = np.where(np.isfinite(w), w, 0.0)
    means = pred.means[:, None, :] + np.einsum("jxz,jmz->jmx", terms.gain, nu)
    return GaussianMixture(w.T.reshape(-1),
                           np.swapaxes(means, 0, 1).reshape(-1, n),
                           np.broadcast_to(terms.post_covs, (M, J, n, n)).reshape(-1, n, n),
                           pred.k)


def update(pred: GaussianMixture, Z, mm: MeasurementModel, clutter: ClutterModel) -> GaussianMixture:
    Z = np.asarray(Z, dtype=float).reshape(-1, mm.dim)
    missed = GaussianMixture((1.0 - mm.p_D) * pred.weights, pred.means, pred.covs, pred.k)
    if len(Z) == 0 or len(pred) == 0:
        return missed
    terms = kalman_terms(pred, mm)
    nu = innovations(Z, terms, mm)
    logq = gaussian_loglik(mahalanobis_sq(nu, terms), terms)
    with np.errstate(divide="ignore"):
        log_num = np.log(mm.p_D) + np.log(pred.weights)[:, None] + logq
        log_kappa = np.log(clutter.intensity_batch(Z))
    detected = detection_components(pred, Z, terms, nu, log_num, log_kappa)
    return GaussianMixture.concat([missed, detected], dim=pred.dim, k=pred.k)


def manage(mix: GaussianMixture, cfg: ComponentManagementConfig) -> GaussianMixture:
    """Regularise then prune/merge/cap."""
    return prune_and_merge(regularize(mix, cfg), cfg)


def max_condition(mix: GaussianMixture) -> float:
    if len(mix) == 0:
        return 1.0
    lam = np.linalg.eigvalsh(mix.covs)
    if np.any(lam[:, 0] <= 0):
        raise SingularCovariance(float(lam[:, 0].min()))
    return float(np.max(lam[:, -1] / lam[:, 0]))


@dataclass
class StepDiagnostics:
    k: int
    estimates: list
    total_mass: float
    component_count: int
    predicted_count: int
    updated_count: int
    max_cond: float
    runtime_ms: dict = field(default_factory=dict)
    alpha: float = 0.0
    beta: float = 0.0
    w_global: float = 1.0
    eps_f: float = 0.0
    eps_g: float = 0.0
    nu: float = float("inf")
    kurtosis: float = 3.0


@dataclass(frozen=True, eq=False)
class StandardState:
    mixture: GaussianMixture
    previous_measurements: np.ndarray | None = None


def standard_step(state: StandardState, Z, models: FilterModels,
                  cfg: ComponentManagementConfig) -> tuple[StandardState, StepDiagnostics]:
    """predict -> update -> manage -> extract."""
    Z = np.asarray(Z, dtype=float).reshape(-1, models.measurement.dim)
    t0 = time.perf_counter()
    birth = models.birth.intensity(state.previous_measurements)
    pred = predict(state.mixture, models.motion, models.spawn, birth)
    t1 = time.perf_counter()
    post = update(pred, Z, models.measurement, models.clutter)
    t2 = time.perf_counter()
    managed = manage(post, cfg)
    t3 = time.perf_counter()
    est = extract_states(managed)
    t4 = time.perf_counter()
    diag = StepDiagnostics(
        k=pred.k, estimates=est, total_mass=total_mass(managed), component_count=len(managed),
        predicted_count=len(pred), updated_count=len(post), max_cond=max_condition(managed),
        runtime_ms={"predict": 1e3 * (t1 - t0), "update": 1e3 * (t2 - t1),
                    "manage": 1e3 * (t3 - t2), "extract": 1e3 * (t4 - t3)},
    )
    return StandardState(managed, Z), diag
