"""Minimax-robust GM-PHD recursion with adaptive robustness control.

One filter cycle runs predict -> adapt -> update -> manage -> extract. The
prediction blends the nominal prediction with a memory copy of the previous
posterior, the update uses a Gaussian/Student-t likelihood mixture and
per-measurement credibility weights, and the controller re-derives all
robustness parameters from the freshly predicted mixture every scan.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln, softmax
from scipy.stats import chi2

from .diagnostics import check_mixture
from .gm import (LOG_2PI, ComponentManagementConfig, GaussianComponent, GaussianMixture,
                 extract_states, total_mass)
from .models import BirthModel, ClutterModel, FilterModels, MeasurementModel, MotionModel, SpawnModel
from .phd import (KalmanTerms, StepDiagnostics, detection_components, gaussian_loglik, innovations,
                  kalman_terms, mahalanobis_sq, manage, max_condition, predict_nominal)


@dataclass(frozen=True)
class AdaptationConfig:
    lambda_f: float = 0.1
    lambda_g: float = 0.05
    gamma: float = 0.2
    gamma_w: float = 1.0
    kurtosis_window: int = 50
    nu_max: float = 100.0
    nu_eps: float = 1e-6
    accept_prob: float = 0.999      # chi-square gate for innovations fed to the kurtosis window
    min_kurtosis_samples: int = 8

    def __post_init__(self):
        for name in ("lambda_f", "lambda_g", "gamma", "gamma_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.kurtosis_window < 1:
            raise ValueError("kurtosis_window must be >= 1")
        if not self.nu_max >= 3:
            raise ValueError("nu_max must be >= 3")


@dataclass(frozen=True, eq=False)
class RobustnessState:
    """Adaptive parameters for one scan.

    ``w_meas`` holds one credibility per measurement, aligned with the scan's
    measurement order; ``None`` means every credibility is pinned to 1.
    """

    alpha: float = 0.0
    beta: float = 0.0
    w_global: float = 1.0
    w_meas: np.ndarray | None = None
    eps_f: float = 0.0
    eps_g: float = 0.0
    nu: float = 100.0
    kurtosis: float = 3.0
    window: tuple = ()

    @classmethod
    def initial(cls, cfg: AdaptationConfig | None = None) -> RobustnessState:
        cfg = cfg or AdaptationConfig()
        return cls(nu=cfg.nu_max)

    @classmethod
    def pinned(cls, nu: float = 100.0) -> RobustnessState:
        """alpha = beta = 0, w_global = 1, every w(z) = 1: the standard GM-PHD."""
        return cls(nu=nu)

    def credibilities(self, n: int) -> np.ndarray:
        if self.w_meas is None:
            return np.ones(n)
        w = np.asarray(self.w_meas, dtype=float)
        if len(w) != n:
            raise ValueError(f"{len(w)} credibilities for {n} measurements")
        return w


def select_dof(kurtosis: float, cfg: AdaptationConfig | None = None) -> float:
    cfg = cfg or AdaptationConfig()
    if kurtosis <= 3.0 + 1e-9:
        return float(cfg.nu_max)
    nu = math.floor(6.0 / (kurtosis - 3.0) + cfg.nu_eps)
    return float(min(cfg.nu_max, max(3, nu)))


def t_scale_factor(nu: float) -> float:
    """Scale applied to S so the t component's covariance equals S."""
    return (nu - 2.0) / nu


def robust_loglik(maha_sq: np.ndarray, terms: KalmanTerms, nu: float, beta: float) -> np.ndarray:
    """log[(1 - beta) N(z; zhat, S) + beta t_nu(z; zhat, (nu-2)/nu S)] for all pairs."""
    logN = gaussian_loglik(maha_sq, terms)
    if beta == 0.0:
        return logN
    nz = terms.zhat.shape[1]
    c = t_scale_factor(nu)
    log_norm = gammaln(0.5 * (nu + nz)) - gammaln(0.5 * nu) - 0.5 * nz * math.log(nu * math.pi)
    logT = (log_norm - 0.5 * (terms.log_det_S[:, None] + nz * math.log(c))
            - 0.5 * (nu + nz) * np.log1p(maha_sq / (c * nu)))
    if beta == 1.0:
        return logT
    return np.logaddexp(math.log1p(-beta) + logN, math.log(beta) + logT)


def robust_likelihood(z, component: GaussianComponent, mm: MeasurementModel, nu: float, beta: float) -> float:
    mix = GaussianMixture([1.0], np.asarray(component.mean, dtype=float)[None, :],
                          np.asarray(component.cov, dtype=float)[None, :, :])
    terms = kalman_terms(mix, mm)
    Z = np.asarray(z, dtype=float).reshape(1, mm.dim)
    return float(np.exp(robust_loglik(mahalanobis_sq(innovations(Z, terms, mm), terms), terms, nu, beta))[0, 0])


def _kurtosis(window, cfg: AdaptationConfig, n_z: int = 1) -> float:
    """Kurtosis of the innovations behind the window of delta = d^2 / n_z values.

    For n_z = 1 this is the kurtosis of the sign-symmetrised sqrt(delta),
    E[delta^2] / E[delta]^2. In n_z dimensions that ratio is 1 + 2/n_z for
    Gaussian innovations, so it is rescaled by 3 / (1 + 2/n_z) to read 3.
    """
    if len(window) < cfg.min_kurtosis_samples:
        return 3.0
    d = np.asarray(window, dtype=float)
    m2 = d.mean()
    if m2 <= 0:
        return 3.0
    ratio = np.mean(d * d) / (m2 * m2)
    return float(np.clip(3.0 * ratio / (1.0 + 2.0 / n_z), 3.0, 30.0))


def adapt_parameters(prior: GaussianMixture, pred: GaussianMixture, meas, mm: MeasurementModel,
                     cfg: AdaptationConfig, prev: RobustnessState, motion: MotionModel | None = None,
                     terms: KalmanTerms | None = None) -> RobustnessState:
    """Recompute alpha, beta, w_global, w(z) and the t degrees of freedom.

    The first ``len(prior)`` components of ``pred`` must be the nominal
    surviving components (the layout :func:`robust_predict` produces).
    """
    Z = np.asarray(meas, dtype=float).reshape(-1, mm.dim)

    eps_f = 0.0
    J_prev = len(prior)
    if motion is not None and J_prev:
        diff = pred.means[:J_prev] - prior.means @ motion.F.T
        L = np.linalg.cholesky(pred.covs[:J_prev])
        y = np.linalg.solve(L, diff[..., None])[..., 0]
        eps_f = float(np.mean(np.sqrt(np.einsum("ij,ij->i", y, y))))
    alpha = -math.expm1(-cfg.lambda_f * eps_f)

    live = pred.weights > 0
    w_global = float(expit(-cfg.gamma_w * (mm.p_D * math.fsum(pred.weights.tolist()) - len(Z))))

    if len(Z) == 0:
        return replace(prev, alpha=alpha, w_global=w_global, w_meas=np.zeros(0), eps_f=eps_f)

    if live.any():
        if terms is None:
            terms = kalman_terms(pred[np.flatnonzero(live)], mm)
            sub = slice(None)
        else:
            sub = live
        sub_terms = KalmanTerms(terms.zhat[sub], terms.S_chol[sub], terms.gain[sub], terms.post_covs[sub])
        d2 = mahalanobis_sq(innovations(Z, sub_terms, mm), sub_terms).min(axis=0)
        d = np.sqrt(d2)
        eps_g = float(np.mean(d))
        beta = -math.expm1(-cfg.lambda_g * eps_g)
        w_meas = softmax(-cfg.gamma * d)
        gate = chi2.ppf(cfg.accept_prob, mm.dim)
        window = deque(prev.window, maxlen=cfg.kurtosis_window)
        window.extend((d2[d2 <= gate] / mm.dim).tolist())
        window = tuple(window)
    else:
        eps_g, beta, window = prev.eps_g, prev.beta, prev.window
        w_meas = np.full(len(Z), 1.0 / len(Z))
    kurt = _kurtosis(window, cfg, mm.dim)
    return RobustnessState(alpha=alpha, beta=beta, w_global=w_global, w_meas=w_meas, eps_f=eps_f,
                           eps_g=eps_g, nu=select_dof(kurt, cfg), kurtosis=kurt, window=window)


def relative_credibilities(rs: RobustnessState) -> RobustnessState:
    """Rescale the softmax credibilities to mean one over the scan, clipped to [0, 1].

    The softmax sums to one, so used directly it shrinks every detection
    term by roughly 1/|Z|. ``|Z| w(z)`` keeps the ranking but not the
    dependence on scan size; equal distances give 1 for every measurement.
    """
    if rs.w_meas is None or len(rs.w_meas) == 0:
        return rs
    w = np.asarray(rs.w_meas, dtype=float)
    return replace(rs, w_meas=np.minimum(1.0, len(w) * w))


def robust_predict(prior: GaussianMixture, motion: MotionModel, spawn: SpawnModel,
                   birth: GaussianMixture | BirthModel, alpha: float, beta: float) -> GaussianMixture:
    """(1-alpha)*[survive + spawn]  U  alpha*[prior copy]  U  beta*[birth]."""
    if isinstance(birth, BirthModel):
        birth = birth.components
    nominal = predict_nominal(prior, motion, spawn)
    parts = [nominal.scaled(1.0 - alpha),
             GaussianMixture(alpha * prior.weights, prior.means, prior.covs),
             birth.scaled(beta)]
    return GaussianMixture.concat(parts, dim=prior.dim, k=prior.k + 1)


def robust_update(pred: GaussianMixture, meas, mm: MeasurementModel, clutter: ClutterModel,
                  rs: RobustnessState, terms: KalmanTerms | None = None) -> GaussianMixture:
    Z = np.asarray(meas, dtype=float).reshape(-1, mm.dim)
    missed = GaussianMixture((1.0 - rs.w_global * mm.p_D) * pred.weights, pred.means, pred.covs, pred.k)
    if len(Z) == 0 or len(pred) == 0:
        return missed
    wz = rs.credibilities(len(Z))
    if terms is None:
        terms = kalman_terms(pred, mm)
    nu = innovations(Z, terms, mm)
    logq = robust_loglik(mahalanobis_sq(nu, terms), terms, rs.nu, rs.beta)
    with np.errstate(divide="ignore"):
        # w_global scales the detection probability in the detection terms too
        log_num = (np.log(wz)[None, :] + np.log(rs.w_global * mm.p_D) + np.log(pred.weights)[:, None]
                   + logq)
        log_kappa = np.log(clutter.intensity_batch(Z))
    detected = detection_components(pred, Z, terms, nu, log_num, log_kappa)
    return GaussianMixture.concat([missed, detected], dim=pred.dim, k=pred.k)


@dataclass(frozen=True)
class RobustFilterConfig:
    management: ComponentManagementConfig = field(default_factory=ComponentManagementConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    adaptive: bool = True
    debug: bool = False


@dataclass(frozen=True, eq=False)
class RobustState:
    mixture: GaussianMixture
    robustness: RobustnessState = field(default_factory=RobustnessState)
    previous_measurements: np.ndarray | None = None

    @classmethod
    def initial(cls, dim: int = 4, cfg: RobustFilterConfig | None = None) -> RobustState:
        cfg = cfg or RobustFilterConfig()
        rs = RobustnessState.initial(cfg.adaptation) if cfg.adaptive else RobustnessState.pinned(cfg.adaptation.nu_max)
        return cls(GaussianMixture.empty(dim), rs)


def step(state: RobustState, meas, models: FilterModels, cfg: RobustFilterConfig,
         measurement_update=None) -> tuple[RobustState, StepDiagnostics]:
    """One predict -> adapt -> update -> manage -> extract cycle.

    Prediction uses the previous scan's alpha and beta, with the birth term
    weighted by ``1 + beta`` so that beta = 0 recovers the nominal birth.
    The update sees the credibilities through :func:`relative_credibilities`.
    ``measurement_update`` lets the extended-target
    update replace the point-target one; it receives
    ``(pred, Z, models, robustness_state, kalman_terms)``.
    """
    mm = models.measurement
    Z = np.asarray(meas, dtype=float).reshape(-1, mm.dim)
    prev = state.robustness
    t0 = time.perf_counter()
    birth = models.birth.intensity(state.previous_measurements)
    pred = robust_predict(state.mixture, models.motion, models.spawn, birth, prev.alpha, 1.0 + prev.beta)
    check_mixture(pred, cfg.debug)
    t1 = time.perf_counter()
    terms = kalman_terms(pred, mm) if len(pred) else None
    if cfg.adaptive:
        rs = adapt_parameters(state.mixture, pred, Z, mm, cfg.adaptation, prev, motion=models.motion, terms=terms)
    else:
        rs = prev
    t2 = time.perf_counter()
    urs = relative_credibilities(rs)
    if measurement_update is None:
        post = robust_update(pred, Z, mm, models.clutter, urs, terms=terms)
    else:
        post = measurement_update(pred, Z, models, urs, terms)
    check_mixture(post, cfg.debug)
    t3 = time.perf_counter()
    managed = manage(post, cfg.management)
    check_mixture(managed, cfg.debug)
    t4 = time.perf_counter()
    est = extract_states(managed)
    t5 = time.perf_counter()
    diag = StepDiagnostics(
        k=pred.k, estimates=est, total_mass=total_mass(managed), component_count=len(managed),
        predicted_count=len(pred), updated_count=len(post), max_cond=max_condition(managed),
        runtime_ms={"predict": 1e3 * (t1 - t0), "adapt": 1e3 * (t2 - t1), "update": 1e3 * (t3 - t2),
                    "manage": 1e3 * (t4 - t3), "extract": 1e3 * (t5 - t4)},
        alpha=rs.alpha, beta=rs.beta, w_global=rs.w_global, eps_f=rs.eps_f, eps_g=rs.eps_g,
        nu=rs.nu, kurtosis=rs.kurtosis,
    )
    return RobustState(managed, rs, Z), diag
