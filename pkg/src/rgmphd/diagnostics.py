"""Numerical health checks: conditioning, positive definiteness, intensity mass."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotPositiveDefinite

# release mode checks every SAMPLE_STRIDE-th component
SAMPLE_STRIDE = 16


def condition_number(P) -> float:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    lam = np.linalg.eigvalsh(0.5 * (P + P.T))
    if lam[0] <= 0:
        raise NotPositiveDefinite(float(lam[0]))
    return float(lam[-1] / lam[0])


def check_spd(P) -> None:
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, -1, -2)))
        raise NotPositiveDefinite(float(np.min(lam))) from None


def check_mixture(mix, debug: bool = False) -> None:
    """SPD check on every component (debug) or on a 1-in-16 sample."""
    if len(mix) == 0:
        return
    covs = mix.covs if debug else mix.covs[::SAMPLE_STRIDE]
    check_spd(covs)


@dataclass(frozen=True)
class MassCheck:
    ok: bool
    first_violation: int | None = None
    peak: float = 0.0


def mass_monitor(trace: Sequence[float], ceiling) -> MassCheck:
    """Check sup_k mass_k <= ceiling_k; ``ceiling`` may be a scalar or a per-step sequence."""
    trace = np.asarray(trace, dtype=float)
    ceil = np.broadcast_to(np.asarray(ceiling, dtype=float), trace.shape)
    bad = np.flatnonzero(trace > ceil)
    peak = float(trace.max()) if trace.size else 0.0
    if bad.size:
        return MassCheck(False, int(bad[0]), peak)
    return MassCheck(True, None, peak)


def stability_constant(p_S: float, alpha_max: float, p_D: float, max_measurements: int,
                       kappa_min: float) -> float:
    """A = p_S + alpha_max + p_D * M_max / kappa_min."""
    return p_S + alpha_max + p_D * max_measurements / kappa_min


def mass_bound_ceiling(mass0: float, p_S: float, alpha_max: float, p_D: float, max_measurements: int,
                       kappa_min: float, beta_max: float, gamma_max: float, n_birth: float) -> float:
    """mass0 + B / (1 - A) with B = (1 + beta_max) gamma_max + n_birth; inf when A >= 1."""
    A = stability_constant(p_S, alpha_max, p_D, max_measurements, kappa_min)
    if A >= 1.0:
        return math.inf
    B = (1.0 + beta_max) * gamma_max + n_birth
    return mass0 + B / (1.0 - A)
