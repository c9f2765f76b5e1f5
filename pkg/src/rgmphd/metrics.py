"""OSPA distance and cardinality statistics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyInput


@dataclass(frozen=True)
class OspaConfig:
    cutoff: float = 100.0
    order: float = 1.0
    position_dims: int = 2

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be > 0")
        if not self.order >= 1:
            raise ValueError("order must be >= 1")


def _positions(X, dims: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros((0, dims))
    X = np.atleast_2d(X)
    return X[:, :dims]


def _cutoff_costs(X, Y, cfg: OspaConfig) -> np.ndarray:
    D = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
    return np.minimum(D, cfg.cutoff) ** cfg.order


def ospa(X, Y, cfg: OspaConfig | None = None) -> float:
    """OSPA distance between two finite sets of state vectors (positions only)."""
    cfg = cfg or OspaConfig()
    X = _positions(X, cfg.position_dims)
    Y = _positions(Y, cfg.position_dims)
    m, n = sorted((len(X), len(Y)))
    if n == 0:
        return 0.0
    if m == 0:
        return float(cfg.cutoff)
    C = _cutoff_costs(X, Y, cfg)
    rows, cols = linear_sum_assignment(C)
    cost = math.fsum(C[rows, cols].tolist())
    return float(((cost + cfg.cutoff**cfg.order * (n - m)) / n) ** (1.0 / cfg.order))


def ospa_bruteforce(X, Y, cfg: OspaConfig | None = None) -> float:
    """Exhaustive-permutation OSPA; test oracle for small sets."""
    cfg = cfg or OspaConfig()
    X = _positions(X, cfg.position_dims)
    Y = _positions(Y, cfg.position_dims)
    if len(X) > len(Y):
        X, Y = Y, X
    m, n = len(X), len(Y)
    if n == 0:
        return 0.0
    best = 0.0
    if m:
        best = math.inf
        for perm in itertools.permutations(range(n), m):
            terms = []
            for i, j in enumerate(perm):
                d = math.sqrt(sum((a - b) ** 2 for a, b in zip(X[i], Y[j])))
                terms.append(min(d, cfg.cutoff) ** cfg.order)
            best = min(best, math.fsum(terms))
    return ((best + cfg.cutoff**cfg.order * (n - m)) / n) ** (1.0 / cfg.order)


@dataclass
class RunRecord:
    """Per-step metrics of one filter on one Monte Carlo run."""

    run: int
    filter: str
    ospa: list = field(default_factory=list)
    n_true: list = field(default_factory=list)
    n_est: list = field(default_factory=list)
    max_cond: list = field(default_factory=list)
    runtime_ms: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    w_global: list = field(default_factory=list)
    components: list = field(default_factory=list)
    total_mass: list = field(default_factory=list)
    stream_hash: str = ""
    failed: bool = False
    error: str = ""

    def __len__(self) -> int:
        return len(self.ospa)


def cardinality_stats(records: Sequence[RunRecord]) -> tuple[float, float]:
    """(mean absolute, root-mean-square) cardinality error over every step of every record."""
    err = [e - t for r in records for e, t in zip(r.n_est, r.n_true)]
    if not err:
        raise EmptyInput("no steps to summarise")
    err = np.asarray(err, dtype=float)
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))
