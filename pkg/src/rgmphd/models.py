"""Motion, measurement, clutter, birth and spawn models.

State vectors are ordered ``(p_x, p_y, v_x, v_y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometry
from .gm import GaussianMixture

RANGE_FLOOR = 1e-6


def cv_transition(dt: float = 1.0) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def coordinated_turn_transition(omega: float, dt: float = 1.0) -> np.ndarray:
    """Coordinated-turn matrix for turn rate ``omega`` (rad/s); equals the CV matrix at omega=0."""
    x = omega * dt
    s = dt * np.sinc(x / math.pi)                          # sin(w dt) / w
    c = dt * math.sin(x / 2.0) * np.sinc(x / (2.0 * math.pi))  # (1 - cos(w dt)) / w
    cw, sw = math.cos(x), math.sin(x)
    return np.array([
        [1.0, 0.0, s, -c],
        [0.0, 1.0, c, s],
        [0.0, 0.0, cw, -sw],
        [0.0, 0.0, sw, cw],
    ])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


@dataclass(frozen=True, eq=False)
class MotionModel:
    F: np.ndarray
    Q: np.ndarray
    p_S: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.p_S <= 1.0:
            raise ValueError("p_S must lie in [0, 1]")
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))


@dataclass(frozen=True, eq=False)
class SpawnTerm:
    weight: float
    F: np.ndarray
    d: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True, eq=False)
class SpawnModel:
    terms: tuple[SpawnTerm, ...] = ()

    def __post_init__(self):
        if any(t.weight < 0 for t in self.terms):
            raise ValueError("spawn weights must be nonnegative")
        object.__setattr__(self, "terms", tuple(self.terms))

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True, eq=False)
class BirthModel:
    """Static birth intensity."""

    components: GaussianMixture

    def __post_init__(self):
        if np.any(self.components.weights < 0):
            raise ValueError("birth weights must be nonnegative")

    def intensity(self, previous_measurements=None) -> GaussianMixture:
        return self.components


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Linear ``z = H x + v`` or range-bearing ``z = (|p|, atan2(p_y, p_x)) + v``."""

    kind: str
    R: np.ndarray
    p_D: float = 0.98
    H: np.ndarray | None = None
    range_floor: float = RANGE_FLOOR

    def __post_init__(self):
        if self.kind not in ("linear", "range_bearing"):
            raise ValueError(f"unknown measurement model kind {self.kind!r}")
        if not 0.0 <= self.p_D <= 1.0:
            raise ValueError("p_D must lie in [0, 1]")
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.kind == "linear":
            if self.H is None:
                raise ValueError("linear model needs H")
            object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    @property
    def angular(self) -> tuple[int, ...]:
        """Indices of measurement coordinates that are angles."""
        return (1,) if self.kind == "range_bearing" else ()

    def predict_batch(self, means: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predicted measurements (J, n_z) and Jacobians (J, n_z, n_x) for stacked states."""
        means = np.atleast_2d(means)
        if self.kind == "linear":
            zhat = means @ self.H.T
            return zhat, np.broadcast_to(self.H, (len(means),) + self.H.shape)
        px, py = means[:, 0], means[:, 1]
        r = np.hypot(px, py)
        if np.any(r < self.range_floor):
            raise DegenerateGeometry(f"target within {self.range_floor} m of the sensor")
        zhat = np.stack([r, np.arctan2(py, px)], axis=1)
        J = np.zeros((len(means), 2, means.shape[1]))
        J[:, 0, 0] = px / r
        J[:, 0, 1] = py / r
        J[:, 1, 0] = -py / r**2
        J[:, 1, 1] = px / r**2
        return zhat, J

    def innovation(self, z: np.ndarray, zhat: np.ndarray) -> np.ndarray:
        d = np.asarray(z, dtype=float) - zhat
        for i in self.angular:
            d[..., i] = wrap_angle(d[..., i])
        return d

    def measurement_to_position(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Position estimate and its covariance implied by a single measurement."""
        z = np.asarray(z, dtype=float)
        if self.kind == "linear":
            pos = np.linalg.lstsq(self.H[:, :2], z, rcond=None)[0]
            Hp = self.H[:, :2]
            cov = np.linalg.pinv(Hp) @ self.R @ np.linalg.pinv(Hp).T
            return pos, cov
        r, b = z
        pos = np.array([r * math.cos(b), r * math.sin(b)])
        J = np.array([[math.cos(b), -r * math.sin(b)], [math.sin(b), r * math.cos(b)]])
        return pos, J @ self.R @ J.T


def predict_measurement(model: MeasurementModel, x) -> tuple[np.ndarray, np.ndarray]:
    zhat, J = model.predict_batch(np.asarray(x, dtype=float)[None, :])
    return zhat[0], np.array(J[0])


@dataclass(frozen=True, eq=False)
class ClutterModel:
    """Poisson clutter, uniform over an axis-aligned box in measurement space."""

    rate: float
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        if self.rate < 0:
            raise ValueError("clutter rate must be nonnegative")
        if low.shape != high.shape or np.any(high <= low):
            raise ValueError("clutter region is degenerate")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def volume(self) -> float:
        return float(np.prod(self.high - self.low))

    @property
    def density(self) -> float:
        return self.rate / self.volume

    def intensity_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        inside = np.all((Z >= self.low) & (Z <= self.high), axis=1)
        return np.where(inside, self.density, 0.0)


def clutter_intensity(model: ClutterModel, z) -> float:
    return float(model.intensity_batch(np.asarray(z, dtype=float)[None, :])[0])


@dataclass(frozen=True, eq=False)
class MeasurementDrivenBirth:
    """Birth components placed at the previous scan's measurements.

    Each measurement spawns one component at the position it implies, zero
    velocity, with ``total_weight`` split evenly across the scan.
    """

    measurement_model: MeasurementModel
    total_weight: float = 0.2
    velocity_std: float = 10.0
    dim: int = 4

    def intensity(self, previous_measurements=None) -> GaussianMixture:
        Z = np.zeros((0, self.measurement_model.dim)) if previous_measurements is None \
            else np.atleast_2d(np.asarray(previous_measurements, dtype=float))
        if len(Z) == 0:
            return GaussianMixture.empty(self.dim)
        means = np.zeros((len(Z), self.dim))
        covs = np.zeros((len(Z), self.dim, self.dim))
        for i, z in enumerate(Z):
            pos, pcov = self.measurement_model.measurement_to_position(z)
            means[i, :2] = pos
            covs[i, :2, :2] = 0.5 * (pcov + pcov.T)
            covs[i, 2:, 2:] = self.velocity_std**2 * np.eye(self.dim - 2)
        return GaussianMixture(np.full(len(Z), self.total_weight / len(Z)), means, covs)


def grid_birth(low: Sequence[float], high: Sequence[float], n_per_axis: int = 4,
               total_weight: float = 0.2, velocity_std: float = 10.0) -> BirthModel:
    """Static birth intensity: a regular grid of broad components over a box."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    step = (high - low) / n_per_axis
    xs = low[0] + step[0] * (np.arange(n_per_axis) + 0.5)
    ys = low[1] + step[1] * (np.arange(n_per_axis) + 0.5)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    n = gx.size
    means = np.zeros((n, 4))
    means[:, 0], means[:, 1] = gx.ravel(), gy.ravel()
    cov = np.diag([(step[0] / 2) ** 2, (step[1] / 2) ** 2, velocity_std**2, velocity_std**2])
    return BirthModel(GaussianMixture(np.full(n, total_weight / n), means, np.tile(cov, (n, 1, 1))))


@dataclass(frozen=True, eq=False)
class FilterModels:
    motion: MotionModel
    measurement: MeasurementModel
    clutter: ClutterModel
    birth: BirthModel | MeasurementDrivenBirth
    spawn: SpawnModel = field(default_factory=SpawnModel)
