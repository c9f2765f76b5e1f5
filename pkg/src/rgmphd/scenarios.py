"""Seeded ground-truth and measurement generators for the benchmark scenarios.

Randomness comes from numpy's Philox counter-based generator. A scenario's
truth and measurement streams are independent children of its seed:
``SeedSequence(seed, spawn_key=(0,))`` for truth and ``(1,)`` for measurements.
Monte Carlo runs derive their scenario seed from the master seed and the run
index (see :func:`run_seed`).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .models import (ClutterModel, FilterModels, MeasurementDrivenBirth, MeasurementModel, MotionModel,
                     coordinated_turn_transition, cv_transition, wrap_angle)

KINDS = ("linear", "nonlinear_ct", "high_clutter", "maneuvering")
CLUTTER = -1

Q_DIAG = (1.0, 1.0, 0.5, 0.5)
R_LINEAR = (10.0, 10.0)
R_RANGE_BEARING = (10.0, 0.01)
MAX_RANGE = 1414.0


def make_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def run_seed(master_seed: int, run_index: int) -> int:
    """64-bit scenario seed for one Monte Carlo run."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(2, run_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "linear"
    duration: int = 100
    dt: float = 1.0
    birth_rate: float = 0.2
    clutter_rate: float | None = None        # None -> 10, or 25 for high_clutter
    p_detect: float = 0.98
    p_survive: float = 0.99
    intermittent: bool | None = None         # None -> True only for high_clutter
    pd_low: float = 0.6
    pd_high: float = 0.9
    pd_period: int = 10
    region: tuple = (-1000.0, 1000.0, -1000.0, 1000.0)
    n_initial: int = 5
    initial_speed: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.birth_rate < 0 or (self.clutter_rate is not None and self.clutter_rate < 0):
            raise ValueError("rates must be nonnegative")

    @property
    def lambda_c(self) -> float:
        if self.clutter_rate is not None:
            return self.clutter_rate
        return 25.0 if self.kind == "high_clutter" else 10.0

    @property
    def is_intermittent(self) -> bool:
        return self.kind == "high_clutter" if self.intermittent is None else self.intermittent

    def p_detect_at(self, k: int) -> float:
        """Detection probability used to generate scan k (1-based)."""
        if not self.is_intermittent:
            return self.p_detect
        return self.pd_low if ((k - 1) // self.pd_period) % 2 == 0 else self.pd_high

    @property
    def nonlinear(self) -> bool:
        return self.kind == "nonlinear_ct"


@dataclass
class ScenarioTruth:
    """states[k] maps track id -> state for scan k = 1..K (index 0 is scan 1)."""

    states: list[dict[int, np.ndarray]]
    birth: dict[int, int] = field(default_factory=dict)
    death: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    def cardinality(self) -> list[int]:
        return [len(s) for s in self.states]

    def state_arrays(self) -> list[np.ndarray]:
        return [np.array([s[i] for i in sorted(s)]).reshape(-1, 4) for s in self.states]


@dataclass
class MeasurementFrame:
    k: int
    measurements: np.ndarray
    origins: list[int]            # track id, or CLUTTER; diagnostics only


def truth_motion(cfg: ScenarioConfig) -> MotionModel:
    return MotionModel(cv_transition(cfg.dt), np.diag(Q_DIAG), cfg.p_survive)


def measurement_model(cfg: ScenarioConfig, p_detect: float | None = None) -> MeasurementModel:
    pd = cfg.p_detect if p_detect is None else p_detect
    if cfg.nonlinear:
        return MeasurementModel("range_bearing", np.diag(R_RANGE_BEARING), pd)
    return MeasurementModel("linear", np.diag(R_LINEAR), pd, H=np.hstack([np.eye(2), np.zeros((2, 2))]))


def clutter_model(cfg: ScenarioConfig, rate: float | None = None) -> ClutterModel:
    lam = cfg.lambda_c if rate is None else rate
    if cfg.nonlinear:
        return ClutterModel(lam, [0.0, -math.pi], [MAX_RANGE, math.pi])
    x0, x1, y0, y1 = cfg.region
    return ClutterModel(lam, [x0, y0], [x1, y1])


def models_for(cfg: ScenarioConfig, birth_weight: float = 0.2, birth_velocity_std: float = 10.0) -> FilterModels:
    """Nominal filter models shared by every filter.

    Filters always assume the baseline operating point (clutter rate 10,
    p_D 0.98) and constant velocity, whatever the scenario kind. Heavier
    clutter, intermittent detection, turns and maneuvers are model mismatch.
    """
    mm = measurement_model(cfg, 0.98)
    return FilterModels(
        motion=truth_motion(cfg),
        measurement=mm,
        clutter=clutter_model(cfg, 10.0),
        birth=MeasurementDrivenBirth(mm, birth_weight, birth_velocity_std),
    )


def _initial_tracks(cfg: ScenarioConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Tracks start on a ring at 80% of the region half-width and head across the centre."""
    x0, x1, y0, y1 = cfg.region
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    radius = 0.8 * min(x1 - x0, y1 - y0) / 2
    out = []
    for i in range(cfg.n_initial):
        ang = 2 * math.pi * i / max(cfg.n_initial, 1) + rng.uniform(-0.2, 0.2)
        p = np.array([cx + radius * math.cos(ang), cy + radius * math.sin(ang)])
        aim = np.array([cx, cy]) + rng.uniform(-0.2, 0.2, size=2) * radius
        heading = (aim - p) / np.linalg.norm(aim - p)
        speed = cfg.initial_speed * rng.uniform(0.8, 1.2)
        out.append(np.concatenate([p, speed * heading]))
    return out


def _birth_state(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    x0, x1, y0, y1 = cfg.region
    # region core: central half of each axis
    px = rng.uniform(x0 + (x1 - x0) / 4, x1 - (x1 - x0) / 4)
    py = rng.uniform(y0 + (y1 - y0) / 4, y1 - (y1 - y0) / 4)
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(5.0, 15.0)
    return np.array([px, py, speed * math.cos(heading), speed * math.sin(heading)])


def generate_truth(cfg: ScenarioConfig) -> ScenarioTruth:
    rng = make_rng(cfg.seed, 0)
    F_cv = cv_transition(cfg.dt)
    Lq = np.sqrt(np.array(Q_DIAG))
    live: dict[int, np.ndarray] = {}
    turn: dict[int, float] = {}
    maneuvers: dict[int, list[tuple[int, np.ndarray]]] = {}
    truth = ScenarioTruth([])
    next_id = 0

    def spawn(x: np.ndarray, k: int) -> None:
        nonlocal next_id
        tid = next_id
        next_id += 1
        live[tid] = x
        truth.birth[tid] = k
        if cfg.kind == "nonlinear_ct":
            turn[tid] = rng.uniform(-math.pi / 18, math.pi / 18)
        if cfg.kind == "maneuvering":
            windows = []
            for _ in range(int(rng.integers(1, 3))):
                onset = int(rng.integers(k, k + cfg.duration))
                a = rng.uniform(0.0, 5.0)
                th = rng.uniform(-math.pi, math.pi)
                windows.append((onset, a * np.array([math.cos(th), math.sin(th)])))
            maneuvers[tid] = windows

    for x in _initial_tracks(cfg, rng):
        spawn(x, 1)
    for k in range(1, cfg.duration + 1):
        if k > 1:
            nxt = {}
            for tid in sorted(live):
                if rng.uniform() >= cfg.p_survive:
                    truth.death[tid] = k
                    continue
                x = live[tid]
                F = coordinated_turn_transition(turn[tid], cfg.dt) if tid in turn else F_cv
                x = F @ x + Lq * rng.standard_normal(4)
                for onset, acc in maneuvers.get(tid, ()):
                    if onset <= k < onset + 10:
                        x = x + np.concatenate([0.5 * acc * cfg.dt**2, acc * cfg.dt])
                nxt[tid] = x
            live = nxt
            for _ in range(int(rng.poisson(cfg.birth_rate))):
                spawn(_birth_state(cfg, rng), k)
        truth.states.append({tid: live[tid].copy() for tid in sorted(live)})
    return truth


def generate_measurements(truth: ScenarioTruth, cfg: ScenarioConfig, mm: MeasurementModel | None = None,
                          clutter: ClutterModel | None = None) -> list[MeasurementFrame]:
    rng = make_rng(cfg.seed, 1)
    mm = mm or measurement_model(cfg)
    clutter = clutter or clutter_model(cfg)
    Lr = np.linalg.cholesky(mm.R)
    frames = []
    for idx, states in enumerate(truth.states):
        k = idx + 1
        pd = cfg.p_detect_at(k)
        zs, origins = [], []
        for tid in sorted(states):
            if rng.uniform() < pd:
                x = states[tid]
                if mm.kind == "range_bearing" and math.hypot(x[0], x[1]) < mm.range_floor:
                    continue
                zhat, _ = mm.predict_batch(x[None, :])
                z = zhat[0] + Lr @ rng.standard_normal(mm.dim)
                if mm.kind == "range_bearing":
                    z[1] = float(wrap_angle(z[1]))
                zs.append(z)
                origins.append(tid)
        n_c = int(rng.poisson(clutter.rate))
        for _ in range(n_c):
            zs.append(rng.uniform(clutter.low, clutter.high))
            origins.append(CLUTTER)
        order = rng.permutation(len(zs))
        Z = np.array([zs[i] for i in order]).reshape(-1, mm.dim)
        frames.append(MeasurementFrame(k, Z, [origins[i] for i in order]))
    return frames


def stream_hash(frames: Iterable[MeasurementFrame]) -> str:
    h = hashlib.sha256()
    for f in frames:
        h.update(np.int64(f.k).tobytes())
        h.update(np.ascontiguousarray(f.measurements, dtype=np.float64).tobytes())
    return h.hexdigest()


def dump_scenario(path, truth: ScenarioTruth, frames: list[MeasurementFrame]) -> None:
    """Line-delimited JSON, one scan per line:
    ``{"step": k, "measurements": [[...], ...], "origins": [...], "truth": [{"id": i, "state": [...]}, ...]}``
    """
    with open(path, "w", encoding="utf-8") as fh:
        for frame, states in zip(frames, truth.states):
            rec = {"step": frame.k,
                   "measurements": frame.measurements.tolist(),
                   "origins": list(frame.origins),
                   "truth": [{"id": int(t), "state": states[t].tolist()} for t in sorted(states)]}
            fh.write(json.dumps(rec) + "\n")


def load_scenario(path) -> tuple[ScenarioTruth, list[MeasurementFrame]]:
    truth = ScenarioTruth([])
    frames = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        Z = np.asarray(rec["measurements"], dtype=float)
        dim = Z.shape[1] if Z.ndim == 2 and Z.size else 2
        frames.append(MeasurementFrame(int(rec["step"]), Z.reshape(-1, dim), list(rec.get("origins", []))))
        truth.states.append({int(t["id"]): np.asarray(t["state"], dtype=float) for t in rec.get("truth", [])})
    return truth, frames


def scenario_for_run(cfg: ScenarioConfig, master_seed: int, run_index: int) -> ScenarioConfig:
    return replace(cfg, seed=run_seed(master_seed, run_index))
