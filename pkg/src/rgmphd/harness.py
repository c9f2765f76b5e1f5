"""Experiment configuration, Monte Carlo orchestration and result files.

Config documents are flat key/value TOML (JSON also accepted). Sections are
allowed for readability but are flattened, so ``[adaptation] lambda_f = 0.2``
and a top-level ``lambda_f = 0.2`` mean the same thing. Every key is listed in
:data:`CONFIG_KEYS`; anything else is rejected.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import EmptyInput, ParseError, TrackingError, ValidationError
from .extended import ExtendedTargetModel, make_extended_update
from .gm import ComponentManagementConfig, GaussianMixture
from .metrics import OspaConfig, RunRecord, cardinality_stats, ospa
from .phd import StandardState, standard_step
from .robust import AdaptationConfig, RobustFilterConfig, RobustState, step
from .scenarios import (KINDS, ScenarioConfig, dump_scenario, generate_measurements, generate_truth,
                        load_scenario, models_for, scenario_for_run, stream_hash)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FILTERS = ("standard", "robust", "robust_extended", "robust_pinned")
CSV_HEADER = ["run", "step", "filter", "ospa", "n_true", "n_est", "alpha", "beta", "w_global",
              "runtime_ms", "max_cond", "components"]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    filters: tuple = ("standard", "robust")
    runs: int = 100
    seed: int = 0
    workers: int = 1
    out: str = "results"
    timing: bool = True
    debug: bool = False
    management: ComponentManagementConfig = field(default_factory=ComponentManagementConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    ospa: OspaConfig = field(default_factory=OspaConfig)
    extended_rate: float = 4.0
    birth_weight: float = 0.2
    birth_velocity_std: float = 10.0

    def __post_init__(self):
        if self.runs < 1:
            raise ValidationError("runs", "runs >= 1")
        if not self.filters:
            raise ValidationError("filters", "at least one filter")
        for f in self.filters:
            if f not in FILTERS:
                raise ValidationError("filters", f"each filter in {FILTERS}")
        if self.workers < 1:
            raise ValidationError("workers", "workers >= 1")


# key -> (section, field name, type); section None means ExperimentConfig itself
CONFIG_KEYS: dict[str, tuple[str | None, str, type]] = {
    "scenario": ("scenario", "kind", str),
    "kind": ("scenario", "kind", str),
    "duration": ("scenario", "duration", int),
    "dt": ("scenario", "dt", float),
    "birth_rate": ("scenario", "birth_rate", float),
    "clutter_rate": ("scenario", "clutter_rate", float),
    "p_detect": ("scenario", "p_detect", float),
    "p_survive": ("scenario", "p_survive", float),
    "intermittent": ("scenario", "intermittent", bool),
    "n_initial": ("scenario", "n_initial", int),
    "filters": (None, "filters", list),
    "runs": (None, "runs", int),
    "seed": (None, "seed", int),
    "workers": (None, "workers", int),
    "out": (None, "out", str),
    "timing": (None, "timing", bool),
    "debug": (None, "debug", bool),
    "extended_rate": (None, "extended_rate", float),
    "birth_weight": (None, "birth_weight", float),
    "birth_velocity_std": (None, "birth_velocity_std", float),
    "prune_threshold": ("management", "prune_threshold", float),
    "merge_threshold": ("management", "merge_threshold", float),
    "max_components": ("management", "max_components", int),
    "weight_floor": ("management", "weight_floor", float),
    "eig_floor": ("management", "eig_floor", float),
    "eig_ceiling": ("management", "eig_ceiling", float),
    "regularization": ("management", "regularization", float),
    "lambda_f": ("adaptation", "lambda_f", float),
    "lambda_g": ("adaptation", "lambda_g", float),
    "gamma": ("adaptation", "gamma", float),
    "gamma_w": ("adaptation", "gamma_w", float),
    "kurtosis_window": ("adaptation", "kurtosis_window", int),
    "nu_max": ("adaptation", "nu_max", float),
    "ospa_cutoff": ("ospa", "cutoff", float),
    "ospa_order": ("ospa", "order", float),
}
SECTIONS = ("scenario", "management", "adaptation", "ospa", "experiment", "filter")


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _decode(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from None
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ParseError(str(exc), line=int(m.group(1)) if m else None) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be a table")
    flat: dict = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                raise ParseError(f"unknown section {key!r}", line=_line_of(text, key), key=key)
            for k, v in value.items():
                if isinstance(v, dict):
                    raise ParseError("nested sections are not supported", line=_line_of(text, k), key=k)
                flat[k] = v
        else:
            flat[key] = value
    for key in flat:
        if key not in CONFIG_KEYS:
            raise ParseError(f"unknown key {key!r}", line=_line_of(text, key), key=key)
    return flat


def _coerce(key: str, value, typ: type):
    if typ is bool:
        if not isinstance(value, bool):
            raise ValidationError(key, "boolean")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(key, "integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(key, "number")
        if not math.isfinite(value):
            raise ValidationError(key, "finite number")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ValidationError(key, "string")
        return value
    if typ is list:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValidationError(key, "list of filter names")
        return tuple(value)
    raise AssertionError(typ)


def build_config(values: dict) -> ExperimentConfig:
    """Validated config from a flat key/value mapping (keys from CONFIG_KEYS)."""
    groups: dict = {None: {}, "scenario": {}, "management": {}, "adaptation": {}, "ospa": {}}
    for key, value in values.items():
        if key not in CONFIG_KEYS:
            raise ValidationError(key, "known configuration key")
        section, name, typ = CONFIG_KEYS[key]
        groups[section][name] = _coerce(key, value, typ)
    kind = groups["scenario"].get("kind", "linear")
    if kind not in KINDS:
        raise ValidationError("scenario", f"one of {KINDS}")

    def make(section, cls):
        try:
            return cls(**groups[section])
        except ValidationError:
            raise
        except ValueError as exc:
            raise ValidationError(section, str(exc)) from None

    top = groups[None]
    for key, rule in (("runs", lambda v: v >= 1), ("workers", lambda v: v >= 1),
                      ("extended_rate", lambda v: v >= 0), ("birth_weight", lambda v: v >= 0),
                      ("birth_velocity_std", lambda v: v > 0)):
        if key in top and not rule(top[key]):
            raise ValidationError(key, {"runs": "runs >= 1", "workers": "workers >= 1",
                                        "birth_velocity_std": "birth_velocity_std > 0"}.get(key, f"{key} >= 0"))
    return ExperimentConfig(scenario=make("scenario", ScenarioConfig), management=make("management",
                            ComponentManagementConfig), adaptation=make("adaptation", AdaptationConfig),
                            ospa=make("ospa", OspaConfig), **top)


def parse_config(text: str) -> ExperimentConfig:
    return build_config(_decode(text))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- filters

def _filter_runner(name: str, cfg: ExperimentConfig, models):
    """Returns (initial_state, step_fn(state, Z) -> (state, diagnostics))."""
    if name == "standard":
        return StandardState(GaussianMixture.empty(4)), lambda s, Z: standard_step(s, Z, models, cfg.management)
    rcfg = RobustFilterConfig(cfg.management, cfg.adaptation, adaptive=name != "robust_pinned", debug=cfg.debug)
    upd = make_extended_update(ExtendedTargetModel(cfg.extended_rate)) if name == "robust_extended" else None
    return RobustState.initial(4, rcfg), lambda s, Z: step(s, Z, models, rcfg, measurement_update=upd)


def run_filter(name: str, truth, frames, cfg: ExperimentConfig, models=None, run: int = 0,
               keep_estimates: bool = False):
    """Run one filter over a measurement stream; returns (RunRecord, estimates per step)."""
    models = models or models_for(cfg.scenario, cfg.birth_weight, cfg.birth_velocity_std)
    rec = RunRecord(run=run, filter=name, stream_hash=stream_hash(frames))
    estimates = []
    state, fn = _filter_runner(name, cfg, models)
    truth_sets = truth.state_arrays()
    try:
        for frame, X in zip(frames, truth_sets):
            state, d = fn(state, frame.measurements)
            est = np.array(d.estimates).reshape(-1, 4)
            if keep_estimates:
                estimates.append(est)
            rec.ospa.append(ospa(X, est, cfg.ospa))
            rec.n_true.append(len(X))
            rec.n_est.append(len(est))
            rec.max_cond.append(d.max_cond if len(state.mixture) else 1.0)
            rec.runtime_ms.append(sum(d.runtime_ms.values()) if cfg.timing else 0.0)
            rec.alpha.append(d.alpha)
            rec.beta.append(d.beta)
            rec.w_global.append(d.w_global)
            rec.components.append(d.component_count)
            rec.total_mass.append(d.total_mass)
    except (TrackingError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec, estimates


def _run_one(args) -> tuple[list[RunRecord], dict]:
    cfg, run, dump_dir = args
    scfg = scenario_for_run(cfg.scenario, cfg.seed, run)
    truth = generate_truth(scfg)
    frames = generate_measurements(truth, scfg)
    models = models_for(scfg, cfg.birth_weight, cfg.birth_velocity_std)
    out = []
    for name in cfg.filters:
        rec, est = run_filter(name, truth, frames, cfg, models, run, keep_estimates=dump_dir is not None)
        out.append(rec)
        if dump_dir is not None:
            write_estimates(Path(dump_dir) / f"estimates_{name}_run{run}.jsonl", est)
    if dump_dir is not None:
        dump_scenario(Path(dump_dir) / f"scenario_run{run}.jsonl", truth, frames)
    return out


def run_monte_carlo(cfg: ExperimentConfig, workers: int | None = None, dump_dir=None):
    """All runs of all selected filters; returns (records sorted by run then filter order, report)."""
    workers = cfg.workers if workers is None else workers
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, r, dump_dir) for r in range(cfg.runs)]
    if workers <= 1:
        results = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    records = [rec for res in results for rec in res]
    order = {f: i for i, f in enumerate(cfg.filters)}
    records.sort(key=lambda r: (r.run, order[r.filter]))
    return records, summarize(records, cfg.filters)


# ---------------------------------------------------------------- summary

@dataclass
class FilterSummary:
    ospa_mean: float
    ospa_std: float
    mu_n: float
    sigma_n: float
    runtime_ms: float
    max_cond: float
    components_mean: float
    components_max: int
    runs_ok: int
    runs_failed: int


@dataclass
class SummaryReport:
    filters: dict
    improvement_pct: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"filters": {k: asdict(v) for k, v in self.filters.items()},
                "improvement_pct": dict(self.improvement_pct)}

    @classmethod
    def from_dict(cls, d: dict) -> SummaryReport:
        return cls({k: FilterSummary(**v) for k, v in d["filters"].items()}, dict(d.get("improvement_pct", {})))


def _mean(xs) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else math.nan


def summarize(records, filters) -> SummaryReport:
    """Aggregates over successful runs; OSPA mean/std are taken across per-run means."""
    out = {}
    for name in filters:
        recs = [r for r in records if r.filter == name]
        ok = sorted((r for r in recs if not r.failed), key=lambda r: r.run)
        run_means = [_mean(r.ospa) for r in ok]
        if ok:
            m = _mean(run_means)
            sd = math.sqrt(_mean((x - m) ** 2 for x in run_means))
            try:
                mu_n, sigma_n = cardinality_stats(ok)
            except EmptyInput:
                mu_n = sigma_n = math.nan
            rt = [t for r in ok for t in r.runtime_ms[1:]]
            comps = [c for r in ok for c in r.components]
            out[name] = FilterSummary(m, sd, mu_n, sigma_n, _mean(rt) if rt else 0.0,
                                      max((c for r in ok for c in r.max_cond), default=1.0),
                                      _mean(comps) if comps else 0.0, max(comps, default=0),
                                      len(ok), len(recs) - len(ok))
        else:
            out[name] = FilterSummary(math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, 0,
                                      0, len(recs))
    imp = {}
    for a in filters:
        for b in filters:
            if a == b or a != "standard":
                continue
            base, new = out[a], out[b]
            imp[f"{b}_vs_{a}"] = {
                "ospa": 100.0 * (base.ospa_mean - new.ospa_mean) / base.ospa_mean if base.ospa_mean else math.nan,
                "sigma_n": 100.0 * (base.sigma_n - new.sigma_n) / base.sigma_n if base.sigma_n else math.nan,
            }
    return SummaryReport(out, imp)


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def steps_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_HEADER)
    for r in records:
        if r.failed:
            continue
        for i in range(len(r)):
            w.writerow([r.run, i + 1, r.filter, _fmt(r.ospa[i]), r.n_true[i], r.n_est[i], _fmt(r.alpha[i]),
                        _fmt(r.beta[i]), _fmt(r.w_global[i]), _fmt(r.runtime_ms[i]), _fmt(r.max_cond[i]),
                        r.components[i]])
    return buf.getvalue()


def ospa_series_csv(records, filters) -> str:
    ok = [r for r in records if not r.failed]
    K = max((len(r) for r in ok), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["step", *filters])
    for k in range(K):
        row = [k + 1]
        for name in filters:
            vals = [r.ospa[k] for r in ok if r.filter == name and len(r) > k]
            row.append(_fmt(_mean(vals)) if vals else "")
        w.writerow(row)
    return buf.getvalue()


def emit_results(records, report: SummaryReport, out_dir, filters=None) -> dict:
    out = Path(out_dir)
    filters = filters or list(report.filters)
    paths = {"steps": out / "steps.csv", "summary": out / "summary.json", "series": out / "ospa_series.csv"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["steps"].write_text(steps_csv(records), encoding="utf-8", newline="")
        paths["summary"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths["series"].write_text(ospa_series_csv(records, filters), encoding="utf-8", newline="")
        failed = [{"run": r.run, "filter": r.filter, "error": r.error} for r in records if r.failed]
        if failed:
            (out / "failures.json").write_text(json.dumps(failed, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return paths


def write_estimates(path, estimates) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, est in enumerate(estimates, 1):
            fh.write(json.dumps({"step": k, "estimates": np.asarray(est).tolist()}) + "\n")


def load_estimates(path) -> list[np.ndarray]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append(np.asarray(rec["estimates"], dtype=float).reshape(-1, 4))
    return out


def replay(dump_path, name: str, cfg: ExperimentConfig | None = None):
    """Run one filter over a dumped scenario file."""
    cfg = cfg or ExperimentConfig()
    truth, frames = load_scenario(dump_path)
    return run_filter(name, truth, frames, cfg, keep_estimates=True)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Copy of cfg with top-level or scenario overrides applied and revalidated."""
    scen = {k: kw.pop(k) for k in list(kw) if k in {f.name for f in fields(ScenarioConfig)}}
    s = replace(cfg.scenario, **scen) if scen else cfg.scenario
    return replace(cfg, scenario=s, **kw)
