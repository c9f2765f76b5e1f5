"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line."""

import csv
import io
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import H_POS, random_mixture, random_spd

from rgmphd.extended import ExtendedTargetModel, Partition, enumerate_partitions, extended_update
from rgmphd.gm import (ComponentManagementConfig, GaussianMixture, gaussian_density, prune_and_merge,
                       sample_student_t)
from rgmphd.harness import ExperimentConfig, run_monte_carlo, with_overrides
from rgmphd.metrics import OspaConfig, ospa, ospa_bruteforce
from rgmphd.models import ClutterModel, MeasurementModel, MotionModel, SpawnModel, SpawnTerm, cv_transition
from rgmphd.phd import StandardState, predict, standard_step, update
from rgmphd.robust import (AdaptationConfig, RobustFilterConfig, RobustnessState, RobustState, adapt_parameters,
                           robust_likelihood, robust_update, step, t_scale_factor)
from rgmphd.scenarios import ScenarioConfig, generate_measurements, generate_truth, models_for

BELL = [1, 1, 2, 5, 15, 52, 203]


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


def _component_rel(a, b):
    """Largest per-component relative error (norm of difference over norm of reference)."""
    a, b = np.asarray(a), np.asarray(b)
    if not a.size:
        return 0.0
    axes = tuple(range(1, a.ndim))
    num = np.sqrt(np.sum((a - b) ** 2, axis=axes)) if axes else np.abs(a - b)
    den = np.sqrt(np.sum(b ** 2, axis=axes)) if axes else np.abs(b)
    return float(np.max(num / np.maximum(den, np.finfo(float).tiny)))


def test_01_reduction_oracle(report):
    t0 = time.perf_counter()
    cfg = ScenarioConfig(kind="linear", seed=2024, duration=100)
    truth = generate_truth(cfg)
    frames = generate_measurements(truth, cfg)
    models = models_for(cfg)
    mcfg = ComponentManagementConfig()
    rcfg = RobustFilterConfig(mcfg, AdaptationConfig(), adaptive=False)
    s_std = StandardState(GaussianMixture.empty(4))
    s_rob = RobustState.initial(4, rcfg)
    worst, same_len = 0.0, True
    for f in frames:
        s_std, _ = standard_step(s_std, f.measurements, models, mcfg)
        s_rob, _ = step(s_rob, f.measurements, models, rcfg)
        a, b = s_rob.mixture, s_std.mixture
        if len(a) != len(b):
            same_len = False
            break
        worst = max(worst, _component_rel(a.weights, b.weights), _component_rel(a.means, b.means),
                    _component_rel(a.covs, b.covs))
    elapsed = time.perf_counter() - t0
    report(1, same_len and worst <= 1e-9 and elapsed < 5.0,
           f"max rel err {worst:.2e} (tol 1e-9), same component counts {same_len}, {elapsed:.2f} s (< 5 s)")


def test_02_component_count_identities(report):
    rng = np.random.default_rng(2)
    motion = MotionModel(cv_transition(), np.diag([1.0, 1.0, 0.5, 0.5]), 0.99)
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.98, H=H_POS)
    clutter = ClutterModel(10.0, [-1000, -1000], [1000, 1000])
    bad = 0
    for _ in range(1000):
        J = int(rng.integers(0, 15))
        J_beta = int(rng.integers(0, 3))
        J_gamma = int(rng.integers(0, 5))
        n_z = int(rng.integers(0, 12))
        prior = random_mixture(rng, J) if J else GaussianMixture.empty(4)
        spawn = SpawnModel(tuple(SpawnTerm(0.05, cv_transition(), rng.normal(0, 5, 4), np.eye(4))
                                 for _ in range(J_beta)))
        birth = random_mixture(rng, J_gamma) if J_gamma else GaussianMixture.empty(4)
        pred = predict(prior, motion, spawn, birth)
        post = update(pred, rng.uniform(-1000, 1000, (n_z, 2)), mm, clutter)
        rpost = robust_update(pred, rng.uniform(-1000, 1000, (n_z, 2)), mm, clutter, RobustnessState.initial())
        J_pred = J * (1 + J_beta) + J_gamma
        bad += (len(pred) != J_pred) + (len(post) != J_pred * (1 + n_z)) + (len(rpost) != J_pred * (1 + n_z))
    report(2, bad == 0, f"{bad} count mismatches over 1000 randomized predict/update steps")


def test_03_ospa_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(10_000):
        X = rng.uniform(-150, 150, (int(rng.integers(0, 6)), 2))
        Y = rng.uniform(-150, 150, (int(rng.integers(0, 6)), 2))
        cfg = OspaConfig(100.0, 1.0 if i % 2 == 0 else 2.0)
        worst = max(worst, abs(ospa(X, Y, cfg) - ospa_bruteforce(X, Y, cfg)))
    elapsed = time.perf_counter() - t0
    report(3, worst <= 1e-12 and elapsed < 30.0,
           f"max |ospa - brute force| {worst:.2e} over 10^4 pairs (tol 1e-12), {elapsed:.2f} s (< 30 s)")


def test_04_merge_moment_preservation(report):
    rng = np.random.default_rng(4)
    cfg = ComponentManagementConfig(prune_threshold=0.0, merge_threshold=1e300)
    w_err = m_err = P_err = 0.0
    for _ in range(10_000):
        w = rng.uniform(0.01, 2.0, 2)
        m = rng.normal(0, 20, (2, 4))
        P = np.array([random_spd(rng, 4) for _ in range(2)])
        out = prune_and_merge(GaussianMixture(w, m, P), cfg)
        assert len(out) == 1
        wt = w[0] + w[1]
        mt = (w[0] * m[0] + w[1] * m[1]) / wt
        # second moment of the sub-mixture about its mean
        second = sum(w[i] * (P[i] + np.outer(m[i], m[i])) for i in range(2)) / wt - np.outer(mt, mt)
        w_err = max(w_err, abs(out.weights[0] - wt))
        m_err = max(m_err, np.linalg.norm(out.means[0] - mt) / np.linalg.norm(mt))
        P_err = max(P_err, np.linalg.norm(out.covs[0] - second) / np.linalg.norm(second))
    report(4, w_err == 0.0 and m_err <= 1e-10 and P_err <= 1e-10,
           f"weight err {w_err:.1e} (exact), mean rel err {m_err:.2e}, cov rel err {P_err:.2e} (tol 1e-10)")


def test_05_heavy_tail_consistency(report):
    rng = np.random.default_rng(5)
    S = np.array([[10.0, 3.0], [3.0, 4.0]])
    nu = 6.0
    draws = sample_student_t(rng, np.zeros(2), t_scale_factor(nu) * S, nu, 1_000_000)
    C = np.cov(draws, rowvar=False)
    cov_err = float(np.max(np.abs(C - S) / np.sqrt(np.outer(np.diag(S), np.diag(S)))))
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.9, H=H_POS)
    lik_err = 0.0
    for i in range(200):
        comp = random_mixture(rng, 1, spread=50).components[0]
        z = H_POS @ comp.mean + rng.normal(0, 8, 2)
        Sg = H_POS @ comp.cov @ H_POS.T + mm.R
        ref = gaussian_density(z, H_POS @ comp.mean, Sg)
        lik_err = max(lik_err, abs(robust_likelihood(z, comp, mm, 6.0, 0.0) - ref) / ref)
    report(5, cov_err <= 0.01 and lik_err <= 1e-14,
           f"t(6) sample cov max rel err {cov_err:.4f} (tol 0.01), beta=0 vs Gaussian rel err {lik_err:.1e} "
           f"(tol 1e-14)")


def test_06_adaptation_laws(report):
    rng = np.random.default_rng(6)
    cfg = AdaptationConfig()
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.9, H=H_POS)
    motion = MotionModel(cv_transition(), np.diag([1.0, 1.0, 0.5, 0.5]), 0.99)
    checks = []
    # alpha(0) = 0: prediction is exactly F m
    prior = GaussianMixture([1.0], [[0.0, 0.0, 1.0, 1.0]], [np.eye(4)])
    pred = GaussianMixture([0.99], [cv_transition() @ prior.means[0]], [np.eye(4)])
    rs = adapt_parameters(prior, pred, [[1.0, 1.0]], mm, cfg, RobustnessState.initial(cfg), motion=motion)
    checks.append(rs.alpha == 0.0)
    # eps_f = 5 with unit covariance: alpha = 1 - e^-0.5
    shifted = GaussianMixture([0.99], [pred.means[0] + [5.0, 0, 0, 0]], [np.eye(4)])
    rs = adapt_parameters(prior, shifted, [[1.0, 1.0]], mm, cfg, RobustnessState.initial(cfg), motion=motion)
    checks.append(abs(rs.eps_f - 5.0) <= 1e-15 and abs(rs.alpha - 0.393469340287366576) <= 1e-15)
    # pointwise law on random mismatches, eps_f against an explicit-inverse oracle
    worst = 0.0
    for _ in range(200):
        prior = random_mixture(rng, 3)
        P = np.array([random_spd(rng, 4) for _ in range(3)])
        means = prior.means @ cv_transition().T + rng.normal(0, 3, (3, 4))
        pred = GaussianMixture(prior.weights, means, P)
        rs = adapt_parameters(prior, pred, [[0.0, 0.0]], mm, cfg, RobustnessState.initial(cfg), motion=motion)
        d = means - prior.means @ cv_transition().T
        eps = np.mean([math.sqrt(d[i] @ np.linalg.inv(P[i]) @ d[i]) for i in range(3)])
        worst = max(worst, abs(rs.eps_f - eps) / eps, abs(rs.alpha - (1 - math.exp(-cfg.lambda_f * eps))))
    checks.append(bool(worst <= 1e-12))
    # sum of credibilities
    sum_err = 0.0
    for _ in range(500):
        pred = random_mixture(rng, int(rng.integers(1, 8)))
        Z = rng.uniform(-400, 400, (int(rng.integers(1, 40)), 2))
        rs = adapt_parameters(GaussianMixture.empty(4), pred, Z, mm, cfg, RobustnessState.initial(cfg))
        sum_err = max(sum_err, abs(math.fsum(rs.w_meas.tolist()) - 1.0))
    checks.append(sum_err <= 1e-12)
    # logistic balance point
    pred = GaussianMixture([1.0, 1.0 / 3.0], np.zeros((2, 4)), [np.eye(4)] * 2)
    mm_half = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.75, H=H_POS)      # p_D * mass = 1
    rs = adapt_parameters(GaussianMixture.empty(4), pred, [[0.0, 0.0]], mm_half, cfg, RobustnessState.initial(cfg))
    checks.append(rs.w_global == 0.5)
    report(6, all(checks), f"alpha(0)=0, alpha(5)=0.393469, pointwise err {worst:.1e}, "
                           f"sum w(z) err {sum_err:.1e}, balance w_global {rs.w_global}; checks {checks}")


@pytest.mark.slow
def test_07_directional_robustness(report):
    t0 = time.perf_counter()
    cfg = with_overrides(ExperimentConfig(), kind="high_clutter", runs=50, seed=7, timing=False,
                         filters=("standard", "robust"))
    records, rep = run_monte_carlo(cfg, workers=os.cpu_count() or 1)
    s, r = rep.filters["standard"], rep.filters["robust"]
    elapsed = time.perf_counter() - t0
    ok = r.ospa_mean <= s.ospa_mean and r.sigma_n <= s.sigma_n and elapsed < 600
    report(7, ok, f"OSPA robust {r.ospa_mean:.2f} vs standard {s.ospa_mean:.2f}; card RMSE robust "
                  f"{r.sigma_n:.3f} vs standard {s.sigma_n:.3f}; failed runs {r.runs_failed + s.runs_failed}; "
                  f"{elapsed:.0f} s (< 600 s)")


@pytest.mark.slow
def test_08_stability_mass_bound(report):
    bound = ComponentManagementConfig().condition_bound
    lines, ok = [], True
    for kind in ("linear", "nonlinear_ct", "high_clutter", "maneuvering"):
        cfg = with_overrides(ExperimentConfig(), kind=kind, runs=50, seed=8, timing=False,
                             filters=("standard", "robust"))
        records, _ = run_monte_carlo(cfg, workers=os.cpu_count() or 1)
        violations = failed = 0
        worst_ratio = worst_cond = 0.0
        for rec in records:
            failed += rec.failed
            for m, n in zip(rec.total_mass, rec.n_true):
                ceiling = 10.0 * max(n, 1)
                violations += m > ceiling
                worst_ratio = max(worst_ratio, m / ceiling)
            worst_cond = max(worst_cond, max(rec.max_cond, default=1.0))
        ok &= violations == 0 and failed == 0 and worst_cond <= bound
        lines.append(f"{kind}: mass/ceiling {worst_ratio:.3f}, max cond {worst_cond:.2e}, "
                     f"violations {violations}, failed {failed}")
    report(8, ok, "; ".join(lines) + f" (cond bound {bound:.0e})")


def _median_update_ms(J, M, rng, reps=15):
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.98, H=H_POS)
    clutter = ClutterModel(10.0, [-1000, -1000], [1000, 1000])
    pred = random_mixture(rng, J, spread=500)
    Z = rng.uniform(-500, 500, (M, 2))
    rs = adapt_parameters(GaussianMixture.empty(4), pred, Z, mm, AdaptationConfig(), RobustnessState.initial())
    robust_update(pred, Z, mm, clutter, rs)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        robust_update(pred, Z, mm, clutter, rs)
        times.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(times))


def test_09_complexity_scaling(report):
    rng = np.random.default_rng(9)
    sizes = [(100, 40), (100, 60), (140, 60), (140, 80), (160, 100)]     # J*|Z| from 4000 to 16000
    x = np.array([J * M for J, M in sizes], dtype=float)
    y = np.array([_median_update_ms(J, M, rng) for J, M in sizes])
    slope = float(np.polyfit(np.log(x), np.log(y), 1)[0])
    report(9, 0.8 <= slope <= 1.3, f"log-log slope {slope:.3f} over J*|Z| {x[0]:.0f}..{x[-1]:.0f} "
                                   f"(range [0.8, 1.3]); medians ms {np.round(y, 2).tolist()}")


def test_10_extended_target(report):
    counts = [len(enumerate_partitions(np.zeros((n, 2)))) for n in range(7)]
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.9, H=H_POS)
    clutter = ClutterModel(10.0, [-1000, -1000], [1000, 1000])
    rng = np.random.default_rng(10)
    pred = random_mixture(rng, 3, spread=20)
    Z = np.array([[0.0, 0.0], [5.0, 5.0]])
    parts = [Partition(((0,), (1,)))]
    low = RobustnessState(w_meas=np.array([1e-7, 1 - 1e-7]))
    n_low = len(extended_update(pred, Z, parts, ExtendedTargetModel(), mm, clutter, low))
    empty_rs = RobustnessState(w_global=0.6)
    out = extended_update(pred, np.zeros((0, 2)), [], ExtendedTargetModel(), mm, clutter, empty_rs)
    exact = (np.array_equal(out.weights, (1 - 0.6 * 0.9) * pred.weights) and np.array_equal(out.means, pred.means)
             and np.array_equal(out.covs, pred.covs))
    ok = counts == BELL and n_low == 3 * 2 and exact
    report(10, ok, f"partition counts {counts} (Bell {BELL}); components with a 1e-7 cell {n_low} (expect 6); "
                   f"empty-Z exact {exact}")


def _canonical(path):
    rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
    body = sorted(rows[1:], key=lambda r: (int(r[0]), int(r[1]), r[2]))
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerows([rows[0], *body])
    return buf.getvalue().encode("utf-8")


def test_11_cli_determinism(report, tmp_path):
    conf = tmp_path / "exp.toml"
    conf.write_text('scenario = "high_clutter"\nruns = 3\nduration = 25\nseed = 11\n'
                    'filters = ["standard", "robust", "robust_extended"]\n')
    outs = []
    for i, workers in enumerate((1, 1, 2)):
        out = tmp_path / f"out{i}"
        code = subprocess.run([sys.executable, "-m", "rgmphd.cli", "run", "--config", str(conf), "--out", str(out),
                               "--workers", str(workers), "--no-timing"], capture_output=True).returncode
        outs.append((code, _canonical(out / "steps.csv") if code == 0 else b""))
    codes = [c for c, _ in outs]
    same = outs[0][1] == outs[1][1] == outs[2][1] and len(outs[0][1]) > 0
    report(11, codes == [0, 0, 0] and same, f"exit codes {codes}; canonical CSV byte-identical across repeat "
                                            f"and worker counts 1/2: {same}")
