"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the pytest terminal
summary under "acceptance criteria".
"""

import logging
import math
import os
import statistics
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from hacpo import oracle
from hacpo.advantage import hacpo_advantages, single_agent_advantage
from hacpo.capability import CapabilityTracker
from hacpo.core import Prompt
from hacpo.harness import load_config
from hacpo.harness.verify import reference_instance
from hacpo.trainer import Mode, run
from hacpo.weighting import ClipConfig, exp_reweight, stepwise_clip

from helpers import group, record

log = logging.getLogger("acceptance")
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MAIN_CONFIG = os.path.join(ROOT, "configs", "substring_weak_strong.yaml")
SEEDS = range(10)


def _mc_setup(perturb=1.0):
    policies, toks, task = reference_instance()
    tracker = oracle.oracle_seeded_tracker(policies, toks, task, Prompt(0), perturb=perturb)
    return policies, toks, task, tracker


def test_criterion_1_unbiasedness():
    start = time.perf_counter()
    policies, toks, task, tracker = _mc_setup()
    reports = oracle.check_unbiasedness(policies, toks, task, tracker, G=8, trials=100_000, seed=0)
    negative = oracle.check_unbiasedness(*_mc_setup(perturb=0.5), G=8, trials=100_000, seed=0)
    elapsed = time.perf_counter() - start
    ok = all(r.passed for r in reports) and not any(r.passed for r in negative) and elapsed < 30
    record(1, ok, " ".join(f"|stat|={abs(r.statistic):.2e}<=4SE={r.bound:.2e}" for r in reports)
           + f"; control fails: {[not r.passed for r in negative]}; {elapsed:.1f}s")
    assert all(r.passed for r in reports)
    assert not any(r.passed for r in negative)
    assert elapsed < 30


def test_criterion_2_corollary():
    reports = oracle.check_corollary(*_mc_setup(), G=8, trials=100_000, seed=0)
    ok = all(r.passed for r in reports)
    record(2, ok, " ".join(f"|mean A_raw|={abs(r.statistic):.2e}<=4SE={r.bound:.2e}" for r in reports))
    assert ok


def test_criterion_3_alignment():
    start = time.perf_counter()
    reports = [oracle.check_alignment(trials=200, seed=0, vocab=4, length=2, alpha=a, collaborator="competent")
               for a in (0.0, 1.0, 3.0)]
    elapsed = time.perf_counter() - start
    ok = all(r.passed for r in reports) and elapsed < 60
    record(3, ok, " ".join(f"alpha={r.details['alpha']:g}:{r.statistic:.3f}" for r in reports)
           + f" (threshold 0.95); {elapsed:.1f}s")
    assert ok


def test_criterion_4_gradients():
    reports = oracle.check_gradients(trials=100, seed=0)
    ok = all(r.passed for r in reports)
    record(4, ok, " ".join(f"{r.suite}={r.statistic:.1e}" for r in reports) + " (tol 1e-5)")
    assert ok


def test_criterion_5_clipping():
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(10_000):
        delta = rng.uniform(0.01, 0.99)
        M = int(rng.integers(1, 17))
        step = rng.uniform(0.0, (delta - 1e-6) / max(M - 1, 1)) if rng.random() < 0.9 else 0.0
        cfg = ClipConfig(delta=delta, delta_step=step, alpha=rng.uniform(0.0, 4.0))
        cfg.validate(M)
        m = int(rng.integers(0, M))
        s = float(np.exp(rng.uniform(-6, 2)))
        s_eff, _ = exp_reweight(s, cfg.alpha)
        value, clipped, _ = stepwise_clip(s_eff, cfg, m)
        bounds = [cfg.lower_bound(i) for i in range(M)]
        checks = [
            bounds[m] <= value <= 1.0,
            step == 0.0 or all(b < c for b, c in zip(bounds, bounds[1:])),
            value <= 1.0 and (clipped or s_eff <= 1.0),
        ]
        if s < 1.0:
            hi_alpha, _ = exp_reweight(s, cfg.alpha + rng.uniform(0.01, 2.0))
            checks.append(hi_alpha < s_eff <= s)
        failures += not all(checks)
    record(5, failures == 0, f"{failures} violations in 10000 randomized cases")
    assert failures == 0


def test_criterion_6_estimator_invariances():
    rng = np.random.default_rng(1)
    scale_err = recip_err = 0.0
    collapse_ok = naive_ok = True
    for _ in range(500):
        n, G = int(rng.integers(2, 4)), int(rng.integers(2, 9))
        rewards = {k: rng.integers(0, 2, size=G).astype(float).tolist() for k in range(n)}
        hist = {k: rng.uniform(0.05, 1.0, size=int(rng.integers(1, 6))) for k in range(n)}
        c = rng.uniform(0.1, 1.0)
        t, u = CapabilityTracker(), CapabilityTracker()
        for k, ps in hist.items():
            for p in ps:
                t.record_mean(k, float(p))
                u.record_mean(k, float(c * p))
        for k in range(n):
            for j in range(n):
                recip_err = max(recip_err, abs(t.capability_ratio(k, j) * t.capability_ratio(j, k) - 1.0))
        a = hacpo_advantages(group(rewards), t)
        b = hacpo_advantages(group({k: [c * r for r in v] for k, v in rewards.items()}), u)
        for key, e in a.per_rollout.items():
            f = b.per_rollout[key]
            scale_err = max(scale_err, abs(e.A - f.A), *(abs(e.A_tilde[k] - f.A_tilde[k]) for k in e.A_tilde))

        solo = group({0: rewards[0]})
        adv = hacpo_advantages(solo, CapabilityTracker.seeded({0: float(hist[0][0])}))
        collapse_ok &= [adv.A(0, i) for i in range(G)] == single_agent_advantage(rewards[0])

        p = float(rng.uniform(0.0, 1.0))
        twins = CapabilityTracker.seeded({0: p, 1: p})
        pair = group({0: rewards[0], 1: rewards[1]})
        naive_ok &= hacpo_advantages(pair, twins).per_rollout == hacpo_advantages(pair, None, naive=True).per_rollout
    ok = scale_err <= 1e-9 and recip_err <= 1e-12 and collapse_ok and naive_ok
    record(6, ok, f"scale err {scale_err:.1e} (tol 1e-9); reciprocity err {recip_err:.1e} (tol 1e-12); "
                  f"n=1 collapse exact={collapse_ok}; naive equivalence exact={naive_ok}")
    assert ok


@pytest.fixture(scope="module")
def paired_runs():
    base = load_config(MAIN_CONFIG)
    start = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        for mode in (Mode.HACPO, Mode.GSPO_SINGLE):
            runs[(mode, seed)] = run(replace(base, seed=seed, mode=mode))
    return runs, time.perf_counter() - start


def test_criterion_7_main_effect(paired_runs):
    runs, elapsed = paired_runs

    def final(mode, seed, agent):
        return runs[(mode, seed)][-1]["per_agent"][agent]["expected_reward"]

    weak = [final(Mode.HACPO, s, 0) - final(Mode.GSPO_SINGLE, s, 0) for s in SEEDS]
    strong = [final(Mode.HACPO, s, 1) - final(Mode.GSPO_SINGLE, s, 1) for s in SEEDS]
    wins = sum(d >= 0 for d in weak)
    median_strong = statistics.median(strong)
    ok = wins >= 8 and median_strong >= -0.02 and elapsed < 300
    record(7, ok, f"weak agent HACPO>=GSPO_single in {wins}/10 pairs (median delta {statistics.median(weak):+.4f}); "
                  f"strong median delta {median_strong:+.4f} (>= -0.02); {elapsed:.0f}s")
    assert wins >= 8
    assert median_strong >= -0.02
    assert elapsed < 300


def test_criterion_8_ratio_pattern(paired_runs):
    runs, _ = paired_runs
    worst_dev, ratios = 0.0, []
    for seed in SEEDS:
        stats = [r["ratio_stats"] for r in runs[(Mode.HACPO, seed)]]
        homo = [s["s_homo_mean"] for s in stats]
        hete = [s["s_hete_mean"] for s in stats]
        worst_dev = max(worst_dev, max(abs(h - 1.0) for h in homo))
        homo_range, hete_range = max(homo) - min(homo), max(hete) - min(hete)
        ratios.append(hete_range / homo_range if homo_range > 0 else math.inf)
        log.warning("seed %d: s_homo mean %.5f range %.5f | s_hete mean %.5f range %.5f", seed,
                    statistics.fmean(homo), homo_range, statistics.fmean(hete), hete_range)
    ok = worst_dev <= 0.01 and min(ratios) >= 5
    detail = f"max |s_homo_mean - 1| = {worst_dev:.4f} (<= 0.01); hete/homo range ratio min {min(ratios):.1f}x (>= 5x)"
    record(8, ok, detail, warning=True)
    if not ok:
        warnings.warn(f"ratio pattern not reproduced: {detail}")


def test_criterion_9_determinism(tmp_path):
    cfg = replace(load_config(MAIN_CONFIG), steps=30, seed=5)
    run(cfg, tmp_path / "a", workers=1)
    run(cfg, tmp_path / "b", workers=1)
    run(cfg, tmp_path / "c", workers=4)
    files = [(tmp_path / d / "metrics.jsonl").read_bytes() for d in "abc"]
    ckpts = [(tmp_path / d / "checkpoints" / "agent_0.json").read_bytes() for d in "abc"]
    ok = files[0] == files[1] == files[2] and ckpts[0] == ckpts[1] == ckpts[2]
    record(9, ok, "metrics and checkpoints byte-identical for repeated runs and for 1 vs 4 workers")
    assert ok
