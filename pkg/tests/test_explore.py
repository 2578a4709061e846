import dataclasses
import math

import numpy as np
import pytest

from haptic_workbench import _kernels as kern
from haptic_workbench.catalog import default_catalog, stiffness_pairs
from haptic_workbench.config import DEFAULT_CONFIG
from haptic_workbench.explore import (BENCHMARK, COMPLETED, DROPPED, FULL, TrialConfig, benchmark_targets,
                                      default_grasp_model, reachable_targets, run_trial, run_with_retries, trial_seed)

from .oracles import squeeze_closure

CATALOG = {o.name: o for o in default_catalog()}
BY_ID = {o.id: o for o in default_catalog()}
IDEAL_ENCODERS = dataclasses.replace(DEFAULT_CONFIG, hand=dataclasses.replace(DEFAULT_CONFIG.hand, encoder_noise=0.0))


@pytest.fixture(scope="module")
def gmm():
    return default_grasp_model(0)


def phase_rows(trace, phase):
    return trace[trace[:, kern.TR_PHASE] == phase]


def test_rigid_large_object_completes_within_tolerance(gmm):
    cfg = TrialConfig()
    rec = run_trial(CATALOG["coffee_can"], cfg, np.random.default_rng(0), gmm, keep_trace=True)
    assert rec.outcome == COMPLETED
    last = phase_rows(rec.trace, kern.PH_STABILIZE)[-1]
    assert last[kern.TR_AREF] == rec.alpha_ref
    assert abs(last[kern.TR_ALPHA] - rec.alpha_ref) < cfg.tolerance


def test_completed_record_has_every_block(gmm):
    rec = run_trial(CATALOG["apple"], TrialConfig(), np.random.default_rng(1), gmm)
    assert rec.completed
    shapes = [b.shape for b in (rec.theta_init, rec.theta_fin, rec.theta_wrap, rec.tau)]
    assert shapes == [(6,), (6,), (9,), (24,)]
    assert all(np.all(np.isfinite(b)) for b in (rec.theta_init, rec.theta_fin, rec.theta_wrap, rec.tau))


def test_overweight_object_is_dropped(gmm):
    can = CATALOG["coffee_can"]
    cfg = TrialConfig()
    # more than friction can carry even at the squeeze grip on both fingers
    heavy = dataclasses.replace(can, load=1.1 * can.friction * 2 * cfg.grip_squeeze)
    rec = run_trial(heavy, cfg, np.random.default_rng(0), gmm, keep_trace=True)
    assert rec.outcome == DROPPED
    assert rec.tau is None and rec.theta_fin is None and rec.theta_wrap is None
    assert rec.trace[-1, kern.TR_PHASE] <= kern.PH_SQUEEZE


def test_grip_tracks_squeeze_reference_when_tau_is_recorded(gmm):
    cfg = TrialConfig()
    for name in ("sponge", "soup_can", "banana"):
        rec = run_trial(CATALOG[name], cfg, np.random.default_rng(2), gmm, keep_trace=True)
        last = phase_rows(rec.trace, kern.PH_SQUEEZE)[-1]
        assert last[kern.TR_GREF] == cfg.grip_squeeze
        assert abs(last[kern.TR_G] - cfg.grip_squeeze) < 0.05 * cfg.grip_squeeze


def paired_trials(specs, seed, gmm, wcfg, attempts=3):
    """Run each spec from the same seed, retrying all of them on a fresh seed
    when any trial fails, as dataset generation does."""
    for attempt in range(attempts):
        recs = [run_trial(o, TrialConfig(), np.random.default_rng([seed, attempt]), gmm, wcfg) for o in specs]
        if all(r.completed for r in recs):
            return recs
    raise AssertionError(f"no completed attempt for seed {seed}")


@pytest.mark.parametrize("hard, soft", [(BY_ID[a], BY_ID[b]) if BY_ID[a].stiffness > BY_ID[b].stiffness
                                        else (BY_ID[b], BY_ID[a]) for a, b in stiffness_pairs(default_catalog())],
                         ids=lambda o: o.name)
def test_soft_object_deflects_more_than_its_hard_twin(gmm, hard, soft):
    # ideal encoders: the comparison is about the simulated mechanism, not sensor noise
    for seed in range(3):
        recs = paired_trials((hard, soft), seed, gmm, IDEAL_ENCODERS)
        hard_defl, soft_defl = (np.linalg.norm(r.theta_fin - r.theta_init) for r in recs)
        assert soft_defl > hard_defl
        assert squeeze_closure(recs[1]) > squeeze_closure(recs[0])


def test_benchmark_targets_are_the_contact_state():
    joints = np.linspace(0.1, 1.4, 15)
    alpha, np_ref = benchmark_targets(1.234, joints)
    assert alpha == 1.234
    assert np.array_equal(np_ref, joints[[1, 2, 4, 5]])


def test_targets_outside_joint_limits_are_clipped():
    hand = DEFAULT_CONFIG.hand
    lo = np.array([v for f in hand.fingers[:2] for v in f.lower[1:]])
    hi = np.array([v for f in hand.fingers[:2] for v in f.upper[1:]])
    inside = (lo + hi) / 2
    assert np.array_equal(reachable_targets(inside, hand), inside)
    assert np.array_equal(reachable_targets(lo - 0.03, hand), lo)
    assert np.array_equal(reachable_targets(hi + 0.03, hand), hi)


def test_squashed_soft_object_settles_on_clipped_targets():
    # this seed squashes the roll below the demonstrated widths, where regression asks for negative angles
    spec = CATALOG["sponge_roll"]
    rec = run_trial(spec, TrialConfig(mode=FULL), np.random.default_rng(trial_seed(0, 29, 3, 0)),
                    default_grasp_model(0))
    assert rec.outcome == COMPLETED
    assert rec.alpha_error < 0.02


def test_benchmark_reference_is_alpha_at_contact():
    rec = run_trial(CATALOG["lemon"], TrialConfig(mode=BENCHMARK), np.random.default_rng(3))
    assert rec.alpha_ref == rec.alpha_contact


def test_modes_agree_until_stabilization(gmm):
    spec = CATALOG["sugar_box"]
    full = run_trial(spec, TrialConfig(mode=FULL), np.random.default_rng(4), gmm, keep_trace=True)
    bench = run_trial(spec, TrialConfig(mode=BENCHMARK), np.random.default_rng(4), gmm, keep_trace=True)
    fa = phase_rows(full.trace, kern.PH_APPROACH)
    ba = phase_rows(bench.trace, kern.PH_APPROACH)
    assert np.array_equal(fa, ba)
    assert full.alpha_contact == bench.alpha_contact
    n = min(len(full.trace), len(bench.trace))
    assert not np.array_equal(full.trace[:n], bench.trace[:n])


def test_benchmark_spreads_the_initial_grasp(gmm):
    spec = CATALOG["apple"]
    spread = {}
    for mode in (FULL, BENCHMARK):
        recs = [run_trial(spec, TrialConfig(mode=mode), np.random.default_rng(s), gmm) for s in range(20)]
        assert all(r.completed for r in recs)
        spread[mode] = np.var([r.theta_init for r in recs], axis=0, ddof=1)
    assert np.all(spread[BENCHMARK] > spread[FULL])


def test_full_mode_position_is_repeatable(gmm):
    cfg = TrialConfig()
    ends = []
    for s in range(20):
        rec = run_trial(CATALOG["cracker_box"], cfg, np.random.default_rng(s), gmm, keep_trace=True)
        ends.append(phase_rows(rec.trace, kern.PH_STABILIZE)[-1, kern.TR_ALPHA])
    assert np.std(ends, ddof=1) < cfg.tolerance


def test_phases_run_once_in_order(gmm):
    rec = run_trial(CATALOG["orange"], TrialConfig(), np.random.default_rng(5), gmm, keep_trace=True)
    phases = rec.trace[:, kern.TR_PHASE]
    assert np.all(np.diff(phases) >= 0)
    assert list(np.unique(phases)) == [kern.PH_APPROACH, kern.PH_STABILIZE, kern.PH_SQUEEZE, kern.PH_WRAP]
    times = [rec.phase_times[k] for k in ("approach", "stabilize", "squeeze", "wrap")]
    assert times == sorted(times)
    assert times[2] - times[1] == pytest.approx(TrialConfig().dwell, abs=1e-9)
    t = rec.trace[:, kern.TR_T]
    assert np.all(np.diff(t) >= 0)
    for phase in np.unique(phases):
        assert np.all(np.diff(t[phases == phase]) > 0)


def test_trial_is_deterministic(gmm):
    a, b = (run_trial(CATALOG["banana"], TrialConfig(), np.random.default_rng(6), gmm) for _ in range(2))
    for field in ("theta_init", "theta_fin", "theta_wrap", "tau", "initial_pose"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert (a.alpha_ref, a.outcome, a.phase_times) == (b.alpha_ref, b.outcome, b.phase_times)


def test_retries_use_fresh_derived_seeds(gmm):
    rec, attempts = run_with_retries(CATALOG["plum"], 2, 0, TrialConfig(), gmm)
    assert rec.completed and attempts == 1
    seeds = {tuple(trial_seed(0, 2, 0, a).generate_state(2)) for a in range(3)}
    assert len(seeds) == 3


def test_full_mode_needs_a_grasp_model():
    with pytest.raises(ValueError):
        run_trial(CATALOG["apple"], TrialConfig(mode=FULL), np.random.default_rng(0))


@pytest.mark.parametrize("kwargs", [dict(grip_init=1.5, grip_squeeze=1.5), dict(grip_init=0.0),
                                    dict(timeout=0.0), dict(mode="other")])
def test_trial_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrialConfig(**kwargs)


def test_default_dwell_is_three_seconds():
    assert TrialConfig().dwell == 3.0
    assert math.isclose(TrialConfig().grip_squeeze / TrialConfig().grip_init, 3.0)
