import dataclasses
import json

import numpy as np
import pytest

from haptic_workbench import bench
from haptic_workbench.bench import (ExperimentFailure, ExperimentPlan, ReportBundle, ablate,
                                    build_bundle, compare_modes, feature_names, generate_dataset, read_collection,
                                    read_dataset, render_report, write_dataset)
from haptic_workbench.catalog import SUPPLEMENTAL, YCB_LIKE, catalog_hash, default_catalog, stiffness_pairs
from haptic_workbench.cli import main
from haptic_workbench.config import CONFIG_SCHEMA, DEFAULT_CONFIG, config_hash, dump_config, parse_config
from haptic_workbench.explore import BENCHMARK, FULL, TrialConfig, default_grasp_model, run_with_retries
from haptic_workbench.learn import N_FEATURES, Dataset, FeatureSubset

from .oracles import squeeze_closure

CATALOG = default_catalog()
IDS = [o.id for o in CATALOG]


def synthetic(rng, spread, per_class=8, classes=IDS, catalog=CATALOG, mode=FULL):
    centres = rng.normal(0, 1, (len(classes), N_FEATURES))
    labels = np.repeat(np.arange(len(classes)), per_class)
    feats = centres[labels] + spread * rng.normal(0, 1, (len(labels), N_FEATURES))
    return Dataset(feats, labels, list(classes), mode, 0, catalog_hash(catalog))


# --- catalog -----------------------------------------------------------------

def test_catalog_composition():
    assert len(CATALOG) == 30
    assert len(set(IDS)) == 30
    tags = [o.tag for o in CATALOG]
    assert tags.count(YCB_LIKE) == 21 and tags.count(SUPPLEMENTAL) == 9


def test_catalog_spans_hard_and_soft():
    k = [o.stiffness for o in CATALOG]
    assert max(k) / min(k) >= 20


def test_catalog_has_the_confusable_pairs():
    assert stiffness_pairs(CATALOG)
    same_stiffness = [(a.id, b.id) for i, a in enumerate(CATALOG) for b in CATALOG[i + 1:]
                      if a.stiffness == b.stiffness and a.sections != b.sections]
    assert same_stiffness


def test_catalog_hash_tracks_contents():
    assert catalog_hash(CATALOG) == catalog_hash(default_catalog())
    changed = (dataclasses.replace(CATALOG[0], friction=0.5),) + CATALOG[1:]
    assert catalog_hash(changed) != catalog_hash(CATALOG)


@pytest.mark.slow
def test_stiffness_pairs_leave_a_squeeze_signature():
    # mechanism check with ideal encoders; recorded features add reading noise on top
    wcfg = dataclasses.replace(DEFAULT_CONFIG, hand=dataclasses.replace(DEFAULT_CONFIG.hand, encoder_noise=0.0))
    gmm = default_grasp_model(0)
    index = {o.id: i for i, o in enumerate(CATALOG)}
    for pair in stiffness_pairs(CATALOG):
        stats = []
        for oid in pair:
            closure = [squeeze_closure(run_with_retries(CATALOG[index[oid]], index[oid], t, TrialConfig(), gmm,
                                                        wcfg)[0]) for t in range(20)]
            stats.append((np.mean(closure), np.std(closure, ddof=1)))
        (m1, s1), (m2, s2) = stats
        assert abs(m1 - m2) > 5 * max(s1, s2), pair


# --- collection and persistence ----------------------------------------------

@pytest.fixture(scope="module")
def mini(tmp_path_factory):
    """Two objects, two trials, both modes, written to disk."""
    root = tmp_path_factory.mktemp("mini")
    plan = ExperimentPlan(trials_per_object=2)
    cols = {m: generate_dataset(CATALOG[:2], plan, m) for m in (FULL, BENCHMARK)}
    paths = {}
    for m, col in cols.items():
        paths[m] = root / f"{m}.csv"
        write_dataset(col, paths[m])
    return plan, cols, paths


def test_single_trial_gives_one_row_per_object(tmp_path):
    col = generate_dataset(CATALOG[:2], ExperimentPlan(trials_per_object=1), BENCHMARK)
    write_dataset(col, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == f"schema={bench.DATASET_SCHEMA}"
    assert [ln.split("=")[0] for ln in lines[1:5]] == ["seed", "mode", "catalog", "classes"]
    header = lines[5].split(",")
    assert header == feature_names() + ["label", "object_id", "trial", "attempts", "outcome"]
    assert len(header) == N_FEATURES + 5
    assert len(lines) == 6 + 2
    assert all(ln.endswith(",completed") for ln in lines[6:])


def test_dataset_round_trip_is_bit_exact(mini):
    _, cols, paths = mini
    for m, col in cols.items():
        back = read_collection(paths[m])
        assert np.array_equal(back.dataset.features, col.dataset.features)
        assert np.array_equal(back.dataset.labels, col.dataset.labels)
        assert back.outcomes == col.outcomes
        assert back.dataset.mode == m


def test_same_plan_gives_identical_bytes(mini, tmp_path):
    plan, _, paths = mini
    again = generate_dataset(CATALOG[:2], plan, BENCHMARK, jobs=2)
    write_dataset(again, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == paths[BENCHMARK].read_bytes()


def test_modes_differ_only_in_feature_values(mini):
    _, _, paths = mini
    full, bench_ = (paths[m].read_text().splitlines() for m in (FULL, BENCHMARK))
    assert len(full) == len(bench_)
    for a, b in zip(full[:6], bench_[:6]):
        if a.startswith("mode="):
            assert (a, b) == ("mode=full", "mode=benchmark")
        else:
            assert a == b
    rows_a = [r.split(",") for r in full[6:]]
    rows_b = [r.split(",") for r in bench_[6:]]
    assert [r[N_FEATURES:] for r in rows_a] == [r[N_FEATURES:] for r in rows_b]
    assert [r[:N_FEATURES] for r in rows_a] != [r[:N_FEATURES] for r in rows_b]


def test_excessive_failures_abort_collection():
    heavy = tuple(dataclasses.replace(o, load=100.0) for o in CATALOG[:2])
    with pytest.raises(ExperimentFailure):
        generate_dataset(heavy, ExperimentPlan(trials_per_object=1), BENCHMARK)


def test_trial_config_must_match_plan():
    with pytest.raises(ValueError):
        generate_dataset(CATALOG[:1], ExperimentPlan(trials_per_object=1), BENCHMARK,
                         trial_cfg=TrialConfig(mode=FULL))


def test_reader_rejects_other_files(tmp_path):
    (tmp_path / "x.csv").write_text("schema=something/1\n")
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "x.csv")


# --- analyses ----------------------------------------------------------------

def test_self_comparison_shows_no_gap():
    ds = synthetic(np.random.default_rng(0), 1.5)
    cmp = compare_modes(ds, ds)
    assert cmp.gap == 0.0
    assert not cmp.significant
    assert len(cmp.full.fold_accuracy) == 4


def test_constructed_gap_is_detected():
    rng = np.random.default_rng(1)
    full = synthetic(rng, 0.3, per_class=12)
    noisy = synthetic(rng, 3.0, per_class=12, mode=BENCHMARK)
    cmp = compare_modes(full, noisy)
    assert cmp.gap == pytest.approx(cmp.full.mean - cmp.benchmark.mean, abs=1e-15)
    assert cmp.gap > 0.3
    assert cmp.significant


def test_mismatched_catalogs_are_rejected():
    rng = np.random.default_rng(2)
    a = synthetic(rng, 1.0)
    other = (dataclasses.replace(CATALOG[0], stiffness=9.0),) + CATALOG[1:]
    b = synthetic(rng, 1.0, catalog=other)
    with pytest.raises(ValueError):
        compare_modes(a, b)


def test_ablation_covers_five_subsets_and_ycb_filter():
    ds = synthetic(np.random.default_rng(3), 1.0, per_class=4)
    table = ablate(ds)
    assert list(table) == list(FeatureSubset)
    ycb = ablate(ds, [FeatureSubset.INIT_ONLY], ycb_only=True)
    assert ycb[FeatureSubset.INIT_ONLY].confusion.shape == (21, 21)


# --- report ------------------------------------------------------------------

@pytest.fixture(scope="module")
def bundle():
    rng = np.random.default_rng(4)
    datasets = {FULL: synthetic(rng, 0.8), BENCHMARK: synthetic(rng, 2.0, mode=BENCHMARK)}
    plan = ExperimentPlan(curve_sizes=(2, 3), curve_repeats=2, curve_test=2, ycb_only=True)
    return build_bundle(datasets, plan)


def test_empty_bundle_says_not_run(tmp_path):
    empty = ReportBundle(IDS, [o.name for o in CATALOG])
    render_report(empty, tmp_path)
    summary = (tmp_path / "summary.txt").read_text()
    assert summary.count("not run") == 4
    assert not (tmp_path / "accuracy.csv").exists()


def test_confusion_csv_rows_sum_to_test_counts(bundle, tmp_path):
    render_report(bundle, tmp_path)
    lines = (tmp_path / "confusion_full.csv").read_text().splitlines()
    assert lines[0] == "schema=haptic-confusion/1"
    rows = np.array([[int(v) for v in ln.split(",")[1:]] for ln in lines[2:]])
    assert rows.shape == (30, 30)
    assert np.all(rows.sum(axis=1) == 8)


def test_summary_records_seeds_and_hashes(bundle, tmp_path):
    render_report(bundle, tmp_path)
    summary = (tmp_path / "summary.txt").read_text()
    assert f"config hash: {config_hash(DEFAULT_CONFIG)}" in summary
    assert "seeds: benchmark=0, full=0, master=0" in summary
    assert "full folds:" in summary and "benchmark folds:" in summary
    accuracy = (tmp_path / "accuracy.csv").read_text().splitlines()
    assert len(accuracy) == 2 + 2 * 5
    assert len((tmp_path / "accuracy_ycb.csv").read_text().splitlines()) == 2 + 2 * 5


def test_every_report_file_is_versioned(bundle, tmp_path):
    for path in render_report(bundle, tmp_path):
        text = path.read_text()
        if path.suffix == ".json":
            assert next(iter(json.loads(text))) == "schema"
        else:
            assert text.startswith("schema=haptic-"), path.name


def test_rerender_from_stored_bundle_is_byte_identical(bundle, tmp_path):
    first = render_report(bundle, tmp_path / "a")
    stored = ReportBundle.from_json((tmp_path / "a" / "bundle.json").read_text())
    second = render_report(stored, tmp_path / "b")
    assert [p.name for p in first] == [p.name for p in second]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes(), a.name
    assert json.loads((tmp_path / "a" / "bundle.json").read_text())["comparison"]["full_folds"]


# --- configuration -----------------------------------------------------------

def test_config_text_round_trip():
    assert parse_config(dump_config(DEFAULT_CONFIG)) == DEFAULT_CONFIG
    tweaked = dataclasses.replace(DEFAULT_CONFIG, control=dataclasses.replace(DEFAULT_CONFIG.control, f_min=0.1))
    assert parse_config(dump_config(tweaked)) == tweaked
    assert config_hash(tweaked) != config_hash(DEFAULT_CONFIG)


def test_config_rejects_unknown_keys():
    bad = dump_config(DEFAULT_CONFIG).replace("f_min =", "f_minimum =")
    with pytest.raises(ValueError):
        parse_config(bad)
    with pytest.raises(ValueError):
        parse_config("schema=other/9\n")


# --- command line ------------------------------------------------------------

def run_cli(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path)])


def test_cli_pipeline(tmp_path, capsys):
    assert run_cli(tmp_path, "gen-demos", "--n", "40") == 0
    assert run_cli(tmp_path, "fit-gmm", "--demos", str(tmp_path / "demos.csv"), "--k", "2") == 0
    assert (tmp_path / "gmm.txt").read_text().startswith("schema=")
    for mode in (FULL, BENCHMARK):
        assert run_cli(tmp_path, "collect", "--mode", mode, "--objects", "3", "--trials", "8") == 0
    full, bench_ = str(tmp_path / "dataset_full.csv"), str(tmp_path / "dataset_benchmark.csv")
    assert run_cli(tmp_path, "train", "--dataset", full, "--subset", "grasp") == 0
    assert run_cli(tmp_path, "eval", "--model", str(tmp_path / "model_grasp.txt"), "--dataset", bench_) == 0
    assert run_cli(tmp_path, "ablate", "--dataset", full) == 0
    assert run_cli(tmp_path, "curve", "--dataset", full, "--min-size", "2", "--max-size", "3",
                   "--repeats", "2") == 0
    assert run_cli(tmp_path, "compare", "--full", full, "--benchmark", bench_) == 0
    assert run_cli(tmp_path, "report", "--full", full, "--benchmark", bench_, "--no-curve") == 0
    out = capsys.readouterr().out
    assert "full vs benchmark" in out
    for name in ("ablation_full.csv", "curve_full.csv", "compare.txt", "report/summary.txt"):
        assert (tmp_path / name).read_text().startswith("schema=haptic-")
    stored = tmp_path / "report" / "bundle.json"
    before = (tmp_path / "report" / "summary.txt").read_bytes()
    assert run_cli(tmp_path / "again", "report", "--bundle", str(stored)) == 0
    assert (tmp_path / "again" / "report" / "summary.txt").read_bytes() == before


def test_cli_validation_errors_exit_2(tmp_path):
    assert run_cli(tmp_path, "eval", "--model", str(tmp_path / "missing.txt"),
                   "--dataset", str(tmp_path / "missing.csv")) == 2
    assert run_cli(tmp_path, "collect", "--mode", BENCHMARK, "--trials", "1", "--jobs", "0") == 2
    (tmp_path / "bad.ini").write_text(f"schema={CONFIG_SCHEMA}\n[control]\nno_such_key = 1\n")
    assert run_cli(tmp_path, "collect", "--mode", BENCHMARK, "--config", str(tmp_path / "bad.ini")) == 2
    with pytest.raises(SystemExit) as exc:
        main(["collect", "--mode", "sideways"])
    assert exc.value.code == 2


def test_cli_experiment_failure_exits_3(tmp_path):
    # motors that cannot move never reach the object
    frozen = dataclasses.replace(DEFAULT_CONFIG, hand=dataclasses.replace(DEFAULT_CONFIG.hand, k_v=0.0))
    (tmp_path / "frozen.ini").write_text(dump_config(frozen))
    code = run_cli(tmp_path, "collect", "--mode", BENCHMARK, "--objects", "1", "--trials", "1",
                   "--config", str(tmp_path / "frozen.ini"))
    assert code == 3
