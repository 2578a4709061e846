"""Experiment orchestration: dataset collection, ablations, mode comparison,
learning curves and report rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .catalog import YCB_LIKE, catalog_hash, default_catalog
from .config import DEFAULT_CONFIG, WorkbenchConfig, config_hash
from .explore import FULL, MODES, TrialConfig, default_grasp_model, run_with_retries
from .grasp_model import Gmm
from .learn import (BLOCKS, N_FEATURES, CvReport, Dataset, FeatureSubset, assemble, cross_validate,
                    learning_curve)

DATASET_SCHEMA = "haptic-dataset/1"
BUNDLE_SCHEMA = "haptic-report/1"
MAX_FAILURE_RATE = 0.05


def versioned(kind: str, body: str) -> str:
    """Prefix a table or text output with its schema line."""
    return f"schema=haptic-{kind}/1\n" + body


class ExperimentFailure(RuntimeError):
    """Raised when an experiment cannot produce a valid result."""


def feature_names() -> list[str]:
    names = []
    for block, sl in BLOCKS.items():
        names += [f"{block}_{i}" for i in range(sl.stop - sl.start)]
    assert len(names) == N_FEATURES
    return names


@dataclass(frozen=True)
class ExperimentPlan:
    modes: tuple[str, ...] = MODES
    trials_per_object: int = 20
    subsets: tuple[str, ...] = tuple(s.value for s in FeatureSubset)
    curve_sizes: tuple[int, ...] = tuple(range(3, 16))
    curve_repeats: int = 5
    curve_test: int = 5
    folds: int = 4
    seed: int = 0
    out_dir: str = "out"
    ycb_only: bool = False

    def __post_init__(self):
        if any(m not in MODES for m in self.modes):
            raise ValueError(f"modes must be drawn from {MODES}")
        if self.trials_per_object < 1:
            raise ValueError("need at least one trial per object")


# --------------------------------------------------------------------------
# collection


def _trial_job(args):
    spec, index, trial, tcfg, gmm, wcfg = args
    rec, attempts = run_with_retries(spec, index, trial, tcfg, gmm, wcfg)
    feats = assemble(rec).values if rec.completed else np.full(N_FEATURES, np.nan)
    return index, trial, feats, rec.outcome, attempts, (rec.grip_error, rec.alpha_error)


@dataclass
class Collection:
    """Raw outcome of a collection run, including failed trials."""

    dataset: Dataset
    outcomes: list[tuple[int, int, str, int]]  # label, trial, outcome, attempts
    # (grip error, alpha error) per outcome row; not persisted
    regulation: list[tuple[float, float]] = field(default_factory=list)

    @property
    def failure_rate(self) -> float:
        return sum(o[2] != "completed" for o in self.outcomes) / max(1, len(self.outcomes))


def generate_dataset(catalog, plan: ExperimentPlan, mode: str, gmm: Gmm | None = None,
                     wcfg: WorkbenchConfig = DEFAULT_CONFIG, jobs: int = 1,
                     trial_cfg: TrialConfig | None = None) -> Collection:
    """Run every (object, trial) pair and collect completed feature vectors.

    Trial seeds derive from (plan seed, object index, trial index, attempt), so
    the result does not depend on ``jobs``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    tcfg = trial_cfg or TrialConfig(mode=mode, seed=plan.seed)
    if tcfg.mode != mode or tcfg.seed != plan.seed:
        raise ValueError("trial config must agree with the plan's mode and seed")
    if mode == FULL and gmm is None:
        gmm = default_grasp_model(plan.seed, wcfg=wcfg)
    work = [(spec, i, t, tcfg, gmm, wcfg) for i, spec in enumerate(catalog)
            for t in range(plan.trials_per_object)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, work, chunksize=4))
    else:
        results = [_trial_job(w) for w in work]
    outcomes = [(i, t, outcome, att) for i, t, _, outcome, att, _ in results]
    done = [(i, t, f, att) for i, t, f, outcome, att, _ in results if outcome == "completed"]
    ds = Dataset(np.array([d[2] for d in done]).reshape(-1, N_FEATURES),
                 np.array([d[0] for d in done], dtype=int), [o.id for o in catalog], mode, plan.seed,
                 catalog_hash(catalog), np.array([d[1] for d in done], dtype=int),
                 np.array([d[3] for d in done], dtype=int))
    col = Collection(ds, outcomes, [r[5] for r in results])
    if col.failure_rate > MAX_FAILURE_RATE:
        failed = [(catalog[i].name, t, o) for i, t, o, _ in outcomes if o != "completed"]
        raise ExperimentFailure(f"{len(failed)} of {len(outcomes)} trials failed after retries: {failed[:10]}")
    return col


def write_dataset(col: Collection, path: str | Path) -> None:
    ds = col.dataset
    feats = {(int(l), int(t)): (f, int(a)) for l, t, f, a in
             zip(ds.labels, ds.trial_index, ds.features, ds.attempts)}
    buf = io.StringIO()
    buf.write(f"schema={DATASET_SCHEMA}\n")
    buf.write(f"seed={ds.seed}\nmode={ds.mode}\ncatalog={ds.catalog_hash}\n")
    buf.write("classes=" + " ".join(ds.classes) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(feature_names() + ["label", "object_id", "trial", "attempts", "outcome"])
    for label, trial, outcome, attempts in col.outcomes:
        if outcome == "completed":
            values, attempts = feats[(label, trial)]
            cells = [repr(float(v)) for v in values]
        else:
            cells = ["nan"] * N_FEATURES
        w.writerow(cells + [label, ds.classes[label], trial, attempts, outcome])
    Path(path).write_text(buf.getvalue())


def read_collection(path: str | Path) -> Collection:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"schema={DATASET_SCHEMA}":
        raise ValueError(f"{path} is not a dataset file")
    meta = dict(ln.split("=", 1) for ln in lines[1:5])
    classes = meta["classes"].split()
    rows = list(csv.reader(lines[5:]))
    header, rows = rows[0], rows[1:]
    if header[:N_FEATURES] != feature_names():
        raise ValueError("dataset feature columns do not match this version")
    outcomes, feats, labels, trials, attempts = [], [], [], [], []
    for r in rows:
        label, trial, att, outcome = int(r[N_FEATURES]), int(r[N_FEATURES + 2]), int(r[N_FEATURES + 3]), r[-1]
        outcomes.append((label, trial, outcome, att))
        if outcome == "completed":
            feats.append([float(v) for v in r[:N_FEATURES]])
            labels.append(label)
            trials.append(trial)
            attempts.append(att)
    ds = Dataset(np.array(feats).reshape(-1, N_FEATURES), np.array(labels, dtype=int), classes,
                 meta["mode"], int(meta["seed"]), meta["catalog"], np.array(trials, dtype=int),
                 np.array(attempts, dtype=int))
    return Collection(ds, outcomes)


def read_dataset(path: str | Path) -> Dataset:
    return read_collection(path).dataset


# --------------------------------------------------------------------------
# analyses


def ablate(ds: Dataset, subsets=tuple(FeatureSubset), ycb_only: bool = False, catalog=None,
           folds: int = 4, seed: int = 0) -> dict[FeatureSubset, CvReport]:
    if ycb_only:
        catalog = default_catalog() if catalog is None else catalog
        keep = [o.id for o in catalog if o.tag == YCB_LIKE and o.id in ds.classes]
        ds = ds.subset_classes(keep)
    return {FeatureSubset(s): cross_validate(ds, FeatureSubset(s), folds, seed) for s in subsets}


@dataclass
class ModeComparison:
    full: CvReport
    benchmark: CvReport
    gap: float
    t_statistic: float
    p_value: float
    alpha: float = 0.05

    @property
    def significant(self) -> bool:
        return bool(self.p_value < self.alpha)


def compare_modes(full_ds: Dataset, bench_ds: Dataset, subset: FeatureSubset = FeatureSubset.ALL,
                  folds: int = 4, seed: int = 0, alpha: float = 0.05,
                  reports: tuple[CvReport, CvReport] | None = None) -> ModeComparison:
    """Paired t-test over fold accuracies of the two modes.

    Identical fold accuracies give no evidence of a difference and are
    reported with p = 1.
    """
    if full_ds.classes != bench_ds.classes or full_ds.catalog_hash != bench_ds.catalog_hash:
        raise ValueError("datasets were collected on different catalogs")
    if reports is None:
        reports = (cross_validate(full_ds, subset, folds, seed), cross_validate(bench_ds, subset, folds, seed))
    full, bench = reports
    diff = full.fold_accuracy - bench.fold_accuracy
    if np.allclose(diff, diff[0]) and diff[0] == 0:
        t, p = 0.0, 1.0
    else:
        res = stats.ttest_rel(full.fold_accuracy, bench.fold_accuracy)
        t, p = float(res.statistic), float(res.pvalue)
        if math.isnan(p):
            p = 1.0
    return ModeComparison(full, bench, full.mean - bench.mean, t, p, alpha)


# --------------------------------------------------------------------------
# report bundle


def _report_dict(r: CvReport) -> dict:
    return {"folds": [float(a) for a in r.fold_accuracy], "confusion": r.confusion.tolist(),
            "hypers": [[h.lam, h.sigma_factor] for h in r.hypers]}


@dataclass
class ReportBundle:
    classes: list[str]
    class_names: list[str]
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""
    catalog_hash: str = ""
    plan: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)  # mode -> subset -> report dict
    ablation_ycb: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)  # mode -> list of [size, mean, std]
    comparison: dict | None = None

    def to_json(self) -> str:
        return json.dumps({"schema": BUNDLE_SCHEMA, **asdict(self)}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ReportBundle":
        data = json.loads(text)
        if data.pop("schema", None) != BUNDLE_SCHEMA:
            raise ValueError("not a report bundle")
        return cls(**data)


def build_bundle(datasets: dict[str, Dataset], plan: ExperimentPlan, catalog=None,
                 wcfg: WorkbenchConfig = DEFAULT_CONFIG, curves: bool = True) -> ReportBundle:
    catalog = default_catalog() if catalog is None else catalog
    names = {o.id: o.name for o in catalog}
    first = next(iter(datasets.values()))
    bundle = ReportBundle(list(first.classes), [names.get(c, c) for c in first.classes],
                          {"master": plan.seed, **{m: d.seed for m, d in datasets.items()}},
                          config_hash(wcfg), first.catalog_hash, asdict(plan))
    subsets = [FeatureSubset(s) for s in plan.subsets]
    reports = {}
    for mode, ds in datasets.items():
        reports[mode] = ablate(ds, subsets, folds=plan.folds, seed=plan.seed)
        bundle.ablation[mode] = {s.value: _report_dict(r) for s, r in reports[mode].items()}
        if plan.ycb_only:
            ycb = ablate(ds, subsets, True, catalog, plan.folds, plan.seed)
            bundle.ablation_ycb[mode] = {s.value: _report_dict(r) for s, r in ycb.items()}
        if curves:
            rows = learning_curve(ds, plan.curve_sizes, plan.curve_test, plan.curve_repeats,
                                  np.random.default_rng(np.random.SeedSequence([plan.seed, 6])))
            bundle.curves[mode] = [[r.size, r.mean, r.std] for r in rows]
    if "full" in datasets and "benchmark" in datasets and FeatureSubset.ALL in subsets:
        cmp = compare_modes(datasets["full"], datasets["benchmark"], folds=plan.folds, seed=plan.seed,
                            reports=(reports["full"][FeatureSubset.ALL], reports["benchmark"][FeatureSubset.ALL]))
        bundle.comparison = {"gap": cmp.gap, "t": cmp.t_statistic, "p": cmp.p_value,
                             "alpha": cmp.alpha, "significant": cmp.significant,
                             "full_folds": [float(a) for a in cmp.full.fold_accuracy],
                             "benchmark_folds": [float(a) for a in cmp.benchmark.fold_accuracy]}
    return bundle


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _confusion_text(conf: np.ndarray, names: list[str]) -> str:
    width = max(3, len(str(conf.max())))
    label_w = max(len(n) for n in names)
    lines = [" " * label_w + " " + " ".join(f"{i:>{width}d}" for i in range(len(names)))]
    for i, (name, row) in enumerate(zip(names, conf)):
        lines.append(f"{name:<{label_w}} " + " ".join(f"{v:>{width}d}" for v in row) + f"  [{i}]")
    return "\n".join(lines) + "\n"


def render_report(bundle: ReportBundle, outdir: str | Path) -> list[Path]:
    """Write CSV tables, text confusion grids and a summary; returns the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = out / name
        p.write_text(text)
        written.append(p)

    summary = ["haptic workbench report", f"config hash: {bundle.config_hash}",
               f"catalog hash: {bundle.catalog_hash}",
               "seeds: " + ", ".join(f"{k}={v}" for k, v in sorted(bundle.seeds.items()))]
    for tag, table in (("", bundle.ablation), ("_ycb", bundle.ablation_ycb)):
        title = "accuracy" + (" (ycb-like subset)" if tag else "")
        if not table:
            summary.append(f"{title}: not run")
            continue
        rows = ["mode,subset,mean,std,fold_accuracies"]
        summary.append(f"{title}:")
        for mode in sorted(table):
            for subset, rep in table[mode].items():
                folds = np.array(rep["folds"])
                std = float(np.std(folds, ddof=1)) if len(folds) > 1 else 0.0
                rows.append(f"{mode},{subset},{_fmt(folds.mean())},{_fmt(std)},"
                            + " ".join(_fmt(a) for a in folds))
                summary.append(f"  {mode:<9} {subset:<9} {100 * folds.mean():6.2f} +- {100 * std:5.2f}")
                if subset == FeatureSubset.ALL.value:
                    conf = np.array(rep["confusion"], dtype=int)
                    names = bundle.class_names if conf.shape[0] == len(bundle.class_names) else [
                        str(i) for i in range(conf.shape[0])]
                    if not tag:
                        put(f"confusion_{mode}.csv", versioned(
                            "confusion", "true\\pred," + ",".join(str(i) for i in range(len(conf))) + "\n"
                            + "".join(f"{i}," + ",".join(str(v) for v in row) + "\n"
                                      for i, row in enumerate(conf))))
                        put(f"confusion_{mode}.txt", versioned("confusion-grid", _confusion_text(conf, names)))
        put(f"accuracy{tag}.csv", versioned("accuracy", "\n".join(rows) + "\n"))
    if bundle.curves:
        rows = ["mode,size,mean,std"]
        summary.append("learning curve (mean accuracy per training size):")
        for mode in sorted(bundle.curves):
            for size, mean, std in bundle.curves[mode]:
                rows.append(f"{mode},{size},{_fmt(mean)},{_fmt(std)}")
            summary.append(f"  {mode:<9} " + " ".join(f"{100 * m:5.1f}" for _, m, _ in bundle.curves[mode]))
        put("learning_curve.csv", versioned("curve", "\n".join(rows) + "\n"))
    else:
        summary.append("learning curve: not run")
    if bundle.comparison:
        c = bundle.comparison
        summary.append(f"full vs benchmark: gap {100 * c['gap']:.2f} points, paired t = {c['t']:.4f}, "
                       f"p = {c['p']:.6g}, {'significant' if c['significant'] else 'not significant'} "
                       f"at alpha = {c['alpha']}")
        summary.append("  full folds: " + " ".join(_fmt(a) for a in c["full_folds"]))
        summary.append("  benchmark folds: " + " ".join(_fmt(a) for a in c["benchmark_folds"]))
    else:
        summary.append("full vs benchmark: not run")
    put("summary.txt", versioned("summary", "\n".join(summary) + "\n"))
    put("bundle.json", bundle.to_json() + "\n")
    return written
