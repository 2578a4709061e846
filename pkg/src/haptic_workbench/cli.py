"""Command-line entry point: ``haptic-bench <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 experiment failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bench
from .catalog import default_catalog
from .config import load_config
from .explore import DEMO_COUNT, DEMO_NOISE, MODES, catalog_width_range
from .grasp_model import (dump_gmm, fit_gmm, generate_demonstrations, parse_gmm, read_demos, select_k,
                          write_demos)
from .learn import (FeatureSubset, accuracy_of, dump_model, fit_with_hyper, learning_curve,
                    parse_model, predict, select_hyper)

log = logging.getLogger("haptic_workbench")

EXIT_OK, EXIT_INPUT, EXIT_EXPERIMENT = 0, 2, 3
SUBSETS = [s.value for s in FeatureSubset]


def _out(args, name: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _catalog(args, cfg):
    cat = default_catalog(cfg.hand)
    if getattr(args, "objects", None):
        cat = cat[:args.objects]
    return cat


def cmd_gen_demos(args, cfg):
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 7]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        demos = generate_demonstrations(args.n, catalog_width_range(default_catalog(cfg.hand)), rng, cfg,
                                        noise=args.noise)
    path = _out(args, "demos.csv")
    write_demos(demos, path)
    print(f"wrote {len(demos.samples)} demonstrations ({demos.skipped} skipped) to {path}")


def cmd_fit_gmm(args, cfg):
    x = read_demos(args.demos).matrix()
    k = select_k(x, seed=args.seed) if args.k == "auto" else int(args.k)
    gmm = fit_gmm(x, k, args.seed)
    path = _out(args, "gmm.txt")
    path.write_text(dump_gmm(gmm))
    print(f"fitted {k} components, log-likelihood {gmm.history[-1]:.3f}; wrote {path}")


def cmd_collect(args, cfg):
    plan = bench.ExperimentPlan(trials_per_object=args.trials, seed=args.seed)
    gmm = parse_gmm(Path(args.gmm).read_text()) if args.gmm else None
    col = bench.generate_dataset(_catalog(args, cfg), plan, args.mode, gmm, cfg, args.jobs)
    path = _out(args, f"dataset_{args.mode}.csv")
    bench.write_dataset(col, path)
    retried = int(np.sum(col.dataset.attempts > 1))
    print(f"collected {len(col.dataset.labels)} trials ({retried} retried, "
          f"failure rate {100 * col.failure_rate:.1f}%); wrote {path}")


def cmd_train(args, cfg):
    ds = bench.read_dataset(args.dataset)
    subset = FeatureSubset(args.subset)
    x = ds.features[:, subset.indices]
    hyper = select_hyper(x, ds.labels, ds.n_classes, np.random.default_rng(args.seed))
    model = fit_with_hyper(x, ds.labels, hyper, ds.n_classes)
    path = _out(args, f"model_{subset.value}.txt")
    path.write_text(dump_model(model) + f"feature_subset={subset.value}\nclass_ids={' '.join(ds.classes)}\n")
    print(f"trained on {len(x)} trials, lambda={hyper.lam:g}, sigma factor={hyper.sigma_factor:g}; wrote {path}")


def cmd_eval(args, cfg):
    text = Path(args.model).read_text()
    model = parse_model(text)
    meta = dict(ln.split("=", 1) for ln in text.splitlines() if ln.startswith(("feature_subset=", "class_ids=")))
    subset = FeatureSubset(meta.get("feature_subset", "all"))
    ds = bench.read_dataset(args.dataset)
    if "class_ids" in meta and meta["class_ids"].split() != ds.classes:
        raise ValueError("model and dataset use different object classes")
    _, labels = predict(model, ds.features[:, subset.indices])
    print(f"accuracy {100 * accuracy_of(labels, ds.labels):.2f}% on {len(labels)} trials ({subset.value} features)")


def cmd_ablate(args, cfg):
    ds = bench.read_dataset(args.dataset)
    reports = bench.ablate(ds, ycb_only=args.ycb_only, catalog=default_catalog(cfg.hand), seed=args.seed)
    lines = ["subset,mean,std,fold_accuracies"]
    for s, r in reports.items():
        lines.append(f"{s.value},{r.mean:.4f},{r.std:.4f}," + " ".join(f"{a:.4f}" for a in r.fold_accuracy))
        print(f"{s.value:<9} {100 * r.mean:6.2f} +- {100 * r.std:5.2f}")
    path = _out(args, f"ablation_{ds.mode}{'_ycb' if args.ycb_only else ''}.csv")
    path.write_text(bench.versioned("accuracy", "\n".join(lines) + "\n"))
    print(f"wrote {path}")


def cmd_curve(args, cfg):
    ds = bench.read_dataset(args.dataset)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 6]))
    rows = learning_curve(ds, range(args.min_size, args.max_size + 1), repeats=args.repeats, rng=rng)
    lines = ["size,mean,std"] + [f"{r.size},{r.mean:.4f},{r.std:.4f}" for r in rows]
    for r in rows:
        print(f"{r.size:3d} {100 * r.mean:6.2f}")
    path = _out(args, f"curve_{ds.mode}.csv")
    path.write_text(bench.versioned("curve", "\n".join(lines) + "\n"))
    print(f"wrote {path}")


def cmd_compare(args, cfg):
    cmp = bench.compare_modes(bench.read_dataset(args.full), bench.read_dataset(args.benchmark), seed=args.seed)
    text = (f"full {100 * cmp.full.mean:.2f}% benchmark {100 * cmp.benchmark.mean:.2f}% "
            f"gap {100 * cmp.gap:.2f} points\npaired t = {cmp.t_statistic:.4f}, p = {cmp.p_value:.6g}, "
            f"{'significant' if cmp.significant else 'not significant'} at alpha = {cmp.alpha}\n")
    print(text, end="")
    _out(args, "compare.txt").write_text(bench.versioned("comparison", text))


def cmd_report(args, cfg):
    plan = bench.ExperimentPlan(seed=args.seed, ycb_only=args.ycb_only)
    if args.bundle:
        bundle = bench.ReportBundle.from_json(Path(args.bundle).read_text())
    else:
        datasets = {}
        for mode, path in (("full", args.full), ("benchmark", args.benchmark)):
            if path:
                datasets[mode] = bench.read_dataset(path)
        if not datasets:
            raise ValueError("report needs --bundle or at least one dataset")
        bundle = bench.build_bundle(datasets, plan, default_catalog(cfg.hand), cfg, curves=not args.no_curve)
    outdir = Path(args.out) / "report"
    bench.render_report(bundle, outdir)
    print((outdir / "summary.txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--config", help="INI file overriding default parameters")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for trial collection")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="haptic-bench", description="Simulated haptic object-recognition workbench.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-demos", parents=[common], help="synthesise stable-grasp demonstrations")
    s.add_argument("--n", type=int, default=DEMO_COUNT)
    s.add_argument("--noise", type=float, default=DEMO_NOISE)
    s.set_defaults(func=cmd_gen_demos)

    s = sub.add_parser("fit-gmm", parents=[common], help="fit the stable-grasp mixture model")
    s.add_argument("--demos", required=True)
    s.add_argument("--k", default="3", help="component count or 'auto'")
    s.set_defaults(func=cmd_fit_gmm)

    s = sub.add_parser("collect", parents=[common], help="run exploration trials over the catalog")
    s.add_argument("--mode", choices=MODES, required=True)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--objects", type=int, help="use only the first N catalog objects")
    s.add_argument("--gmm", help="mixture model file (default: fitted from seeded demonstrations)")
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("train", parents=[common], help="train a classifier on a whole dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--subset", choices=SUBSETS, default="all")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a saved classifier on a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="cross-validated accuracy per feature subset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--ycb-only", action="store_true", help="restrict to the household-like objects")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("curve", parents=[common], help="accuracy against training trials per object")
    s.add_argument("--dataset", required=True)
    s.add_argument("--min-size", type=int, default=3)
    s.add_argument("--max-size", type=int, default=15)
    s.add_argument("--repeats", type=int, default=5)
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("compare", parents=[common], help="paired comparison of full and benchmark modes")
    s.add_argument("--full", required=True)
    s.add_argument("--benchmark", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", parents=[common], help="render tables, confusion grids and a summary")
    s.add_argument("--full")
    s.add_argument("--benchmark")
    s.add_argument("--bundle", help="re-render a stored bundle.json")
    s.add_argument("--ycb-only", action="store_true", help="also tabulate the household-like subset")
    s.add_argument("--no-curve", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        args.func(args, cfg)
    except bench.ExperimentFailure as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
