import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

# criterion number -> (passed, summary line)
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, line = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {line}")


@dataclass
class Experiment:
    """Both seed-0 datasets, the report bundle and the rendered report."""

    root: Path
    collections: dict
    paths: dict
    bundle: object
    report_files: list
    timings: dict = field(default_factory=dict)


def run_experiment(root: Path):
    from haptic_workbench import bench
    from haptic_workbench.catalog import default_catalog
    from haptic_workbench.explore import MODES

    catalog = default_catalog()
    plan = bench.ExperimentPlan(ycb_only=True)
    root.mkdir(parents=True, exist_ok=True)
    timings, collections, paths = {}, {}, {}
    for mode in MODES:
        start = time.perf_counter()
        collections[mode] = bench.generate_dataset(catalog, plan, mode)
        timings[mode] = time.perf_counter() - start
        paths[mode] = root / f"dataset_{mode}.csv"
        bench.write_dataset(collections[mode], paths[mode])
    start = time.perf_counter()
    # analyses run on what was written, so every number traces to a stored file
    datasets = {m: bench.read_dataset(p) for m, p in paths.items()}
    bundle = bench.build_bundle(datasets, plan, catalog)
    timings["analysis"] = time.perf_counter() - start
    files = bench.render_report(bundle, root / "report")
    return Experiment(root, collections, paths, bundle, files, timings)


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    return run_experiment(tmp_path_factory.mktemp("seed0") / "first")
