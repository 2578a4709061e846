"""Feature assembly and RBF kernel regularised least-squares classification."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist

from .explore import TrialRecord

N_FEATURES = 45
BLOCKS = {
    "theta_init": slice(0, 6),
    "theta_fin": slice(6, 12),
    "theta_wrap": slice(12, 21),
    "tau": slice(21, 45),
}
LAMBDA_GRID = tuple(np.logspace(-6, 0, 7))
SIGMA_FACTORS = (0.1, 0.316, 1.0, 3.16, 10.0)
MODEL_SCHEMA = "haptic-krls/1"


class FeatureSubset(enum.Enum):
    INIT_ONLY = "init"
    GRASP = "grasp"
    ALL_ENCODERS = "encoders"
    TACTILE_ONLY = "tactile"
    ALL = "all"

    @property
    def indices(self) -> np.ndarray:
        return {
            FeatureSubset.INIT_ONLY: np.arange(0, 6),
            FeatureSubset.GRASP: np.arange(0, 12),
            FeatureSubset.ALL_ENCODERS: np.arange(0, 21),
            FeatureSubset.TACTILE_ONLY: np.arange(21, 45),
            FeatureSubset.ALL: np.arange(0, 45),
        }[self]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_FEATURES,):
            raise ValueError(f"a feature vector has {N_FEATURES} entries")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector entries must be finite")
        object.__setattr__(self, "values", v)


def assemble(t: TrialRecord) -> FeatureVector:
    if not t.completed or any(b is None for b in (t.theta_init, t.theta_fin, t.theta_wrap, t.tau)):
        raise ValueError(f"trial on {t.object_id} is incomplete ({t.outcome})")
    return FeatureVector(np.concatenate([t.theta_init, t.theta_fin, t.theta_wrap, t.tau]))


@dataclass
class Dataset:
    """Feature matrix with integer labels indexing ``classes`` (object ids)."""

    features: np.ndarray
    labels: np.ndarray
    classes: list[str]
    mode: str = "full"
    seed: int = 0
    catalog_hash: str = ""
    trial_index: np.ndarray | None = None
    attempts: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.trial_index is None:
            self.trial_index = np.zeros(len(self.labels), dtype=int)
            for c in range(len(self.classes)):
                idx = np.flatnonzero(self.labels == c)
                self.trial_index[idx] = np.arange(len(idx))
        if self.attempts is None:
            self.attempts = np.ones(len(self.labels), dtype=int)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def subset_classes(self, keep: list[str]) -> "Dataset":
        """Restrict to the given object ids, relabelled in the given order."""
        remap = {self.classes.index(c): i for i, c in enumerate(keep)}
        mask = np.isin(self.labels, list(remap))
        return Dataset(self.features[mask], np.array([remap[l] for l in self.labels[mask]]), list(keep),
                       self.mode, self.seed, self.catalog_hash, self.trial_index[mask], self.attempts[mask])


def rbf(x, x2, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("kernel width must be positive")
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError("kernel inputs must have equal length")
    return float(np.exp(-np.sum((x - x2) ** 2) / (2 * sigma ** 2)))


def kernel_matrix(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2 * sigma ** 2))


def gram_matrix(a: np.ndarray, sigma: float) -> np.ndarray:
    """Symmetric training kernel matrix with an exact unit diagonal."""
    k = kernel_matrix(a, a, sigma)
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    return k


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    mask: np.ndarray  # columns kept (non-constant on the training data)

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        mask = std > 1e-12 * (1.0 + np.abs(mean))
        return cls(mean, np.where(mask, std, 1.0), mask)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std)[:, self.mask]


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.zeros((len(labels), n_classes))
    y[np.arange(len(labels)), labels] = 1.0
    return y


@dataclass
class KrlsModel:
    support: np.ndarray  # standardised training inputs
    coef: np.ndarray  # (n, n_classes)
    sigma: float
    lam: float
    scaler: Standardizer
    residual: float = 0.0


def train(x, labels, lam: float, sigma: float, n_classes: int | None = None) -> KrlsModel:
    """Solve (K + lam*n*I) C = Y on standardised inputs."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if not lam > 0:
        raise ValueError("regularisation must be positive")
    if len(np.unique(labels)) < 2:
        raise ValueError("at least two classes are required")
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    scaler = Standardizer.fit(x)
    z = scaler(x)
    n = len(z)
    k = gram_matrix(z, sigma)
    y = one_hot(labels, n_classes)
    a = k + lam * n * np.eye(n)
    coef = cho_solve(cho_factor(a), y)
    residual = float(np.max(np.abs(a @ coef - y)))
    # C order, as parse_model produces, so a reloaded model predicts bit-identically
    return KrlsModel(np.ascontiguousarray(z), np.ascontiguousarray(coef), float(sigma), float(lam), scaler,
                     residual)


def predict_scores(m: KrlsModel, x) -> np.ndarray:
    z = m.scaler(np.atleast_2d(np.asarray(x, dtype=float)))
    return kernel_matrix(z, m.support, m.sigma) @ m.coef


def predict(m: KrlsModel, x) -> tuple[np.ndarray, int | np.ndarray]:
    """Class scores and argmax label; ties go to the lowest class index."""
    x = np.asarray(x, dtype=float)
    scores = predict_scores(m, x)
    labels = np.argmax(scores, axis=1)
    if x.ndim == 1:
        return scores[0], int(labels[0])
    return scores, labels


def median_distance(z: np.ndarray) -> float:
    d = pdist(z)
    med = float(np.median(d)) if len(d) else 1.0
    return med if med > 0 else 1.0


def stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator, strict: bool = True) -> np.ndarray:
    """Fold id per sample with an equal share of every class in each fold.

    With ``strict=False`` a class that does not divide evenly spreads its
    remainder over the first folds instead of raising.
    """
    fold = np.empty(len(labels), dtype=int)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if strict and len(idx) % folds:
            raise ValueError(f"class {c} has {len(idx)} samples, not divisible into {folds} folds")
        fold[idx[rng.permutation(len(idx))]] = np.arange(len(idx)) % folds
    return fold


@dataclass(frozen=True)
class Hyper:
    lam: float
    sigma_factor: float


def select_hyper(x: np.ndarray, labels: np.ndarray, n_classes: int, rng: np.random.Generator,
                 inner_folds: int = 3, lambdas=LAMBDA_GRID, factors=SIGMA_FACTORS) -> Hyper:
    """Grid search by inner stratified cross-validation accuracy.

    All lambdas for one kernel width share a single eigendecomposition of the
    inner training Gram matrix. Ties keep the earliest grid point.
    """
    fold = stratified_folds(labels, inner_folds, rng, strict=False)
    base = median_distance(Standardizer.fit(x)(x))
    correct = np.zeros((len(factors), len(lambdas)))
    for f in range(inner_folds):
        tr, va = fold != f, fold == f
        scaler = Standardizer.fit(x[tr])
        ztr, zva = scaler(x[tr]), scaler(x[va])
        y = one_hot(labels[tr], n_classes)
        n = len(ztr)
        for i, factor in enumerate(factors):
            sigma = factor * base
            evals, evecs = np.linalg.eigh(gram_matrix(ztr, sigma))
            proj = evecs.T @ y
            kva = kernel_matrix(zva, ztr, sigma) @ evecs
            for j, lam in enumerate(lambdas):
                scores = kva @ (proj / (evals + lam * n)[:, None])
                correct[i, j] += np.sum(np.argmax(scores, axis=1) == labels[va])
    i, j = np.unravel_index(np.argmax(correct), correct.shape)
    return Hyper(float(lambdas[j]), float(factors[i]))


def fit_with_hyper(x: np.ndarray, labels: np.ndarray, hyper: Hyper, n_classes: int) -> KrlsModel:
    sigma = hyper.sigma_factor * median_distance(Standardizer.fit(x)(x))
    return train(x, labels, hyper.lam, sigma, n_classes)


@dataclass
class CvReport:
    fold_accuracy: np.ndarray
    confusion: np.ndarray  # rows: true class, columns: predicted
    hypers: list[Hyper] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracy, ddof=1)) if len(self.fold_accuracy) > 1 else 0.0

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())


def cross_validate(ds: Dataset, subset: FeatureSubset = FeatureSubset.ALL, folds: int = 4, seed: int = 0,
                   inner_folds: int = 3, lambdas=LAMBDA_GRID, factors=SIGMA_FACTORS) -> CvReport:
    """Stratified k-fold accuracy with inner grid search on each training part."""
    x = ds.features[:, subset.indices]
    y = ds.labels
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    fold = stratified_folds(y, folds, rng)
    conf = np.zeros((ds.n_classes, ds.n_classes), dtype=int)
    accs, hypers, residuals = [], [], []
    for f in range(folds):
        tr, te = fold != f, fold == f
        hyper = select_hyper(x[tr], y[tr], ds.n_classes, rng, inner_folds, lambdas, factors)
        model = fit_with_hyper(x[tr], y[tr], hyper, ds.n_classes)
        _, pred = predict(model, x[te])
        np.add.at(conf, (y[te], pred), 1)
        accs.append(float(np.mean(pred == y[te])))
        hypers.append(hyper)
        residuals.append(model.residual)
    return CvReport(np.array(accs), conf, hypers, residuals)


@dataclass
class CurveRow:
    size: int
    mean: float
    std: float
    accuracies: np.ndarray


def learning_curve(ds: Dataset, sizes=range(3, 16), test_per_class: int = 5, repeats: int = 5,
                   rng: np.random.Generator | None = None, hyper: Hyper | None = None,
                   subset: FeatureSubset = FeatureSubset.ALL) -> list[CurveRow]:
    """Accuracy on held-out trials as the per-object training count grows.

    Each repeat draws one test set per object and nested training subsets
    from the remaining trials. ``hyper`` defaults to the most common choice
    of a cross-validation run on the full dataset.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sizes = list(sizes)
    x = ds.features[:, subset.indices]
    y = ds.labels
    per_class = [np.flatnonzero(y == c) for c in range(ds.n_classes)]
    if min(len(p) for p in per_class) < max(sizes) + test_per_class:
        raise ValueError("not enough trials per object for the requested sizes")
    if hyper is None:
        rep = cross_validate(ds, subset)
        counts: dict[Hyper, int] = {}
        for h in rep.hypers:
            counts[h] = counts.get(h, 0) + 1
        hyper = max(rep.hypers, key=lambda h: counts[h])
    acc = np.zeros((repeats, len(sizes)))
    for r in range(repeats):
        perms = [p[rng.permutation(len(p))] for p in per_class]
        test = np.concatenate([p[:test_per_class] for p in perms])
        for j, s in enumerate(sizes):
            train_idx = np.concatenate([p[test_per_class:test_per_class + s] for p in perms])
            model = fit_with_hyper(x[train_idx], y[train_idx], hyper, ds.n_classes)
            _, pred = predict(model, x[test])
            acc[r, j] = np.mean(pred == y[test])
    return [CurveRow(s, float(acc[:, j].mean()), float(acc[:, j].std(ddof=1)) if repeats > 1 else 0.0,
                     acc[:, j].copy()) for j, s in enumerate(sizes)]


# --------------------------------------------------------------------------
# persistence


def _row(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dump_model(m: KrlsModel) -> str:
    buf = io.StringIO()
    buf.write(f"schema={MODEL_SCHEMA}\n")
    buf.write(f"lambda={m.lam!r}\nsigma={m.sigma!r}\n")
    buf.write(f"support_shape={m.support.shape[0]} {m.support.shape[1]}\n")
    buf.write(f"classes={m.coef.shape[1]}\n")
    buf.write("mean=" + _row(m.scaler.mean) + "\n")
    buf.write("std=" + _row(m.scaler.std) + "\n")
    buf.write("mask=" + " ".join("1" if v else "0" for v in m.scaler.mask) + "\n")
    buf.write("support=" + _row(m.support) + "\n")
    buf.write("coef=" + _row(m.coef) + "\n")
    return buf.getvalue()


def parse_model(text: str) -> KrlsModel:
    lines = text.splitlines()
    if not lines or lines[0] != f"schema={MODEL_SCHEMA}":
        raise ValueError("not a classifier model file")
    kv = dict(ln.split("=", 1) for ln in lines[1:] if ln)
    n, p = (int(v) for v in kv["support_shape"].split())
    c = int(kv["classes"])

    def floats(s):
        return np.array([float(v) for v in s.split()]) if s else np.zeros(0)

    scaler = Standardizer(floats(kv["mean"]), floats(kv["std"]),
                          np.array([v == "1" for v in kv["mask"].split()]))
    return KrlsModel(floats(kv["support"]).reshape(n, p), floats(kv["coef"]).reshape(n, c),
                     float(kv["sigma"]), float(kv["lambda"]), scaler)


def accuracy_of(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(truth))) if len(truth) else math.nan
