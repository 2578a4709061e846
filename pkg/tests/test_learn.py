import math

import numpy as np
import pytest

from haptic_workbench.explore import COMPLETED, DROPPED, TrialRecord
from haptic_workbench.learn import (BLOCKS, N_FEATURES, Dataset, FeatureSubset, FeatureVector, Hyper, KrlsModel,
                                    Standardizer, assemble, cross_validate, dump_model, fit_with_hyper, gram_matrix,
                                    learning_curve, parse_model, predict, rbf, stratified_folds, train)


def record(theta_init, theta_fin, theta_wrap, tau, outcome=COMPLETED):
    return TrialRecord("obj00", outcome, np.zeros(3), theta_init, theta_fin, theta_wrap, tau)


def blob_dataset(rng, n_classes=30, per_class=20, dims=N_FEATURES, spread=1.0):
    centres = rng.normal(0, 1, (n_classes, dims))
    labels = np.repeat(np.arange(n_classes), per_class)
    features = centres[labels] + spread * rng.normal(0, 1, (len(labels), dims))
    return Dataset(features, labels, [f"obj{c:02d}" for c in range(n_classes)])


# --- features ----------------------------------------------------------------

def test_all_zero_blocks_give_zero_vector():
    v = assemble(record(np.zeros(6), np.zeros(6), np.zeros(9), np.zeros(24)))
    assert np.array_equal(v.values, np.zeros(N_FEATURES))


def test_block_boundaries():
    v = assemble(record(np.arange(6.0), 10 + np.arange(6.0), 100 + np.arange(9.0), 1000 + np.arange(24.0))).values
    assert v[12] == 100.0  # first wrap joint
    assert v[21] == 1000.0  # first taxel
    assert v[6] == 10.0 and v[44] == 1023.0
    assert [BLOCKS[k].start for k in ("theta_init", "theta_fin", "theta_wrap", "tau")] == [0, 6, 12, 21]


def test_incomplete_record_cannot_be_assembled():
    with pytest.raises(ValueError):
        assemble(record(np.zeros(6), None, None, None, DROPPED))


def test_feature_vector_rejects_bad_input():
    with pytest.raises(ValueError):
        FeatureVector(np.zeros(44))
    bad = np.zeros(N_FEATURES)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        FeatureVector(bad)


def test_subset_dimensions():
    dims = [len(s.indices) for s in FeatureSubset]
    assert dims == [6, 12, 21, 24, 45]
    assert set(FeatureSubset.ALL_ENCODERS.indices).isdisjoint(FeatureSubset.TACTILE_ONLY.indices)


# --- kernel ------------------------------------------------------------------

def test_rbf_examples():
    x = np.array([1.0, -2.0, 0.5])
    assert rbf(x, x, 0.7) == 1.0
    sigma = 1.3
    step = np.array([sigma * math.sqrt(2), 0.0, 0.0])
    assert rbf(x, x + step, sigma) == pytest.approx(math.exp(-1), abs=1e-12)


def test_rbf_approaches_one_as_width_grows():
    x, y = np.zeros(4), np.ones(4)
    values = [rbf(x, y, s) for s in np.logspace(-1, 4, 30)]
    assert np.all(np.diff(values) > 0)
    assert values[-1] == pytest.approx(1.0, abs=1e-7)


def test_rbf_domain_errors():
    with pytest.raises(ValueError):
        rbf(np.zeros(2), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        rbf(np.zeros(2), np.ones(3), 1.0)


def test_gram_matrix_is_symmetric_with_unit_diagonal():
    z = np.random.default_rng(0).normal(size=(40, 7))
    k = gram_matrix(z, 1.7)
    assert np.array_equal(k, k.T)
    assert np.all(np.diag(k) == 1.0)


# --- training and prediction -------------------------------------------------

def test_two_points_are_interpolated_as_lambda_vanishes():
    x = np.array([[0.0, 1.0], [2.0, -1.0]])
    m = train(x, [0, 1], 1e-12, 1.0)
    scores, labels = predict(m, x)
    assert scores == pytest.approx(np.eye(2), abs=1e-6)
    assert labels.tolist() == [0, 1]
    assert predict(m, x[1])[1] == 1


def test_large_lambda_shrinks_scores_to_kernel_weighted_counts():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(12, 3))
    labels = np.array([0] * 5 + [1] * 4 + [2] * 3)
    lam = 1e9
    m = train(x, labels, lam, 1.5)
    query = rng.normal(size=(4, 3))
    scaled = predict(m, query)[0] * lam * len(x)
    z = Standardizer.fit(x)
    weights = np.exp(-np.sum((z(query)[:, None, :] - z(x)[None]) ** 2, axis=2) / (2 * 1.5 ** 2))
    expected = np.stack([weights[:, labels == c].sum(axis=1) for c in range(3)], axis=1)
    assert scaled == pytest.approx(expected, rel=1e-6)
    # with a very wide kernel every score vector tends to the class frequencies
    wide = train(x, labels, lam, 1e6)
    freq = predict(wide, query)[0] * lam
    assert freq == pytest.approx(np.tile([5 / 12, 4 / 12, 3 / 12], (4, 1)), rel=1e-6)


def dense_oracle_scores(x, labels, query, lam, sigma):
    """Direct solve of the normal equations with plain loops and LU."""
    mean, std = x.mean(axis=0), x.std(axis=0)
    z, q = (x - mean) / std, (query - mean) / std
    n = len(z)
    k = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            k[i, j] = math.exp(-float(np.sum((z[i] - z[j]) ** 2)) / (2 * sigma ** 2))
    y = np.zeros((n, labels.max() + 1))
    y[np.arange(n), labels] = 1.0
    coef = np.linalg.solve(k + lam * n * np.eye(n), y)
    kq = np.array([[math.exp(-float(np.sum((a - b) ** 2)) / (2 * sigma ** 2)) for b in z] for a in q])
    return kq @ coef


@pytest.mark.parametrize("seed", range(5))
def test_predictions_match_dense_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(20, 6)) * rng.uniform(0.5, 3, 6) + rng.normal(size=6)
    labels = np.arange(20) % 4
    query = rng.normal(size=(7, 6))
    lam, sigma = 10 ** rng.uniform(-4, -1), rng.uniform(0.8, 3.0)
    m = train(x, labels, lam, sigma)
    assert m.residual < 1e-8
    scores, pred = predict(m, query)
    oracle = dense_oracle_scores(x, labels, query, lam, sigma)
    assert np.max(np.abs(scores - oracle)) < 1e-8
    assert np.array_equal(pred, np.argmax(oracle, axis=1))


def test_exact_tie_goes_to_lowest_class():
    support = np.zeros((2, 2))
    coef = np.array([[0.3, 0.5, 0.5], [0.1, 0.2, 0.2]])
    m = KrlsModel(support, coef, 1.0, 1e-3, Standardizer(np.zeros(2), np.ones(2), np.ones(2, dtype=bool)))
    scores, label = predict(m, np.zeros(2))
    assert scores[1] == scores[2]
    assert label == 1


def test_training_rejects_bad_arguments():
    x = np.zeros((4, 2)) + np.arange(4)[:, None]
    with pytest.raises(ValueError):
        train(x, [0, 1, 0, 1], 0.0, 1.0)
    with pytest.raises(ValueError):
        train(x, [0, 0, 0, 0], 1e-3, 1.0)


def test_duplicate_rows_are_allowed():
    x = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    m = train(x, [0, 0, 1], 1e-3, 1.0)
    assert m.residual < 1e-8
    assert predict(m, x)[1].tolist() == [0, 0, 1]


def test_constant_shift_does_not_change_predictions():
    rng = np.random.default_rng(2)
    ds = blob_dataset(rng, n_classes=5, per_class=8, dims=6)
    query = rng.normal(size=(30, 6))
    shift = np.zeros(6)
    shift[2] = 250.0
    base = train(ds.features, ds.labels, 1e-3, 2.0)
    moved = train(ds.features + shift, ds.labels, 1e-3, 2.0)
    assert np.array_equal(predict(base, query)[1], predict(moved, query + shift)[1])


def test_model_text_round_trip():
    rng = np.random.default_rng(3)
    ds = blob_dataset(rng, n_classes=4, per_class=6, dims=5)
    m = train(ds.features, ds.labels, 1e-2, 1.1)
    back = parse_model(dump_model(m))
    query = rng.normal(size=(10, 5))
    assert np.array_equal(predict(back, query)[0], predict(m, query)[0])
    assert dump_model(back) == dump_model(m)
    with pytest.raises(ValueError):
        parse_model("schema=other/1\n")


# --- cross-validation --------------------------------------------------------

def test_constant_distinguishing_feature_is_perfectly_separable():
    labels = np.repeat(np.arange(30), 20)
    features = np.zeros((600, N_FEATURES))
    features[np.arange(600), labels] = 1.0
    rep = cross_validate(Dataset(features, labels, [str(c) for c in range(30)]))
    assert rep.mean == 1.0 and rep.std == 0.0
    assert rep.accuracy == 1.0


def test_permuted_labels_give_chance_accuracy():
    rng = np.random.default_rng(4)
    ds = blob_dataset(rng)
    shuffled = Dataset(ds.features, rng.permutation(ds.labels), ds.classes)
    rep = cross_validate(shuffled)
    p, n = 1 / 30, len(ds.labels)
    assert abs(rep.accuracy - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_confusion_accounting_identities():
    ds = blob_dataset(np.random.default_rng(5), spread=1.5)
    rep = cross_validate(ds)
    assert rep.accuracy == np.trace(rep.confusion) / rep.confusion.sum()
    assert np.array_equal(rep.confusion.sum(axis=1), np.full(30, 20))
    # equal fold sizes: pooled and fold-mean accuracy coincide
    assert rep.accuracy == pytest.approx(rep.mean, abs=1e-12)
    assert max(rep.residuals) < 1e-8
    assert len(rep.fold_accuracy) == 4


def test_zeroed_tactile_block_reduces_all_to_encoders():
    ds = blob_dataset(np.random.default_rng(6), n_classes=8, per_class=12, spread=1.2)
    ds.features[:, BLOCKS["tau"]] = 0.0
    full = cross_validate(ds, FeatureSubset.ALL, seed=3)
    enc = cross_validate(ds, FeatureSubset.ALL_ENCODERS, seed=3)
    assert np.array_equal(full.confusion, enc.confusion)
    assert full.hypers == enc.hypers


def test_non_stratifiable_dataset_is_rejected():
    ds = blob_dataset(np.random.default_rng(7), n_classes=3, per_class=6)
    with pytest.raises(ValueError):
        cross_validate(ds, FeatureSubset.INIT_ONLY, folds=4)


def test_stratified_folds_share_each_class_equally():
    labels = np.repeat(np.arange(30), 20)
    fold = stratified_folds(labels, 4, np.random.default_rng(8))
    counts = np.array([[np.sum((labels == c) & (fold == f)) for f in range(4)] for c in range(30)])
    assert np.all(counts == 5)
    loose = stratified_folds(np.repeat(np.arange(3), 7), 3, np.random.default_rng(8), strict=False)
    assert sorted(np.bincount(loose)) == [6, 6, 9]


# --- learning curve ----------------------------------------------------------

def test_full_pool_single_repeat_equals_plain_split():
    ds = blob_dataset(np.random.default_rng(9), n_classes=6, per_class=10, spread=2.0)
    hyper = Hyper(1e-3, 1.0)
    rows = learning_curve(ds, sizes=[5], test_per_class=5, repeats=1, rng=np.random.default_rng(10), hyper=hyper)
    rng = np.random.default_rng(10)
    test = np.zeros(len(ds.labels), dtype=bool)
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        test[idx[rng.permutation(len(idx))[:5]]] = True
    m = fit_with_hyper(ds.features[~test], ds.labels[~test], hyper, ds.n_classes)
    expected = np.mean(predict(m, ds.features[test])[1] == ds.labels[test])
    assert rows[0].mean == expected
    assert rows[0].std == 0.0


def test_learning_curve_is_deterministic():
    ds = blob_dataset(np.random.default_rng(11), n_classes=5, per_class=20, spread=2.0)
    runs = [learning_curve(ds, sizes=[3, 9, 15], rng=np.random.default_rng(12), hyper=Hyper(1e-3, 1.0))
            for _ in range(2)]
    assert [(r.mean, r.std) for r in runs[0]] == [(r.mean, r.std) for r in runs[1]]
    assert [r.size for r in runs[0]] == [3, 9, 15]


def test_learning_curve_needs_a_large_enough_pool():
    ds = blob_dataset(np.random.default_rng(13), n_classes=3, per_class=12)
    with pytest.raises(ValueError):
        learning_curve(ds, sizes=[3, 8], hyper=Hyper(1e-3, 1.0))
