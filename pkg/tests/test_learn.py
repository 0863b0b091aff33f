import json

import numpy as np
import pytest

from btcactors.actorgraph import EGO_KINDS, GraphKind
from btcactors.features import CLASSES, FEATURES, FeatureMatrix, FeatureVector
from btcactors.learn import (
    ALL_BASE,
    MANDATORY_BASE,
    BundleError,
    LabeledDataset,
    TrainingError,
    evaluate,
    evaluate_predictions,
    fit_bundle,
    fusion_features,
    group_folds,
    leaked_groups,
    load_bundle,
    meta_features,
    row_splits,
    save_bundle,
    split_train_test,
    stack_kind,
    train_base,
)


def blobs(per_class=20, sep=3.0, seed=0, kinds=EGO_KINDS, shuffle=False, drop=()):
    """Gaussian clusters per class; ``drop`` lists (group, kind) rows to omit."""
    rng = np.random.default_rng(seed)
    centers = {c: rng.normal(size=len(FEATURES)) * sep for c in CLASSES}
    labels = [c for c in CLASSES for _ in range(per_class)]
    groups = [f"g{i:03d}" for i in range(len(labels))]
    truth = list(labels)
    if shuffle:
        truth = rng.permutation(labels).tolist()
    mats = {}
    for kind in kinds:
        rows = []
        for g, c, t in zip(groups, labels, truth):
            if (g, kind) in drop:
                continue
            x = centers[c] + rng.normal(size=len(FEATURES))
            rows.append(FeatureVector(dict(zip(FEATURES, x.tolist())), kind, 0, t, g))
        mats[kind] = FeatureMatrix(kind, FEATURES, rows)
    return LabeledDataset(mats)


@pytest.fixture(scope="module")
def fitted():
    ds = blobs(per_class=15)
    train, test = split_train_test(ds, 0.2, seed=0)
    bundle = fit_bundle(train, seed=0, members=MANDATORY_BASE)
    return ds, train, test, bundle


def test_split_is_stratified_and_disjoint():
    ds = blobs(per_class=10)
    train, test = split_train_test(ds, 0.2, seed=0)
    tl, vl = train.group_labels(), test.group_labels()
    assert not set(tl) & set(vl)
    assert sorted(vl.values()) == sorted(CLASSES * 2)
    assert len(tl) == 24
    again, _ = split_train_test(ds, 0.2, seed=0)
    assert again.group_labels() == tl
    with pytest.raises(TrainingError):
        split_train_test(ds, 1.0)


def test_single_group_class_cannot_split():
    ds = blobs(per_class=1)
    with pytest.raises(TrainingError):
        split_train_test(ds)


def test_folds_have_no_leakage():
    ds = blobs(per_class=12)
    labels = ds.group_labels()
    fold_of = group_folds(labels, 5, seed=0)
    assert set(fold_of) == set(labels) and set(fold_of.values()) == set(range(5))
    for m in ds.matrices.values():
        splits = row_splits(m.groups, fold_of)
        assert len(splits) == 5
        assert leaked_groups(splits, m.groups) == set()
    # a row-level split of repeated groups does leak, and is detected
    groups = ["a", "a", "b", "b"]
    assert leaked_groups([(np.array([0, 2]), np.array([1, 3]))], groups) == {"a", "b"}


def test_meta_widths(fitted):
    _, train, _, bundle = fitted
    for kind, s in bundle.stacked.items():
        assert s.meta_width == len(s.base.names) * (len(CLASSES) - 1)
    assert bundle.final.X.shape == (len(train.group_labels()), 12)
    assert bundle.final.kinds == EGO_KINDS


def test_probabilities_sum_to_one(fitted):
    ds, _, test, bundle = fitted
    for data in (test, ds):
        groups, p, imputed = bundle.predict(data)
        assert p.shape == (len(groups), 3)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert not imputed.any()
    for s in bundle.stacked.values():
        np.testing.assert_allclose(s.oof_proba.sum(axis=1), 1.0, atol=1e-9)


def test_separable_blobs_score_well(fitted):
    _, _, test, bundle = fitted
    assert evaluate(bundle, test).balanced_accuracy >= 0.95
    assert bundle.final.cv["accuracy"] >= 0.95


def test_shuffled_labels_score_near_chance():
    ds = blobs(per_class=30, shuffle=True, kinds=(GraphKind.EGO1,), seed=4)
    m = ds.matrices[GraphKind.EGO1]
    B = train_base(m, GraphKind.EGO1, seed=0, members=MANDATORY_BASE)
    s = stack_kind(B, m, seed=0)
    assert s.cv["accuracy"] < 0.6
    assert max(B.cv_scores.values()) < 0.6


def test_deterministic_given_seed():
    ds = blobs(per_class=8, kinds=EGO_KINDS[:2])
    a = fit_bundle(ds, seed=3, members=MANDATORY_BASE)
    b = fit_bundle(ds, seed=3, members=MANDATORY_BASE)
    np.testing.assert_array_equal(a.final.oof_proba, b.final.oof_proba)
    assert a.schemas == b.schemas


def test_missing_views_are_imputed_uniform():
    per_kind = {EGO_KINDS[0]: {"a": np.array([0.7, 0.2, 0.1])}}
    X, imputed = fusion_features(per_kind, ["a", "b"])
    assert X.shape == (2, 12)
    np.testing.assert_allclose(X[0, :2], [0.7, 0.2])
    np.testing.assert_allclose(X[1], 1 / 3)
    assert imputed[0].tolist() == [False] + [True] * 5
    assert imputed[1].all()


def test_prediction_flags_missing_views(fitted):
    _, _, test, bundle = fitted
    g = sorted(test.group_labels())[0]
    only = {k: m.subset([g]) for k, m in test.matrices.items() if k is GraphKind.EGO1}
    groups, p, imputed = bundle.predict(only)
    assert groups == [g] and imputed.sum() == 5
    groups, p, imputed = bundle.predict({}, groups=["nobody"])
    assert imputed.all() and p.sum() == pytest.approx(1.0)


def test_meta_features_drop_last_column():
    p = [np.array([[0.2, 0.3, 0.5]]), np.array([[0.1, 0.1, 0.8]])]
    assert meta_features(p).tolist() == [[0.2, 0.3, 0.1, 0.1]]


def test_metric_examples():
    r = evaluate_predictions(
        ["ransom", "ransom", "gambling", "random"], ["ransom", "gambling", "gambling", "random"]
    )
    # per-class recall: gambling 1, random 1, ransom 1/2
    assert r.balanced_accuracy == pytest.approx(5 / 6)
    # weighted by support (1, 1, 2): precision (1/2 + 1 + 2) / 4
    assert r.weighted_precision == pytest.approx(0.875)
    assert r.weighted_recall == pytest.approx(0.75)
    assert r.confusion.tolist() == [[1, 0, 0], [0, 1, 0], [1, 0, 1]]
    with pytest.raises(TrainingError):
        evaluate_predictions([], [])


def test_training_errors():
    ds = blobs(per_class=6, kinds=(GraphKind.EGO1,))
    m = ds.matrices[GraphKind.EGO1]
    with pytest.raises(TrainingError):
        train_base(m, GraphKind.EGO1, members=("svm",))
    one = LabeledDataset({GraphKind.EGO1: m.subset([g for g, c in ds.group_labels().items() if c == "ransom"])})
    with pytest.raises(TrainingError):
        fit_bundle(one)
    bad = FeatureVector({"a": 1.0}, GraphKind.EGO1, 0, "pirate", "x")
    with pytest.raises(TrainingError):
        LabeledDataset({GraphKind.EGO1: FeatureMatrix(GraphKind.EGO1, ("a",), [bad])})


def test_all_six_base_learners_run():
    ds = blobs(per_class=8, kinds=(GraphKind.EGO1,))
    m = ds.matrices[GraphKind.EGO1].select(FEATURES[:5])
    B = train_base(m, GraphKind.EGO1, members=ALL_BASE)
    assert B.names == ALL_BASE and set(B.cv_scores) == set(ALL_BASE)
    assert stack_kind(B, m).meta_width == 12


def test_bundle_round_trip(fitted, tmp_path):
    _, _, test, bundle = fitted
    save_bundle(bundle, tmp_path / "m")
    back = load_bundle(tmp_path / "m")
    assert back.schemas == bundle.schemas
    g1, p1, _ = bundle.predict(test)
    g2, p2, _ = back.predict(test)
    assert g1 == g2
    np.testing.assert_allclose(p1, p2, atol=1e-12)
    manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
    manifest["version"] = 99
    (tmp_path / "m" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(BundleError):
        load_bundle(tmp_path / "m")
    with pytest.raises(BundleError):
        load_bundle(tmp_path / "missing")
