"""Three-stage classifier: base learners, per-view stacking, cross-view fusion.

Every fit is keyed by *group*, the seed address behind one whole graph, so a
group's six views always fall on the same side of any split or fold.
"""

from __future__ import annotations

import json
import logging
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import joblib
import numpy as np
import sklearn
from sklearn.base import clone
from sklearn.ensemble import AdaBoostClassifier, GradientBoostingClassifier, RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import (
    balanced_accuracy_score,
    confusion_matrix,
    precision_score,
    recall_score,
)
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.naive_bayes import GaussianNB
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import FunctionTransformer, StandardScaler
from sklearn.svm import SVC

from .actorgraph import EGO_KINDS, GraphKind
from .features import CLASSES, FeatureMatrix, freeze_schema, read_schemas, write_schemas

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "btcactors-model"
BUNDLE_VERSION = 1

MANDATORY_BASE = ("naive_bayes", "logistic", "random_forest")
OPTIONAL_BASE = ("gradient_boosting", "adaboost", "svm")
ALL_BASE = MANDATORY_BASE + OPTIONAL_BASE


class TrainingError(ValueError):
    pass


def signed_log1p(X):
    return np.sign(X) * np.log1p(np.abs(X))


def _scaled(clf) -> Pipeline:
    return Pipeline(
        [
            ("log", FunctionTransformer(signed_log1p)),
            ("scale", StandardScaler()),
            ("clf", clf),
        ]
    )


def base_specs(seed: int = 0) -> dict[str, tuple[object, dict]]:
    """Estimators and their (deliberately small) hyperparameter grids."""
    return {
        "naive_bayes": (_scaled(GaussianNB()), {"clf__var_smoothing": [1e-9, 1e-3]}),
        "logistic": (_scaled(LogisticRegression(max_iter=2000)), {"clf__C": [0.1, 1.0, 10.0]}),
        "random_forest": (
            RandomForestClassifier(n_estimators=100, random_state=seed),
            {"max_depth": [None, 6]},
        ),
        "gradient_boosting": (
            GradientBoostingClassifier(n_estimators=60, random_state=seed),
            {"max_depth": [2, 3]},
        ),
        "adaboost": (AdaBoostClassifier(random_state=seed), {"n_estimators": [50, 100]}),
        "svm": (_scaled(SVC(probability=True, random_state=seed)), {"clf__C": [1.0, 10.0]}),
    }


@dataclass
class LabeledDataset:
    """One feature matrix per view kind, rows keyed by group."""

    matrices: dict[GraphKind, FeatureMatrix]

    def __post_init__(self):
        self.group_labels()

    def group_labels(self) -> dict[str, str]:
        labels: dict[str, str] = {}
        for m in self.matrices.values():
            for r in m.rows:
                if r.group is None or r.label is None:
                    raise TrainingError("every row needs a group and a label")
                if r.label not in CLASSES:
                    raise TrainingError(f"unknown class {r.label!r}")
                if labels.setdefault(r.group, r.label) != r.label:
                    raise TrainingError(f"group {r.group} has conflicting labels")
        return dict(sorted(labels.items()))

    def subset(self, groups) -> "LabeledDataset":
        groups = set(groups)
        return LabeledDataset({k: m.subset(groups) for k, m in self.matrices.items()})


def split_train_test(
    ds: LabeledDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified group split: ``round(fraction * n_c)`` test groups per class."""
    if not 0 < test_fraction < 1:
        raise TrainingError("test fraction must lie strictly between 0 and 1")
    labels = ds.group_labels()
    rng = np.random.default_rng(seed)
    test = []
    for cls in sorted(set(labels.values())):
        members = [g for g, c in labels.items() if c == cls]
        if len(members) < 2:
            raise TrainingError(f"class {cls!r} has fewer than 2 groups")
        n_test = int(np.floor(test_fraction * len(members) + 0.5))
        n_test = min(max(n_test, 1), len(members) - 1)
        test += rng.permutation(members)[:n_test].tolist()
    train = [g for g in labels if g not in set(test)]
    return ds.subset(train), ds.subset(test)


def group_folds(labels: Mapping[str, str], k: int = 5, seed: int = 0) -> dict[str, int]:
    """Stratified assignment of groups to ``k`` validation folds."""
    groups = sorted(labels)
    y = [labels[g] for g in groups]
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    fold_of = {}
    for f, (_, test_idx) in enumerate(skf.split(np.zeros(len(groups)), y)):
        for i in test_idx:
            fold_of[groups[i]] = f
    return fold_of


def row_splits(groups: Sequence[str], fold_of: Mapping[str, int]) -> list[tuple[np.ndarray, np.ndarray]]:
    folds = np.array([fold_of[g] for g in groups])
    out = []
    for f in sorted(set(folds.tolist())):
        out.append((np.flatnonzero(folds != f), np.flatnonzero(folds == f)))
    return out


def leaked_groups(splits, groups: Sequence[str]) -> set[str]:
    """Groups appearing on both sides of any split."""
    g = np.asarray(groups)
    leaked = set()
    for tr, te in splits:
        leaked |= set(g[tr].tolist()) & set(g[te].tolist())
    return leaked


def _check_folds(y: np.ndarray, splits) -> None:
    need = set(np.unique(y).tolist())
    for tr, _ in splits:
        if set(y[tr].tolist()) != need:
            raise TrainingError("a training fold is missing a class")


def _oof_proba(est, X, y, splits) -> np.ndarray:
    out = np.zeros((len(y), len(CLASSES)))
    for tr, te in splits:
        model = clone(est).fit(X[tr], y[tr])
        out[te] = _proba(model, X[te])
    return out


def _proba(model, X) -> np.ndarray:
    """Probabilities aligned to :data:`CLASSES`, zero for unseen classes."""
    p = model.predict_proba(X)
    out = np.zeros((len(X), len(CLASSES)))
    for j, c in enumerate(model.classes_):
        out[:, CLASSES.index(c)] = p[:, j]
    return out


def meta_features(probas: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate probability blocks minus their last, linearly dependent, column."""
    return np.hstack([p[:, :-1] for p in probas])


def _meta_model(seed: int) -> LogisticRegression:
    return LogisticRegression(max_iter=5000, random_state=seed)


def _scores(y_true, y_pred) -> dict[str, float]:
    return {
        "accuracy": float(balanced_accuracy_score(y_true, y_pred)),
        "precision": float(
            precision_score(y_true, y_pred, labels=list(CLASSES), average="weighted", zero_division=0)
        ),
        "recall": float(recall_score(y_true, y_pred, labels=list(CLASSES), average="weighted", zero_division=0)),
    }


def _argmax_labels(p: np.ndarray) -> np.ndarray:
    return np.array(CLASSES)[p.argmax(axis=1)]


@dataclass
class BaseSet:
    kind: GraphKind
    names: tuple[str, ...]
    estimators: dict[str, object]
    params: dict[str, dict]
    cv_scores: dict[str, float]

    def predict_proba(self, X) -> list[np.ndarray]:
        return [_proba(self.estimators[n], X) for n in self.names]


def train_base(
    train: FeatureMatrix,
    kind: GraphKind,
    splits=None,
    seed: int = 0,
    members: Sequence[str] = ALL_BASE,
) -> BaseSet:
    """Grid-search every base learner under group-stratified CV."""
    if len(train) == 0:
        raise TrainingError(f"{kind}: empty training matrix")
    X, y = train.X, np.array(train.labels)
    if len(set(y.tolist())) < 2:
        raise TrainingError(f"{kind}: need at least two classes")
    missing = set(MANDATORY_BASE) - set(members)
    if missing:
        raise TrainingError(f"mandatory base learners missing: {sorted(missing)}")
    if splits is None:
        labels = dict(zip(train.groups, train.labels))
        splits = row_splits(train.groups, group_folds(labels, 5, seed))
    _check_folds(y, splits)
    specs = base_specs(seed)
    estimators, params, scores = {}, {}, {}
    for name in members:
        est, grid = specs[name]
        search = GridSearchCV(est, grid, scoring="balanced_accuracy", cv=splits, refit=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=ConvergenceWarning)
            warnings.simplefilter("ignore", category=RuntimeWarning)
            search.fit(X, y)
        estimators[name] = search.best_estimator_
        params[name] = search.best_params_
        scores[name] = float(search.best_score_)
    return BaseSet(GraphKind(kind), tuple(members), estimators, params, scores)


@dataclass
class StackedKind:
    kind: GraphKind
    schema: tuple[str, ...]
    base: BaseSet
    meta: LogisticRegression
    groups: list[str]
    oof_meta_X: np.ndarray
    oof_proba: np.ndarray
    cv: dict[str, float]

    @property
    def meta_width(self) -> int:
        return self.oof_meta_X.shape[1]

    def predict_proba(self, X) -> np.ndarray:
        return _proba(self.meta, meta_features(self.base.predict_proba(X)))


def stack_kind(B: BaseSet, train: FeatureMatrix, splits=None, seed: int = 0) -> StackedKind:
    """Fit a linear meta-model on out-of-fold base probabilities."""
    X, y = train.X, np.array(train.labels)
    if splits is None:
        labels = dict(zip(train.groups, train.labels))
        splits = row_splits(train.groups, group_folds(labels, 5, seed))
    _check_folds(y, splits)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        warnings.simplefilter("ignore", category=RuntimeWarning)
        probas = [_oof_proba(B.estimators[n], X, y, splits) for n in B.names]
    Z = meta_features(probas)
    meta = _meta_model(seed).fit(Z, y)
    oof = _oof_proba(_meta_model(seed), Z, y, splits)
    return StackedKind(
        kind=B.kind,
        schema=train.schema,
        base=B,
        meta=meta,
        groups=list(train.groups),
        oof_meta_X=Z,
        oof_proba=oof,
        cv=_scores(y, _argmax_labels(oof)),
    )


UNIFORM = np.full(len(CLASSES), 1.0 / len(CLASSES))


def fusion_features(
    per_kind: Mapping[GraphKind, Mapping[str, np.ndarray]], groups: Sequence[str], kinds=EGO_KINDS
) -> tuple[np.ndarray, np.ndarray]:
    """One row per group of per-view probabilities; absent views are uniform.

    Returns the feature matrix and a boolean mask of imputed (group, view) cells.
    """
    imputed = np.zeros((len(groups), len(kinds)), dtype=bool)
    blocks = []
    for j, kind in enumerate(kinds):
        rows = per_kind.get(kind, {})
        block = np.empty((len(groups), len(CLASSES)))
        for i, g in enumerate(groups):
            if g in rows:
                block[i] = rows[g]
            else:
                block[i] = UNIFORM
                imputed[i, j] = True
        blocks.append(block)
    return meta_features(blocks), imputed


@dataclass
class FinalModel:
    kinds: tuple[GraphKind, ...]
    meta: LogisticRegression
    groups: list[str]
    y: np.ndarray
    X: np.ndarray
    imputed: np.ndarray
    oof_proba: np.ndarray
    cv: dict[str, float]


def stack_bag(
    stacked: Mapping[GraphKind, StackedKind],
    train: LabeledDataset,
    fold_of: Mapping[str, int] | None = None,
    seed: int = 0,
) -> FinalModel:
    """Fuse the per-view stacked models with a linear meta-model."""
    kinds = tuple(k for k in EGO_KINDS if k in stacked)
    if len(kinds) != len(EGO_KINDS):
        log.warning("fusing %d of %d views", len(kinds), len(EGO_KINDS))
    labels = train.group_labels()
    groups = list(labels)
    if fold_of is None:
        fold_of = group_folds(labels, 5, seed)
    per_kind = {k: dict(zip(s.groups, s.oof_proba)) for k, s in stacked.items()}
    X, imputed = fusion_features(per_kind, groups, kinds)
    if imputed.any():
        log.warning("imputed uniform probabilities for %d (group, view) cells", int(imputed.sum()))
    y = np.array([labels[g] for g in groups])
    splits = row_splits(groups, fold_of)
    _check_folds(y, splits)
    meta = _meta_model(seed).fit(X, y)
    oof = _oof_proba(_meta_model(seed), X, y, splits)
    return FinalModel(kinds, meta, groups, y, X, imputed, oof, _scores(y, _argmax_labels(oof)))


@dataclass
class ModelBundle:
    schemas: dict[GraphKind, tuple[str, ...]]
    stacked: dict[GraphKind, StackedKind]
    final: FinalModel
    classes: tuple[str, ...] = CLASSES
    seed: int = 0

    def predict(self, ds: LabeledDataset | Mapping[GraphKind, FeatureMatrix], groups=None):
        """Final probabilities per group.

        Returns ``(groups, probabilities, imputed)``; ``imputed`` marks views
        missing for a group. Pass ``groups`` to score groups with no rows.
        """
        matrices = ds.matrices if isinstance(ds, LabeledDataset) else ds
        if groups is None:
            groups = sorted({g for m in matrices.values() for g in m.groups})
        per_kind = {}
        for kind in self.final.kinds:
            m = matrices.get(kind)
            if m is None or len(m) == 0:
                continue
            sub = m.select(self.schemas[kind])
            p = self.stacked[kind].predict_proba(sub.X)
            per_kind[kind] = dict(zip(sub.groups, p))
        X, imputed = fusion_features(per_kind, groups, self.final.kinds)
        return groups, _proba(self.final.meta, X), imputed


def fit_bundle(
    train: LabeledDataset,
    seed: int = 0,
    folds: int = 5,
    members: Sequence[str] = ALL_BASE,
    prune_threshold: float = 0.95,
) -> ModelBundle:
    labels = train.group_labels()
    if len(set(labels.values())) < 2:
        raise TrainingError("training data has a single class")
    fold_of = group_folds(labels, folds, seed)
    schemas, stacked = {}, {}
    for kind in EGO_KINDS:
        m = train.matrices.get(kind)
        if m is None or len(m) < 2:
            log.warning("no training rows for %s", kind.value)
            continue
        schemas[kind] = freeze_schema(m, prune_threshold)
        m = m.select(schemas[kind])
        splits = row_splits(m.groups, fold_of)
        B = train_base(m, kind, splits, seed, members)
        stacked[kind] = stack_kind(B, m, splits, seed)
        log.info("%s: stacked CV balanced accuracy %.3f", kind.value, stacked[kind].cv["accuracy"])
    if not stacked:
        raise TrainingError("no view kind had training rows")
    final = stack_bag(stacked, train, fold_of, seed)
    return ModelBundle(schemas, stacked, final, CLASSES, seed)


@dataclass
class EvalReport:
    balanced_accuracy: float
    weighted_precision: float
    weighted_recall: float
    confusion: np.ndarray
    n: int
    per_fold: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "n": self.n,
        }


def evaluate_predictions(y_true: Sequence[str], y_pred: Sequence[str], per_fold=()) -> EvalReport:
    if len(y_true) == 0:
        raise TrainingError("cannot evaluate on empty data")
    s = _scores(np.asarray(y_true), np.asarray(y_pred))
    cm = confusion_matrix(y_true, y_pred, labels=list(CLASSES))
    return EvalReport(s["accuracy"], s["precision"], s["recall"], cm, len(y_true), list(per_fold))


def evaluate(bundle: ModelBundle, data: LabeledDataset) -> EvalReport:
    labels = data.group_labels()
    groups, proba, _ = bundle.predict(data)
    if not groups:
        raise TrainingError("cannot evaluate on empty data")
    return evaluate_predictions([labels[g] for g in groups], _argmax_labels(proba))


def cv_fold_scores(final: FinalModel, fold_of: Mapping[str, int]) -> list[float]:
    """Balanced accuracy of the fused out-of-fold predictions, fold by fold."""
    folds = np.array([fold_of[g] for g in final.groups])
    y_pred = _argmax_labels(final.oof_proba)
    return [
        float(balanced_accuracy_score(final.y[folds == f], y_pred[folds == f]))
        for f in sorted(set(folds.tolist()))
    ]


def save_bundle(bundle: ModelBundle, path) -> Path:
    path = Path(path)
    (path / "models").mkdir(parents=True, exist_ok=True)
    with open(path / "schemas.txt", "w", encoding="utf-8") as fh:
        write_schemas(bundle.schemas, fh)
    for kind, s in bundle.stacked.items():
        joblib.dump({"base": s.base.estimators, "names": s.base.names, "meta": s.meta}, path / "models" / f"{kind.value}.joblib")
    joblib.dump({"meta": bundle.final.meta, "kinds": [k.value for k in bundle.final.kinds]}, path / "models" / "final.joblib")
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "classes": list(bundle.classes),
        "kinds": [k.value for k in bundle.final.kinds],
        "base_members": {k.value: list(s.base.names) for k, s in bundle.stacked.items()},
        "base_params": {k.value: {n: {p: repr(v) for p, v in ps.items()} for n, ps in s.base.params.items()} for k, s in bundle.stacked.items()},
        "seed": bundle.seed,
        "sklearn_version": sklearn.__version__,
        "cv": {
            "base": {k.value: s.base.cv_scores for k, s in bundle.stacked.items()},
            "stacked": {k.value: s.cv for k, s in bundle.stacked.items()},
            "final": bundle.final.cv,
        },
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


class BundleError(ValueError):
    pass


@dataclass
class LoadedStacked:
    """Inference-only counterpart of :class:`StackedKind`."""

    kind: GraphKind
    base: BaseSet
    meta: LogisticRegression

    def predict_proba(self, X) -> np.ndarray:
        return _proba(self.meta, meta_features(self.base.predict_proba(X)))


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise BundleError(f"{path} has no manifest.json") from None
    if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
        raise BundleError(
            f"unsupported model bundle {manifest.get('format')} v{manifest.get('version')}"
        )
    if tuple(manifest["classes"]) != CLASSES:
        raise BundleError(f"class order mismatch: {manifest['classes']}")
    with open(path / "schemas.txt", encoding="utf-8") as fh:
        schemas = read_schemas(fh)
    stacked = {}
    for name in manifest["kinds"]:
        kind = GraphKind(name)
        blob = joblib.load(path / "models" / f"{name}.joblib")
        base = BaseSet(kind, tuple(blob["names"]), blob["base"], {}, manifest["cv"]["base"][name])
        stacked[kind] = LoadedStacked(kind, base, blob["meta"])
    fblob = joblib.load(path / "models" / "final.joblib")
    kinds = tuple(GraphKind(k) for k in fblob["kinds"])
    final = FinalModel(kinds, fblob["meta"], [], np.empty(0), np.empty((0, 0)), np.empty((0, 0)), np.empty((0, 3)), manifest["cv"]["final"])
    return ModelBundle(schemas, stacked, final, CLASSES, manifest.get("seed", 0))
