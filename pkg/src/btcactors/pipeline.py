"""End-to-end extraction, training and inference over a chain file."""

from __future__ import annotations

import csv
import logging
import os
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import IO

import numpy as np

from .actorgraph import (
    EGO_KINDS,
    SMALL_GRAPH_THRESHOLD,
    ActorGraph,
    GraphKind,
    build_actor_graph,
    is_too_small,
    view,
    write_actor_graph,
)
from .chainstore import ChainIndex, ServiceTagRegistry, load_chain, load_service_tags
from .clustering import ClusterMap, local_cluster, write_cluster_map
from .features import (
    CLASSES,
    FEATURES,
    PRUNE_THRESHOLD,
    FeatureMatrix,
    FeatureVector,
    compute_features,
    read_feature_csv,
    write_feature_csv,
    write_schemas,
)
from .learn import (
    EvalReport,
    ModelBundle,
    LabeledDataset,
    TrainingError,
    cv_fold_scores,
    evaluate_predictions,
    fit_bundle,
    group_folds,
    load_bundle,
    save_bundle,
    split_train_test,
)
from .txgraph import SubgraphLimits, SubgraphTooLarge, TxSubgraph, build_tx_subgraph, write_subgraph

log = logging.getLogger(__name__)

CONFIG_FORMAT = "btcactors-config"
CONFIG_VERSION = 1
CONFIG_ENV = "BTCACTORS_CONFIG"

TINY_GRAPH_FLAG = "low-confidence: tiny graph"


class ConfigError(ValueError):
    pass


class StageError(Exception):
    """A per-address failure, tagged with the stage that raised it."""

    def __init__(self, address: str, stage: str, reason: str):
        super().__init__(f"{address}: {stage}: {reason}")
        self.address = address
        self.stage = stage
        self.reason = reason


@dataclass
class PipelineConfig:
    window_n: int = 144
    max_addresses: int = 1_000_000
    max_transactions: int = 500_000
    small_threshold: int = SMALL_GRAPH_THRESHOLD
    prune_threshold: float = PRUNE_THRESHOLD
    seed: int = 0
    test_fraction: float = 0.2
    folds: int = 5
    jobs: int = 1
    merge_all_outputs: bool = False
    keep_intermediates: bool = True
    chain: str = "chain.jsonl"
    tags: str = "tags.csv"
    seeds: str = "labels.csv"
    out: str = "out"
    schemas: str = ""  # defaults to <models>/schemas.txt
    models: str = ""  # defaults to <out>/model

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.window_n < 1:
            raise ConfigError("window_n must be >= 1")
        if self.max_addresses < 1 or self.max_transactions < 1:
            raise ConfigError("size limits must be positive")
        if self.small_threshold < 1:
            raise ConfigError("small_threshold must be >= 1")
        if not 0 < self.prune_threshold <= 1:
            raise ConfigError("prune_threshold must lie in (0, 1]")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie strictly between 0 and 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def limits(self) -> SubgraphLimits:
        return SubgraphLimits(self.max_addresses, self.max_transactions)

    @property
    def model_dir(self) -> Path:
        return Path(self.models) if self.models else Path(self.out) / "model"

    @property
    def schema_path(self) -> Path:
        return Path(self.schemas) if self.schemas else self.model_dir / "schemas.txt"

    def override(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _coerce(name: str, typ, raw: str):
    if typ == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float, "str": str}[typ](raw.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected {typ}, got {raw!r}") from None


CONFIG_KEYS = {f.name: f.type for f in fields(PipelineConfig)}


def parse_config(lines: Iterable[str]) -> PipelineConfig:
    """Read the ``key = value`` config format.

    The first non-comment line must be ``btcactors-config <version>``.
    """
    values = {}
    version_seen = False
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if not version_seen:
            parts = line.split()
            if len(parts) != 2 or parts[0] != CONFIG_FORMAT:
                raise ConfigError(f"line {lineno}: expected '{CONFIG_FORMAT} {CONFIG_VERSION}' header")
            if parts[1] != str(CONFIG_VERSION):
                raise ConfigError(f"config version {parts[1]} unsupported (want {CONFIG_VERSION})")
            version_seen = True
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, CONFIG_KEYS[key], raw)
    if not version_seen:
        raise ConfigError("empty config file")
    return PipelineConfig(**values)


def write_config(cfg: PipelineConfig, fh: IO[str]) -> None:
    fh.write(f"{CONFIG_FORMAT} {CONFIG_VERSION}\n")
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        fh.write(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}\n")


def load_config(path: str | os.PathLike | None = None) -> PipelineConfig:
    """Config from ``path``, else from ``$BTCACTORS_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh)


def read_seeds(fh: Iterable[str]) -> dict[str, str | None]:
    """Seed addresses with optional class labels (``actor_address[,class]``)."""
    reader = csv.reader(fh)
    out: dict[str, str | None] = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or not row[0].strip() or row[0].startswith("#"):
            continue
        if lineno == 1 and row[0].strip() in ("actor_address", "address"):
            continue
        addr = row[0].strip()
        label = row[1].strip() if len(row) > 1 and row[1].strip() else None
        if label is not None and label not in CLASSES:
            raise ConfigError(f"line {lineno}: unknown class {label!r}")
        if addr in out:
            raise ConfigError(f"line {lineno}: duplicate seed {addr}")
        out[addr] = label
    return out


@dataclass
class Extraction:
    address: str
    subgraph: TxSubgraph
    clusters: ClusterMap
    graph: ActorGraph
    tiny: bool
    views: dict[GraphKind, FeatureVector] = field(default_factory=dict)


def extract(
    index: ChainIndex,
    tags: ServiceTagRegistry,
    address: str,
    cfg: PipelineConfig,
    kinds: Sequence[GraphKind] = EGO_KINDS,
    label: str | None = None,
) -> Extraction:
    """Subgraph, clusters, actor graph and per-view features for one seed.

    Views without edges carry no centrality signal and are left out; the
    fusion stage imputes them.
    """
    stage = "subgraph"
    try:
        sub = build_tx_subgraph(index, address, cfg.window_n, tags, cfg.limits)
        stage = "cluster"
        cm = local_cluster(sub, index, cfg.merge_all_outputs)
        stage = "actor-graph"
        g = build_actor_graph(sub, cm, index)
        ext = Extraction(address, sub, cm, g, is_too_small(g, cfg.small_threshold))
        stage = "features"
        for kind in kinds:
            v = view(g, GraphKind(kind))
            if not v.edges:
                continue
            fv = compute_features(v, kind)
            ext.views[GraphKind(kind)] = replace(fv, label=label, group=address)
        return ext
    except SubgraphTooLarge as exc:
        raise StageError(address, stage, f"skipped: size limit ({exc})") from None
    except KeyError as exc:
        raise StageError(address, stage, f"unknown address {exc}") from None
    except (ValueError, ArithmeticError) as exc:
        raise StageError(address, stage, str(exc)) from None


# worker state for the process pool; set once per worker by _init_worker
_WORKER: dict = {}


def _init_worker(index, tags, cfg) -> None:
    _WORKER.update(index=index, tags=tags, cfg=cfg)


def _extract_one(item: tuple[str, str | None]):
    addr, label = item
    try:
        return extract(_WORKER["index"], _WORKER["tags"], addr, _WORKER["cfg"], label=label)
    except StageError as exc:
        return exc


def extract_all(
    index: ChainIndex,
    tags: ServiceTagRegistry,
    seeds: Mapping[str, str | None],
    cfg: PipelineConfig,
) -> tuple[list[Extraction], list[StageError]]:
    """Run :func:`extract` for every seed; failures are collected, not raised."""
    items = list(seeds.items())
    if cfg.jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(index, tags, cfg)) as pool:
            results = list(pool.map(_extract_one, items, chunksize=8))
    else:
        _init_worker(index, tags, cfg)
        results = [_extract_one(it) for it in items]
    done = [r for r in results if isinstance(r, Extraction)]
    failed = [r for r in results if isinstance(r, StageError)]
    for err in failed:
        log.warning("%s", err)
    return done, failed


def dataset_from(extractions: Iterable[Extraction]) -> LabeledDataset:
    rows: dict[GraphKind, list[FeatureVector]] = {k: [] for k in EGO_KINDS}
    for ext in extractions:
        for kind, fv in ext.views.items():
            rows[kind].append(fv)
    return LabeledDataset({k: FeatureMatrix(k, FEATURES, r) for k, r in rows.items() if r})


def write_skipped(failures: Iterable[StageError], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["address", "stage", "reason"])
    for f in failures:
        w.writerow([f.address, f.stage, f.reason])


def write_intermediates(ext: Extraction, root: Path) -> None:
    d = root / ext.address
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "subgraph.tsv", "w", encoding="utf-8") as fh:
        write_subgraph(ext.subgraph, fh)
    with open(d / "clusters.csv", "w", encoding="utf-8") as fh:
        write_cluster_map(ext.clusters, fh)
    with open(d / "actor_graph.csv", "w", encoding="utf-8") as fh:
        write_actor_graph(ext.graph, fh)


# -- reporting --------------------------------------------------------------


@dataclass
class PipelineResult:
    report: EvalReport
    bundle: ModelBundle
    n_seeds: int
    n_used: int
    skipped: list[StageError]
    tiny: list[str]
    test_groups: list[str]
    out: Path


REPORT_FIELDS = ("stage", "graph", "model", "accuracy", "precision", "recall")


def report_rows(bundle: ModelBundle, test: EvalReport | None = None) -> list[dict]:
    """Base, stacked and fused scores as flat records.

    Base rows hold each learner's cross-validated balanced accuracy; stacked
    and fused rows hold out-of-fold scores; the test row holds held-out scores.
    """
    rows = []
    for kind, s in bundle.stacked.items():
        for name, acc in s.base.cv_scores.items():
            rows.append({"stage": "base", "graph": kind.value, "model": name, "accuracy": acc})
    for kind, s in bundle.stacked.items():
        cv = getattr(s, "cv", None)
        if cv:
            rows.append({"stage": "stacking", "graph": kind.value, "model": "stacking", **cv})
    if bundle.final.cv:
        rows.append({"stage": "stacking-bagging", "graph": "all", "model": "cv", **bundle.final.cv})
    if test is not None:
        rows.append(
            {
                "stage": "stacking-bagging",
                "graph": "all",
                "model": "test",
                "accuracy": test.balanced_accuracy,
                "precision": test.weighted_precision,
                "recall": test.weighted_recall,
            }
        )
    return rows


def write_report_csv(rows: list[dict], fh: IO[str]) -> None:
    w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n", restval="")
    w.writeheader()
    w.writerows(rows)


def read_report_csv(fh: Iterable[str]) -> list[dict]:
    out = []
    for r in csv.DictReader(fh):
        out.append({k: (float(v) if k in ("accuracy", "precision", "recall") and v != "" else v) for k, v in r.items()})
    return out


def _fmt(v) -> str:
    return "" if v in ("", None) else f"{v:.4f}"


def format_report(rows: list[dict], confusion: np.ndarray | None = None) -> str:
    """Plain-text tables: base accuracy grid, stacked scores, fused scores."""
    out = []
    base = [r for r in rows if r["stage"] == "base"]
    if base:
        graphs = list(dict.fromkeys(r["graph"] for r in base))
        models = list(dict.fromkeys(r["model"] for r in base))
        acc = {(r["graph"], r["model"]): r["accuracy"] for r in base}
        width = max(len(m) for m in models) + 2
        out.append("Base classifiers (cross-validated balanced accuracy)")
        out.append("model".ljust(width) + "".join(g.rjust(13) for g in graphs))
        for m in models:
            out.append(m.ljust(width) + "".join(_fmt(acc.get((g, m))).rjust(13) for g in graphs))
        out.append("")
    for stage, title in (("stacking", "Stacking per graph kind"), ("stacking-bagging", "Stacking-bagging")):
        sel = [r for r in rows if r["stage"] == stage]
        if not sel:
            continue
        out.append(title)
        out.append(f"{'graph':<14}{'model':<10}{'accuracy':>10}{'precision':>11}{'recall':>9}")
        for r in sel:
            out.append(
                f"{r['graph']:<14}{r['model']:<10}{_fmt(r['accuracy']):>10}"
                f"{_fmt(r.get('precision')):>11}{_fmt(r.get('recall')):>9}"
            )
        out.append("")
    if confusion is not None:
        out.append("Confusion matrix (rows true, columns predicted)")
        out.append(" " * 10 + "".join(c.rjust(10) for c in CLASSES))
        for c, row in zip(CLASSES, np.asarray(confusion)):
            out.append(c.ljust(10) + "".join(str(int(v)).rjust(10) for v in row))
        out.append("")
    return "\n".join(out)


def write_confusion(cm: np.ndarray, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["true", *CLASSES])
    for c, row in zip(CLASSES, np.asarray(cm)):
        w.writerow([c, *(int(v) for v in row)])


# -- top level --------------------------------------------------------------


def load_inputs(cfg: PipelineConfig) -> tuple[ChainIndex, ServiceTagRegistry]:
    index = load_chain(cfg.chain)
    tags = ServiceTagRegistry()
    if cfg.tags and Path(cfg.tags).exists():
        with open(cfg.tags, encoding="utf-8") as fh:
            tags = load_service_tags(fh)
    elif cfg.tags:
        log.warning("no service tag file at %s", cfg.tags)
    return index, tags


def train_and_report(ds: LabeledDataset, cfg: PipelineConfig, out: Path):
    train, test = split_train_test(ds, cfg.test_fraction, cfg.seed)
    bundle = fit_bundle(train, seed=cfg.seed, folds=cfg.folds, prune_threshold=cfg.prune_threshold)
    labels = test.group_labels()
    groups, proba, imputed = bundle.predict(test)
    y_pred = [CLASSES[i] for i in proba.argmax(axis=1)]
    fold_of = group_folds(train.group_labels(), cfg.folds, cfg.seed)
    report = evaluate_predictions([labels[g] for g in groups], y_pred, cv_fold_scores(bundle.final, fold_of))
    save_bundle(bundle, cfg.model_dir)
    if cfg.schema_path != cfg.model_dir / "schemas.txt":
        with open(cfg.schema_path, "w", encoding="utf-8") as fh:
            write_schemas(bundle.schemas, fh)
    with open(out / "predictions.csv", "w", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "true", "predicted", *(f"p_{c}" for c in CLASSES), "imputed_views"])
        for g, p, yp, imp in zip(groups, proba, y_pred, imputed):
            w.writerow([g, labels[g], yp, *(repr(float(x)) for x in p), int(imp.sum())])
    rows = report_rows(bundle, report)
    with open(out / "report.csv", "w", encoding="utf-8") as fh:
        write_report_csv(rows, fh)
    with open(out / "confusion.csv", "w", encoding="utf-8") as fh:
        write_confusion(report.confusion, fh)
    (out / "report.txt").write_text(format_report(rows, report.confusion), encoding="utf-8")
    return bundle, report, sorted(labels)


def run_pipeline(cfg: PipelineConfig, seeds: Mapping[str, str | None] | None = None) -> PipelineResult:
    """Extract every labelled seed, split 80/20, train, evaluate and persist."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    index, tags = load_inputs(cfg)
    if seeds is None:
        with open(cfg.seeds, encoding="utf-8") as fh:
            seeds = read_seeds(fh)
    labelled = {a: c for a, c in seeds.items() if c is not None}
    if len(set(labelled.values())) < 2:
        raise TrainingError("seeds file needs at least two classes")
    done, failed = extract_all(index, tags, labelled, cfg)
    tiny = [e.address for e in done if e.tiny]
    for a in tiny:
        log.info("%s: dropped: fewer than %d actors", a, cfg.small_threshold)
    kept = [e for e in done if not e.tiny]
    with open(out / "skipped.csv", "w", encoding="utf-8") as fh:
        write_skipped(failed, fh)
        w = csv.writer(fh, lineterminator="\n")
        for a in tiny:
            w.writerow([a, "actor-graph", f"dropped: fewer than {cfg.small_threshold} actors"])
    with open(out / "features.csv", "w", encoding="utf-8") as fh:
        write_feature_csv((fv for e in kept for fv in e.views.values()), fh)
    if cfg.keep_intermediates:
        for e in done:
            write_intermediates(e, out / "graphs")
    ds = dataset_from(kept)
    bundle, report, test_groups = train_and_report(ds, cfg, out)
    log.info(
        "held-out balanced accuracy %.4f on %d groups (%d seeds, %d skipped, %d tiny)",
        report.balanced_accuracy, report.n, len(labelled), len(failed), len(tiny),
    )
    return PipelineResult(report, bundle, len(labelled), len(kept), failed, tiny, test_groups, out)


def train_from_features(path, cfg: PipelineConfig) -> tuple[ModelBundle, EvalReport]:
    """Training stage alone, from a persisted features CSV."""
    with open(path, encoding="utf-8") as fh:
        matrices = read_feature_csv(fh)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle, report, _ = train_and_report(LabeledDataset(matrices), cfg, out)
    return bundle, report


@dataclass
class Prediction:
    address: str
    label: str
    proba: dict[str, float]
    imputed: list[GraphKind]
    flags: list[str]
    features: dict[GraphKind, FeatureVector]


def predict(
    cfg: PipelineConfig,
    model_dir,
    address: str,
    index: ChainIndex | None = None,
    tags: ServiceTagRegistry | None = None,
    bundle: ModelBundle | None = None,
) -> Prediction:
    """Classify one address; absent views are imputed and tiny graphs flagged."""
    if index is None:
        index, tags = load_inputs(cfg)
    bundle = bundle or load_bundle(model_dir)
    if not index.has_address(address):
        raise StageError(address, "subgraph", f"unknown address {address}")
    ext = extract(index, tags or ServiceTagRegistry(), address, cfg, kinds=bundle.final.kinds)
    matrices = {k: FeatureMatrix(k, FEATURES, [fv]) for k, fv in ext.views.items()}
    _, proba, imputed = bundle.predict(matrices, groups=[address])
    p = proba[0]
    imp = [k for k, flag in zip(bundle.final.kinds, imputed[0]) if flag]
    flags = [TINY_GRAPH_FLAG] if ext.tiny else []
    if imp:
        flags.append(f"imputed views: {','.join(k.value for k in imp)}")
    return Prediction(
        address,
        CLASSES[int(np.argmax(p))],
        {c: float(x) for c, x in zip(CLASSES, p)},
        imp,
        flags,
        ext.views,
    )
