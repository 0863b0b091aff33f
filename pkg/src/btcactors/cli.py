"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from dataclasses import fields
from pathlib import Path

from . import __version__, kernels
from .actorgraph import EGO_KINDS, GraphKind, build_actor_graph, view, write_actor_graph
from .chainstore import ChainError, UnknownAddressError
from .clustering import local_cluster, write_cluster_map
from .features import (
    CLASSES,
    FEATURES,
    FeatureMatrix,
    read_feature_csv,
    summarize_by_class,
    write_feature_csv,
    write_summary,
)
from .learn import BundleError, TrainingError
from .pipeline import (
    CONFIG_ENV,
    ConfigError,
    PipelineConfig,
    StageError,
    extract_all,
    format_report,
    load_config,
    load_inputs,
    predict,
    read_report_csv,
    read_seeds,
    run_pipeline,
    train_from_features,
    write_config,
    write_skipped,
)
from .synth import SynthConfig, SynthConfigError, generate_chain, load_config as load_synth_config
from .txgraph import SubgraphTooLarge, build_tx_subgraph, is_coinjoin, write_subgraph

log = logging.getLogger("btcactors")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_flags() -> argparse.ArgumentParser:
    """Every config key as a same-named flag; unset flags leave the config alone."""
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline config overrides")
    conv = {"int": int, "float": float, "str": str}
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            g.add_argument(flag, dest=f.name, type=conv[f.type], default=None, metavar=f.name.upper())
    return p


def _kinds(text: str) -> list[GraphKind]:
    try:
        return [GraphKind(k.strip()) for k in text.split(",") if k.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _open_out(path: str | None):
    if path in (None, "-"):
        return _NoClose(sys.stdout)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8")


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def build_parser() -> argparse.ArgumentParser:
    common = _config_flags()
    ap = _Parser(prog="btcactors", description="Actor classification on Bitcoin transaction graphs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate a chain file and print statistics")

    p = sub.add_parser("subgraph", parents=[common], help="transaction subgraph around an address")
    p.add_argument("--address", required=True)
    p.add_argument("--n", type=int, help="block window (overrides window_n)")
    p.add_argument("-o", "--output")

    p = sub.add_parser("cluster", parents=[common], help="local clustering of an address's subgraph")
    p.add_argument("--address", required=True)
    p.add_argument("-o", "--output")

    p = sub.add_parser("actor-graph", parents=[common], help="actor graph (or one view of it)")
    p.add_argument("--address", required=True)
    p.add_argument("--kind", type=GraphKind, default=GraphKind.WHOLE, choices=list(GraphKind))
    p.add_argument("-o", "--output")

    p = sub.add_parser("features", parents=[common], help="feature rows for a seeds file or an address")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--address")
    src.add_argument("--seeds-file", help="seed list (defaults to the config's seeds)")
    p.add_argument("--kinds", type=_kinds, default=list(EGO_KINDS), help="comma-separated view kinds")
    p.add_argument("-o", "--output")

    p = sub.add_parser("summarize", parents=[common], help="per-class feature distribution summary")
    p.add_argument("--features", required=True, help="features CSV")
    p.add_argument("--kind", type=GraphKind, default=GraphKind.EGO1_SIMPLE, choices=list(GraphKind))
    p.add_argument("-o", "--output")

    p = sub.add_parser("train", parents=[common], help="train and evaluate from a features CSV")
    p.add_argument("--features", required=True)

    p = sub.add_parser("predict", parents=[common], help="classify one address with a saved model")
    p.add_argument("--address", required=True)
    p.add_argument("--model-dir", help="model bundle (defaults to the config's models path)")
    p.add_argument("--dump-features", help="write the extracted feature rows here")

    p = sub.add_parser("synth", help="generate a synthetic labelled chain")
    p.add_argument("--config", dest="synth_config", help="JSON generator config")
    p.add_argument("--seed", type=int)
    p.add_argument("--actors-per-class", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("-o", "--output", default=".", help="output directory")

    p = sub.add_parser("report", parents=[common], help="print the tables of a finished run")
    p.add_argument("--dir", help="run directory (defaults to the config's out)")

    p = sub.add_parser("run", parents=[common], help="extract, train and evaluate in one go")
    p.add_argument("--save-config", help="also write the effective config here")
    return ap


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    return cfg.override(**overrides)


def cmd_ingest(args, cfg) -> int:
    index, tags = load_inputs(cfg)
    txs = index.transactions
    kinds = Counter(o.kind.value for tx in txs for o in tx.outputs)
    print(f"transactions\t{len(txs)}")
    print(f"addresses\t{sum(1 for _ in index.addresses())}")
    print(f"heights\t{txs[0].height}..{txs[-1].height}" if txs else "heights\t-")
    print(f"coinbase\t{sum(tx.is_coinbase for tx in txs)}")
    print(f"coinjoin\t{sum(is_coinjoin(tx) for tx in txs)}")
    for k, v in sorted(kinds.items()):
        print(f"outputs.{k}\t{v}")
    print(f"tagged\t{len(tags)}")
    return EXIT_OK


def cmd_subgraph(args, cfg) -> int:
    index, tags = load_inputs(cfg)
    n = args.n if args.n is not None else cfg.window_n
    sub = build_tx_subgraph(index, args.address, n, tags, cfg.limits)
    with _open_out(args.output) as fh:
        write_subgraph(sub, fh)
    return EXIT_OK


def _subgraph_and_clusters(cfg, address):
    index, tags = load_inputs(cfg)
    sub = build_tx_subgraph(index, address, cfg.window_n, tags, cfg.limits)
    return index, sub, local_cluster(sub, index, cfg.merge_all_outputs)


def cmd_cluster(args, cfg) -> int:
    _, _, cm = _subgraph_and_clusters(cfg, args.address)
    with _open_out(args.output) as fh:
        write_cluster_map(cm, fh)
    return EXIT_OK


def cmd_actor_graph(args, cfg) -> int:
    index, sub, cm = _subgraph_and_clusters(cfg, args.address)
    g = view(build_actor_graph(sub, cm, index), args.kind)
    with _open_out(args.output) as fh:
        write_actor_graph(g, fh, args.kind)
    return EXIT_OK


def cmd_features(args, cfg) -> int:
    index, tags = load_inputs(cfg)
    if args.address:
        seeds = {args.address: None}
    else:
        with open(args.seeds_file or cfg.seeds, encoding="utf-8") as fh:
            seeds = read_seeds(fh)
    run_cfg = cfg.override(keep_intermediates=False)
    done, failed = _extract(index, tags, seeds, run_cfg, args.kinds)
    rows = [fv for e in done if not e.tiny or args.address for fv in e.views.values()]
    with _open_out(args.output) as fh:
        write_feature_csv(rows, fh)
    if failed:
        write_skipped(failed, sys.stderr)
    if args.address and failed:
        return EXIT_DATA
    return EXIT_OK


def _extract(index, tags, seeds, cfg, kinds):
    from . import pipeline

    if list(kinds) == list(EGO_KINDS):
        return extract_all(index, tags, seeds, cfg)
    done, failed = [], []
    for addr, label in seeds.items():
        try:
            done.append(pipeline.extract(index, tags, addr, cfg, kinds, label))
        except StageError as exc:
            log.warning("%s", exc)
            failed.append(exc)
    return done, failed


def cmd_summarize(args, cfg) -> int:
    with open(args.features, encoding="utf-8") as fh:
        matrices = read_feature_csv(fh)
    m = matrices.get(args.kind)
    if m is None or len(m) == 0:
        raise ValueError(f"no rows of kind {args.kind.value} in {args.features}")
    labelled = FeatureMatrix(m.kind, m.schema, [r for r in m.rows if r.label is not None])
    with _open_out(args.output) as fh:
        write_summary(summarize_by_class(labelled), fh)
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    _, report = train_from_features(args.features, cfg)
    print((Path(cfg.out) / "report.txt").read_text(encoding="utf-8"))
    print(f"held-out balanced accuracy\t{report.balanced_accuracy:.4f}")
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    model_dir = args.model_dir or cfg.model_dir
    pred = predict(cfg, model_dir, args.address)
    print(json.dumps(
        {
            "address": pred.address,
            "class": pred.label,
            "probabilities": pred.proba,
            "flags": pred.flags,
        },
        indent=2,
    ))
    if args.dump_features:
        with _open_out(args.dump_features) as fh:
            write_feature_csv(pred.features.values(), fh)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.synth_config) if args.synth_config else SynthConfig()
    for key in ("seed", "actors_per_class", "blocks"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    result = generate_chain(cfg)
    paths = result.write(args.output)
    print(f"transactions\t{len(result.lines)}")
    print(f"labelled\t{len(result.labels)}")
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    d = Path(args.dir or cfg.out)
    with open(d / "report.csv", encoding="utf-8") as fh:
        rows = read_report_csv(fh)
    confusion = None
    if (d / "confusion.csv").exists():
        with open(d / "confusion.csv", encoding="utf-8") as fh:
            body = list(csv.reader(fh))[1:]
        confusion = [[int(v) for v in r[1:]] for r in body]
    print(format_report(rows, confusion))
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    if args.save_config:
        with _open_out(args.save_config) as fh:
            write_config(cfg, fh)
    res = run_pipeline(cfg)
    print((res.out / "report.txt").read_text(encoding="utf-8"))
    print(f"seeds\t{res.n_seeds}\tused\t{res.n_used}\tskipped\t{len(res.skipped)}\ttiny\t{len(res.tiny)}")
    print(f"held-out balanced accuracy\t{res.report.balanced_accuracy:.4f}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "subgraph": cmd_subgraph,
    "cluster": cmd_cluster,
    "actor-graph": cmd_actor_graph,
    "features": cmd_features,
    "summarize": cmd_summarize,
    "train": cmd_train,
    "predict": cmd_predict,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        return COMMANDS[args.command](args, _config(args))
    except (ConfigError, SynthConfigError, UsageError) as exc:
        print(f"btcactors: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SubgraphTooLarge as exc:
        print(f"btcactors: skipped: size limit ({exc})", file=sys.stderr)
        return EXIT_DATA
    except UnknownAddressError as exc:
        print(f"btcactors: unknown address {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ChainError, StageError, TrainingError, BundleError, OSError, ValueError) as exc:
        print(f"btcactors: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort guard for the exit-code contract
        log.exception("internal error")
        print(f"btcactors: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
