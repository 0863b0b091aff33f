from __future__ import annotations

import json
import os
from pathlib import Path

import pytest

from btcactors.chainstore import ChainIndex, parse_record
from btcactors.synth import SynthConfig, generate_chain


def rec(txid, height, inputs, outputs, idx=0, coinbase=False):
    """Chain record from compact tuples: inputs (addr, sat), outputs (addr, sat[, kind])."""
    outs = []
    for o in outputs:
        addr, amount, kind = (o + ("standard",))[:3]
        outs.append({"address": addr, "value_sat": amount, "kind": kind})
    return {
        "txid": txid,
        "height": height,
        "index_in_block": idx,
        "coinbase": coinbase,
        "inputs": [{"address": a, "value_sat": v} for a, v in inputs],
        "outputs": outs,
    }


def chain(*records) -> ChainIndex:
    return ChainIndex(parse_record(r, i) for i, r in enumerate(records, start=1))


def lines(*records) -> list[str]:
    return [json.dumps(r) + "\n" for r in records]


SMALL_SYNTH = SynthConfig(
    seed=3,
    actors_per_class=12,
    blocks=3000,
    background_episodes=300,
    merchants=30,
)


@pytest.fixture(scope="session")
def small_synth():
    return generate_chain(SMALL_SYNTH)


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory, small_synth):
    d = tmp_path_factory.mktemp("synth")
    small_synth.write(d)
    return d


@pytest.fixture(scope="session")
def small_index(small_synth):
    from btcactors.chainstore import parse_chain

    return parse_chain(small_synth.lines)


@pytest.fixture(scope="session")
def default_synth():
    return generate_chain(SynthConfig())


@pytest.fixture(scope="session")
def default_index(default_synth):
    from btcactors.chainstore import parse_chain

    return parse_chain(default_synth.lines)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory, small_synth_dir):
    """One full pipeline run over the small synthetic chain."""
    from btcactors.pipeline import PipelineConfig, run_pipeline

    out = tmp_path_factory.mktemp("run")
    cfg = PipelineConfig(
        chain=str(small_synth_dir / "chain.jsonl"),
        tags=str(small_synth_dir / "tags.csv"),
        seeds=str(small_synth_dir / "labels.csv"),
        out=str(out),
        folds=3,
    )
    return cfg, run_pipeline(cfg)


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("BTCACTORS_CONFIG", raising=False)
    return Path(tmp_path)


def pytest_report_header(config):
    from btcactors import kernels

    return f"btcactors kernel backend: {kernels.BACKEND} (available: {', '.join(kernels.BACKENDS)}); " \
        f"BTCACTORS_PURE_PYTHON={os.environ.get('BTCACTORS_PURE_PYTHON', '')!r}"


def random_chain(rng, n_tx=60, n_addr=40, mix_prob=0.15):
    """A valid random chain with heavy address reuse and some mixing shapes.

    ``rng`` is a ``random.Random``. Addresses are drawn from a small pool so
    spends, reuse and change patterns collide often.
    """
    balance = {}
    records = []
    pool = [f"a{i:03d}" for i in range(n_addr)]
    height = 0
    for k in range(n_tx):
        height += rng.choice((0, 1, 1, 2))
        funded = [a for a in pool if balance.get(a, 0) > 0]
        txid = f"{k + 1:06x}"
        if not funded or rng.random() < 0.1:
            a = rng.choice(pool)
            amount = rng.randint(1_000, 100_000)
            records.append(rec(txid, height, [], [(a, amount)], idx=k, coinbase=True))
            balance[a] = balance.get(a, 0) + amount
            continue
        ins = rng.sample(funded, min(len(funded), rng.randint(1, 3)))
        total = sum(balance[a] for a in ins)
        for a in ins:
            balance[a] = 0
        n_out = rng.randint(1, 6)
        if rng.random() < mix_prob and len(ins) >= 2:
            n_out = min(2 * len(ins), max(3, n_out))
            amounts = [total // (n_out + 1)] * n_out
        else:
            cuts = sorted(rng.randint(0, total) for _ in range(n_out))
            amounts = [b - a for a, b in zip([0] + cuts, cuts + [total])][:n_out]
        outs = []
        for amt in amounts:
            r = rng.random()
            if r < 0.05:
                outs.append((None, 0, "opreturn"))
            elif r < 0.08:
                outs.append((None, amt, "nonstandard"))
            else:
                a = rng.choice(pool)
                outs.append((a, amt))
                balance[a] = balance.get(a, 0) + amt
        records.append(rec(txid, height, [(a, 0) for a in ins], outs, idx=k))
        # inputs carry the full balance they spend
        records[-1]["inputs"] = [{"address": a, "value_sat": v} for a, v in zip(ins, _split(total, len(ins)))]
    return chain(*records)


def _split(total, k):
    base = total // k
    return [base + (total - base * k if i == 0 else 0) for i in range(k)]


# one "PASS|FAIL <criterion>: <detail>" line per acceptance criterion
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
