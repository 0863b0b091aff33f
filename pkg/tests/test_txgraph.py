import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btcactors.chainstore import ServiceTag, ServiceTagRegistry, UnknownAddressError
from btcactors.txgraph import (
    SubgraphLimits,
    SubgraphTooLarge,
    TxEdge,
    build_tx_subgraph,
    coinjoin_shape,
    is_coinjoin,
    read_subgraph,
    write_subgraph,
)

from conftest import chain, rec
from oracles import coinjoin_oracle, naive_links, naive_subgraph


def test_coinjoin_examples():
    assert coinjoin_shape(3, [5, 5, 5])
    assert not coinjoin_shape(3, [5, 5, 6])
    assert coinjoin_shape(3, [7, 7, 7, 7, 7, 1])
    assert not coinjoin_shape(3, [7, 7, 7, 7, 1, 2])
    assert not coinjoin_shape(1, [5, 5, 5])
    assert not coinjoin_shape(2, [5, 5])
    assert not coinjoin_shape(2, [5] * 5)  # more than twice the inputs
    assert coinjoin_shape(2, [5] * 4)


def test_is_coinjoin_counts_slots_not_distinct_addresses():
    tx = chain(rec("01", 0, [], [("a", 300)], coinbase=True), rec("02", 1, [("a", 150), ("a", 150)], [("x", 100)] * 3)).tx("02")
    assert is_coinjoin(tx)


@settings(max_examples=300, deadline=None)
@given(n_in=st.integers(0, 12), amounts=st.lists(st.integers(1, 4), max_size=14))
def test_coinjoin_matches_oracle(n_in, amounts):
    assert coinjoin_shape(n_in, amounts) == coinjoin_oracle(n_in, amounts)


def toy_chain():
    #  01 coinbase -> a
    #  02 a -> b, c        (h 10)
    #  03 b -> d           (h 20)
    #  04 c -> x (exchange)(h 30)
    #  05 x -> e           (h 40)  reached only through the tagged output
    #  06 d -> f           (h 500) outside any small window
    return chain(
        rec("01", 0, [], [("a", 1000)], coinbase=True),
        rec("02", 10, [("a", 1000)], [("b", 500), ("c", 400)]),
        rec("03", 20, [("b", 500)], [("d", 450)]),
        rec("04", 30, [("c", 400)], [("x", 350)]),
        rec("05", 40, [("x", 350)], [("e", 300)]),
        rec("06", 500, [("d", 450)], [("f", 400)]),
    )


def test_subgraph_window_and_tag_stop():
    idx = toy_chain()
    tags = ServiceTagRegistry({"x": ServiceTag.EXCHANGE})
    sub = build_tx_subgraph(idx, "b", 100, tags)
    assert sub.seed_tx == "02"
    assert sub.nodes == {"01", "02", "03", "04"}
    assert TxEdge("02", "03", "b", 500) in sub.edges
    assert all(e.dst != "05" for e in sub.edges)
    no_tags = build_tx_subgraph(idx, "b", 100)
    assert "05" in no_tags.nodes and "06" not in no_tags.nodes
    narrow = build_tx_subgraph(idx, "b", 10)
    assert narrow.nodes == {"01", "02", "03"}


def test_backward_steps_pass_tagged_addresses():
    idx = toy_chain()
    tags = ServiceTagRegistry({"x": ServiceTag.EXCHANGE})
    sub = build_tx_subgraph(idx, "e", 100, tags)
    # 05 spends x; walking backwards into the exchange is allowed
    assert {"04", "05"} <= sub.nodes


def test_subgraph_errors():
    idx = toy_chain()
    with pytest.raises(UnknownAddressError):
        build_tx_subgraph(idx, "nope", 10)
    with pytest.raises(ValueError):
        build_tx_subgraph(idx, "a", 0)
    with pytest.raises(SubgraphTooLarge):
        build_tx_subgraph(idx, "b", 100, limits=SubgraphLimits(max_transactions=2))
    with pytest.raises(SubgraphTooLarge):
        build_tx_subgraph(idx, "b", 100, limits=SubgraphLimits(max_addresses=3))
    with pytest.raises(ValueError):
        SubgraphLimits(0, 1)


def test_subgraph_round_trip():
    idx = toy_chain()
    sub = build_tx_subgraph(idx, "f", 1)
    buf = io.StringIO()
    write_subgraph(sub, buf)
    assert read_subgraph(io.StringIO(buf.getvalue())) == sub
    sub = build_tx_subgraph(idx, "b", 100)
    buf = io.StringIO()
    write_subgraph(sub, buf)
    assert read_subgraph(io.StringIO(buf.getvalue())) == sub


def test_subgraph_matches_fixed_point_oracle(small_synth, small_index):
    # restrict to a slice of the chain to keep the quadratic oracle cheap
    from btcactors.chainstore import ChainIndex

    idx = ChainIndex(t for t in small_index if t.height < 900)
    links = naive_links(idx)
    rng = random.Random(5)
    seeds = rng.sample(sorted(idx.addresses()), 40)
    for seed in seeds:
        for n in (5, 40):
            sub = build_tx_subgraph(idx, seed, n, small_synth.tags)
            nodes, edges = naive_subgraph(idx, links, seed, n, small_synth.tags)
            assert sub.nodes == nodes, seed
            assert {(e.src, e.dst, e.address) for e in sub.edges} == edges, seed


def test_edge_amount_is_amount_received(small_index):
    for seed in sorted(small_index.addresses())[:50]:
        sub = build_tx_subgraph(small_index, seed, 30)
        for e in sub.edges:
            src = small_index.tx(e.src)
            assert e.amount == sum(o.amount for o in src.outputs if o.address == e.address)
            assert any(i.address == e.address for i in small_index.tx(e.dst).inputs)
