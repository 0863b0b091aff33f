import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btcactors.chainstore import (
    BURN,
    ChainError,
    ChainIndex,
    OutputKind,
    ServiceTag,
    UnknownAddressError,
    first_transaction_of,
    is_reserved,
    load_service_tags,
    parse_chain,
    parse_record,
    write_chain,
    write_service_tags,
)

from conftest import chain, lines, rec


def test_parse_minimal_transaction():
    tx = parse_record(rec("ab", 5, [("a", 1000)], [("b", 600), ("c", 300)]))
    assert tx.fee == 100
    assert tx.input_total == 1000 and tx.output_total == 900
    assert tx.key == (5, 0)
    assert tx.addresses() == {"a", "b", "c"}


def test_coinbase_has_zero_fee():
    tx = parse_record(rec("01", 0, [], [("m", 5000)], coinbase=True))
    assert tx.is_coinbase and tx.fee == 0


def test_opreturn_and_nonstandard_are_rewritten():
    tx = parse_record(
        rec("ff", 1, [("a", 10)], [("x", 0, "opreturn"), (None, 5, "nonstandard"), (None, 1)])
    )
    assert [o.address for o in tx.outputs] == [BURN, "dummy:ff:1", "dummy:ff:2"]
    assert tx.outputs[0].kind is OutputKind.OPRETURN
    assert all(is_reserved(o.address) for o in tx.outputs)


def test_two_burns_share_one_sink_but_dummies_are_distinct():
    idx = chain(
        rec("01", 0, [], [("a", 100), ("b", 100)], coinbase=True),
        rec("02", 1, [("a", 100)], [(None, 10, "opreturn"), (None, 10, "nonstandard")]),
        rec("03", 2, [("b", 100)], [(None, 10, "opreturn"), (None, 10, "nonstandard")]),
    )
    assert idx.output_positions(BURN) == [1, 2]
    assert idx.has_address("dummy:02:1") and idx.has_address("dummy:03:1")


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda r: r.update(extra=1), "unknown fields"),
        (lambda r: r.pop("height"), "missing fields"),
        (lambda r: r.update(txid="zz"), "not hex"),
        (lambda r: r.update(height=-1), "non-negative"),
        (lambda r: r.update(coinbase="no"), "boolean"),
        (lambda r: r["inputs"][0].update(value_sat=1.5), "integer"),
        (lambda r: r["inputs"][0].update(value_sat=-5), "negative"),
        (lambda r: r["inputs"][0].update(value_sat=2**63), "int64"),
        (lambda r: r["outputs"][0].update(value_sat=10**6), "exceed inputs"),
        (lambda r: r["outputs"][0].update(kind="weird"), "unknown output kind"),
        (lambda r: r["outputs"][0].update(address="burn"), "reserved"),
        (lambda r: r["outputs"][0].update(address="dummy:zz:0"), "reserved prefix"),
        (lambda r: r["inputs"][0].update(address="burn"), "unspendable"),
        (lambda r: r["inputs"][0].update(note="x"), "unknown fields"),
        (lambda r: r.update(inputs=[]), "without inputs"),
        (lambda r: r.update(coinbase=True), "coinbase transaction with inputs"),
    ],
)
def test_rejects_malformed_records(mutate, message):
    r = rec("ab", 3, [("a", 1000)], [("b", 900)])
    mutate(r)
    with pytest.raises(ChainError, match=message):
        parse_record(r, 7)


def test_error_carries_line_number():
    good = rec("01", 0, [], [("a", 5)], coinbase=True)
    bad = rec("02", 1, [("a", 5)], [("b", 6)])
    with pytest.raises(ChainError, match="line 2"):
        parse_chain(lines(good, bad))


def test_invalid_json_reports_line():
    with pytest.raises(ChainError, match="line 1: invalid JSON"):
        parse_chain(["{not json\n"])


def test_duplicate_txid_and_slot_rejected():
    a = rec("01", 0, [], [("a", 5)], coinbase=True)
    with pytest.raises(ChainError, match="duplicate txid"):
        parse_chain(lines(a, a))
    b = rec("02", 0, [], [("b", 5)], coinbase=True)
    with pytest.raises(ChainError, match="block position"):
        parse_chain(lines(a, b))


def test_equilibrium_is_exact():
    # one satoshi over is rejected, exactly equal is fine
    parse_record(rec("01", 0, [("a", 10**15)], [("b", 10**15)]))
    with pytest.raises(ChainError):
        parse_record(rec("01", 0, [("a", 10**15)], [("b", 10**15 + 1)]))


def test_index_orders_by_block_position():
    idx = chain(
        rec("03", 2, [("b", 50)], [("c", 40)]),
        rec("01", 0, [], [("a", 100)], coinbase=True),
        rec("02", 1, [("a", 100)], [("b", 50), ("a", 40)]),
    )
    assert [t.txid for t in idx] == ["01", "02", "03"]
    assert idx.position("03") == 2
    assert [t.txid for t in idx.at_height(1)] == ["02"]
    assert first_transaction_of(idx, "b").txid == "02"
    with pytest.raises(UnknownAddressError):
        idx.first_position("zzz")
    with pytest.raises(ChainError):
        idx.tx("99")


def test_spender_and_funders_follow_address_reuse():
    idx = chain(
        rec("01", 0, [], [("a", 100)], coinbase=True),
        rec("02", 1, [], [("a", 50)], coinbase=True),
        rec("03", 2, [("a", 150)], [("b", 140)]),
        rec("04", 3, [("b", 140)], [("a", 130)]),
        rec("05", 4, [("a", 130)], [("c", 120)]),
    )
    assert idx.spender_of("a", 0) == 2
    assert idx.spender_of("a", 1) == 2
    assert idx.spender_of("a", 3) == 4
    assert idx.spender_of("c", 4) is None
    assert idx.funders_of("a", 2) == [0, 1]
    assert idx.funders_of("a", 4) == [3]


def test_write_chain_round_trip():
    idx = chain(
        rec("01", 0, [], [("a", 100)], coinbase=True),
        rec("02", 1, [("a", 100)], [("b", 50), (None, 0, "opreturn"), (None, 3, "nonstandard")]),
    )
    buf = io.StringIO()
    write_chain(idx, buf)
    again = parse_chain(io.StringIO(buf.getvalue()))
    assert again == idx


def test_service_tags_round_trip_and_validation():
    reg = load_service_tags(["x1,exchange\n", "\n", "g1,gambling\n"])
    assert reg.tag_of("x1") is ServiceTag.EXCHANGE and reg.is_service("g1")
    buf = io.StringIO()
    write_service_tags(reg, buf)
    assert load_service_tags(buf.getvalue().splitlines()) == reg
    for bad in (["x1,bank"], ["x1,exchange", "x1,gambling"], ["burn,exchange"], ["x1"]):
        with pytest.raises(ChainError):
            load_service_tags(bad)


amounts = st.integers(min_value=0, max_value=2**40)


@settings(max_examples=200, deadline=None)
@given(
    ins=st.lists(amounts, min_size=1, max_size=6),
    outs=st.lists(amounts, min_size=0, max_size=6),
)
def test_equilibrium_property(ins, outs):
    r = rec("ab", 1, [(f"i{k}", v) for k, v in enumerate(ins)], [(f"o{k}", v) for k, v in enumerate(outs)])
    if sum(outs) <= sum(ins):
        tx = parse_record(r)
        assert tx.fee == sum(ins) - sum(outs) >= 0
    else:
        with pytest.raises(ChainError):
            parse_record(r)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=4), st.integers(), max_size=2))
def test_unknown_top_level_fields_always_rejected(extra):
    r = rec("ab", 1, [("a", 10)], [("b", 5)])
    extra = {k: v for k, v in extra.items() if k not in r}
    r.update(extra)
    if extra:
        with pytest.raises(ChainError):
            parse_record(r)
    else:
        parse_record(r)


def test_parse_chain_is_whitespace_tolerant():
    text = json.dumps(rec("01", 0, [], [("a", 5)], coinbase=True)) + "\n\n   \n"
    assert len(parse_chain(io.StringIO(text))) == 1


def test_index_rejects_duplicates_directly():
    tx = parse_record(rec("01", 0, [], [("a", 5)], coinbase=True))
    with pytest.raises(ChainError):
        ChainIndex([tx, tx])
