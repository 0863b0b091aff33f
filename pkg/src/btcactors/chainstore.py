"""Line-delimited chain format: parsing, validation and indexing.

Every line of a chain file is one JSON object::

    {"txid": "ab01", "height": 10, "index_in_block": 0, "coinbase": false,
     "inputs": [{"address": "a1", "value_sat": 5000}],
     "outputs": [{"address": "b1", "value_sat": 4000, "kind": "standard"}]}

OpReturn outputs are rewritten to the global ``"burn"`` sink and unparseable
outputs (kind ``nonstandard`` or a null address) to ``"dummy:<txid>:<pos>"``.
"""

from __future__ import annotations

import bisect
import enum
import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import IO

BURN = "burn"
DUMMY_PREFIX = "dummy:"

SAT_PER_BTC = 100_000_000

_TX_FIELDS = frozenset({"txid", "height", "index_in_block", "coinbase", "inputs", "outputs"})
_INPUT_FIELDS = frozenset({"address", "value_sat"})
_OUTPUT_FIELDS = frozenset({"address", "value_sat", "kind"})


class ChainError(ValueError):
    """Raised for malformed or inconsistent chain data."""


class UnknownAddressError(KeyError):
    pass


class OutputKind(str, enum.Enum):
    STANDARD = "standard"
    OPRETURN = "opreturn"
    NONSTANDARD = "nonstandard"


class ServiceTag(str, enum.Enum):
    EXCHANGE = "exchange"
    GAMBLING = "gambling"


def is_reserved(address: str) -> bool:
    """True for the burn sink and dummy placeholders, which never cluster."""
    return address == BURN or address.startswith(DUMMY_PREFIX)


def dummy_address(txid: str, position: int) -> str:
    return f"{DUMMY_PREFIX}{txid}:{position}"


@dataclass(frozen=True, slots=True)
class TxInput:
    address: str
    amount: int


@dataclass(frozen=True, slots=True)
class TxOutput:
    address: str
    amount: int
    kind: OutputKind = OutputKind.STANDARD


@dataclass(frozen=True, slots=True)
class Transaction:
    txid: str
    height: int
    index_in_block: int
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    is_coinbase: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.height, self.index_in_block)

    @property
    def input_total(self) -> int:
        return sum(i.amount for i in self.inputs)

    @property
    def output_total(self) -> int:
        return sum(o.amount for o in self.outputs)

    @property
    def fee(self) -> int:
        """Miner fee in satoshis; zero for coinbase transactions."""
        if self.is_coinbase:
            return 0
        return self.input_total - self.output_total

    def addresses(self) -> set[str]:
        return {i.address for i in self.inputs} | {o.address for o in self.outputs}

    def to_record(self) -> dict:
        return {
            "txid": self.txid,
            "height": self.height,
            "index_in_block": self.index_in_block,
            "coinbase": self.is_coinbase,
            "inputs": [{"address": i.address, "value_sat": i.amount} for i in self.inputs],
            "outputs": [
                {"address": o.address, "value_sat": o.amount, "kind": o.kind.value}
                for o in self.outputs
            ],
        }


@dataclass(slots=True)
class _Occurrences:
    # positions into ChainIndex.transactions, strictly increasing
    as_input: list[int] = field(default_factory=list)
    as_output: list[int] = field(default_factory=list)


class ChainIndex:
    """Immutable, fully indexed set of transactions.

    Transactions are stored sorted by ``(height, index_in_block)``; a
    transaction's *position* is its rank in that order and is what the
    per-address occurrence lists hold.
    """

    def __init__(self, transactions: Iterable[Transaction]):
        txs = sorted(transactions, key=lambda t: t.key)
        self.transactions: tuple[Transaction, ...] = tuple(txs)
        self._pos: dict[str, int] = {}
        self._occ: dict[str, _Occurrences] = {}
        self._by_height: dict[int, list[int]] = {}
        prev_key = None
        for pos, tx in enumerate(txs):
            if tx.txid in self._pos:
                raise ChainError(f"duplicate txid {tx.txid}")
            if tx.key == prev_key:
                raise ChainError(f"two transactions at block position {tx.key}")
            prev_key = tx.key
            self._pos[tx.txid] = pos
            self._by_height.setdefault(tx.height, []).append(pos)
            for addr in dict.fromkeys(i.address for i in tx.inputs):
                self._occ.setdefault(addr, _Occurrences()).as_input.append(pos)
            for addr in dict.fromkeys(o.address for o in tx.outputs):
                self._occ.setdefault(addr, _Occurrences()).as_output.append(pos)

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self.transactions)

    def __contains__(self, txid: object) -> bool:
        return txid in self._pos

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChainIndex):
            return NotImplemented
        return self.transactions == other.transactions

    def tx(self, txid: str) -> Transaction:
        try:
            return self.transactions[self._pos[txid]]
        except KeyError:
            raise ChainError(f"unknown txid {txid}") from None

    def position(self, txid: str) -> int:
        try:
            return self._pos[txid]
        except KeyError:
            raise ChainError(f"unknown txid {txid}") from None

    def at_height(self, height: int) -> list[Transaction]:
        return [self.transactions[p] for p in self._by_height.get(height, ())]

    def addresses(self) -> Iterator[str]:
        return iter(self._occ)

    def has_address(self, address: str) -> bool:
        return address in self._occ

    def _occurrences(self, address: str) -> _Occurrences:
        try:
            return self._occ[address]
        except KeyError:
            raise UnknownAddressError(address) from None

    def input_positions(self, address: str) -> list[int]:
        return self._occurrences(address).as_input

    def output_positions(self, address: str) -> list[int]:
        return self._occurrences(address).as_output

    def first_position(self, address: str) -> int:
        occ = self._occurrences(address)
        firsts = [lst[0] for lst in (occ.as_input, occ.as_output) if lst]
        return min(firsts)

    def spender_of(self, address: str, pos: int) -> int | None:
        """Position of the first transaction after ``pos`` spending ``address``.

        An output received at ``pos`` is consumed by the next transaction in
        which the address appears as an input.
        """
        spends = self._occurrences(address).as_input
        i = bisect.bisect_right(spends, pos)
        return spends[i] if i < len(spends) else None

    def funders_of(self, address: str, pos: int) -> list[int]:
        """Positions whose outputs to ``address`` are spent at ``pos``.

        These are the receipts strictly after the address's previous spend
        and strictly before ``pos``.
        """
        occ = self._occurrences(address)
        j = bisect.bisect_left(occ.as_input, pos)
        lo = occ.as_input[j - 1] if j > 0 else -1
        outs = occ.as_output
        return outs[bisect.bisect_right(outs, lo) : bisect.bisect_left(outs, pos)]


def first_transaction_of(index: ChainIndex, address: str) -> Transaction:
    """The earliest transaction, by (height, index_in_block), touching ``address``."""
    return index.transactions[index.first_position(address)]


def _fail(lineno: int, msg: str) -> ChainError:
    return ChainError(f"line {lineno}: {msg}")


def _amount(value: object, lineno: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _fail(lineno, f"amount must be an integer, got {value!r}")
    if value < 0:
        raise _fail(lineno, f"negative amount {value}")
    if value >= 2**63:
        raise _fail(lineno, f"amount {value} overflows int64")
    return value


def _check_fields(obj: object, expected: frozenset[str], what: str, lineno: int) -> dict:
    if not isinstance(obj, dict):
        raise _fail(lineno, f"{what} must be an object")
    keys = set(obj)
    if keys != expected:
        extra, missing = keys - expected, expected - keys
        parts = []
        if extra:
            parts.append(f"unknown fields {sorted(extra)}")
        if missing:
            parts.append(f"missing fields {sorted(missing)}")
        raise _fail(lineno, f"{what}: " + ", ".join(parts))
    return obj


def parse_record(record: object, lineno: int = 0) -> Transaction:
    rec = _check_fields(record, _TX_FIELDS, "transaction", lineno)
    txid = rec["txid"]
    if not isinstance(txid, str) or not txid:
        raise _fail(lineno, "txid must be a non-empty string")
    try:
        int(txid, 16)
    except ValueError:
        raise _fail(lineno, f"txid {txid!r} is not hex") from None
    height, index_in_block = rec["height"], rec["index_in_block"]
    for name, v in (("height", height), ("index_in_block", index_in_block)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise _fail(lineno, f"{name} must be a non-negative integer")
    coinbase = rec["coinbase"]
    if not isinstance(coinbase, bool):
        raise _fail(lineno, "coinbase must be a boolean")
    if not isinstance(rec["inputs"], list) or not isinstance(rec["outputs"], list):
        raise _fail(lineno, "inputs and outputs must be lists")

    inputs = []
    for raw in rec["inputs"]:
        raw = _check_fields(raw, _INPUT_FIELDS, "input", lineno)
        addr = raw["address"]
        if not isinstance(addr, str) or not addr:
            raise _fail(lineno, "input address must be a non-empty string")
        if addr == BURN:
            raise _fail(lineno, "burn outputs are unspendable")
        inputs.append(TxInput(addr, _amount(raw["value_sat"], lineno)))

    outputs = []
    for pos, raw in enumerate(rec["outputs"]):
        raw = _check_fields(raw, _OUTPUT_FIELDS, "output", lineno)
        try:
            kind = OutputKind(raw["kind"])
        except ValueError:
            raise _fail(lineno, f"unknown output kind {raw['kind']!r}") from None
        addr = raw["address"]
        if addr is not None and (not isinstance(addr, str) or not addr):
            raise _fail(lineno, "output address must be a non-empty string or null")
        if kind is OutputKind.OPRETURN:
            addr = BURN
        elif kind is OutputKind.NONSTANDARD or addr is None:
            addr = dummy_address(txid, pos)
        elif addr == BURN:
            raise _fail(lineno, "'burn' is reserved for opreturn outputs")
        elif addr.startswith(DUMMY_PREFIX) and addr != dummy_address(txid, pos):
            raise _fail(lineno, f"reserved prefix in address {addr!r}")
        outputs.append(TxOutput(addr, _amount(raw["value_sat"], lineno), kind))

    tx = Transaction(txid, height, index_in_block, tuple(inputs), tuple(outputs), coinbase)
    if coinbase and inputs:
        raise _fail(lineno, "coinbase transaction with inputs")
    if not coinbase:
        if not inputs:
            raise _fail(lineno, "non-coinbase transaction without inputs")
        if tx.output_total > tx.input_total:
            raise _fail(
                lineno,
                f"outputs ({tx.output_total}) exceed inputs ({tx.input_total}) in {txid}",
            )
    return tx


def iter_records(stream: Iterable[str]) -> Iterator[Transaction]:
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _fail(lineno, f"invalid JSON ({exc.msg})") from None
        yield parse_record(record, lineno)


def parse_chain(stream: Iterable[str]) -> ChainIndex:
    """Parse and index a line-delimited chain stream."""
    txs = []
    seen: dict[str, int] = {}
    for lineno, tx in enumerate(iter_records(stream), start=1):
        if tx.txid in seen:
            raise ChainError(f"duplicate txid {tx.txid}")
        seen[tx.txid] = lineno
        txs.append(tx)
    return ChainIndex(txs)


def load_chain(path) -> ChainIndex:
    with open(path, encoding="utf-8") as fh:
        return parse_chain(fh)


def dump_transaction(tx: Transaction) -> str:
    return json.dumps(tx.to_record(), separators=(",", ":"))


def write_chain(txs: Iterable[Transaction], fh: IO[str]) -> None:
    for tx in txs:
        fh.write(dump_transaction(tx))
        fh.write("\n")


class ServiceTagRegistry(dict):
    """Address -> :class:`ServiceTag` for exchange and gambling services."""

    def tag_of(self, address: str) -> ServiceTag | None:
        return self.get(address)

    def is_service(self, address: str) -> bool:
        return address in self


def load_service_tags(stream: Iterable[str]) -> ServiceTagRegistry:
    reg = ServiceTagRegistry()
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not parts[0]:
            raise _fail(lineno, f"expected '<address>,<tag>', got {line!r}")
        addr, tag = parts
        try:
            tag = ServiceTag(tag)
        except ValueError:
            raise _fail(lineno, f"unknown tag {tag!r}") from None
        if is_reserved(addr):
            raise _fail(lineno, f"reserved address {addr!r} cannot carry a tag")
        if addr in reg:
            raise _fail(lineno, f"duplicate address {addr!r}")
        reg[addr] = tag
    return reg


def write_service_tags(reg: ServiceTagRegistry, fh: IO[str]) -> None:
    for addr, tag in reg.items():
        fh.write(f"{addr},{ServiceTag(tag).value}\n")
