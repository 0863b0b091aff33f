"""Temporally bounded transaction subgraphs around a seed address."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import IO, Iterable

from .chainstore import (
    ChainError,
    ChainIndex,
    ServiceTagRegistry,
    Transaction,
    UnknownAddressError,
)


class SubgraphTooLarge(Exception):
    """The closure outgrew :class:`SubgraphLimits`; the seed is skipped."""


@dataclass(frozen=True)
class SubgraphLimits:
    max_addresses: int = 1_000_000
    max_transactions: int = 500_000

    def __post_init__(self):
        if self.max_addresses <= 0 or self.max_transactions <= 0:
            raise ValueError("subgraph limits must be positive")


@dataclass(frozen=True, order=True)
class TxEdge:
    """An output of ``src`` spent as an input of ``dst`` through ``address``."""

    src: str
    dst: str
    address: str
    amount: int


@dataclass(frozen=True)
class TxSubgraph:
    seed: str
    seed_tx: str
    window_n: int
    nodes: frozenset[str]
    edges: frozenset[TxEdge]

    def sorted_edges(self) -> list[TxEdge]:
        return sorted(self.edges)


def coinjoin_shape(n_inputs: int, amounts: list[int]) -> bool:
    """CoinJoin rule table on slot counts and output amounts."""
    n_out = len(amounts)
    if n_inputs < 2 or n_out < 3:
        return False
    if 2 * n_inputs < n_out:
        return False
    counts = Counter(amounts)
    if n_out < 6:
        return len(counts) == 1
    return max(counts.values()) >= 5


def is_coinjoin(tx: Transaction) -> bool:
    """Mixing-transaction test; counts are input/output slots."""
    return coinjoin_shape(len(tx.inputs), [o.amount for o in tx.outputs])


def _received(tx: Transaction, address: str) -> int:
    return sum(o.amount for o in tx.outputs if o.address == address)


def links_into(index: ChainIndex, pos: int) -> Iterable[tuple[int, str]]:
    """(funding position, address) pairs feeding the transaction at ``pos``."""
    tx = index.transactions[pos]
    for addr in dict.fromkeys(i.address for i in tx.inputs):
        for p in index.funders_of(addr, pos):
            yield p, addr


def links_out_of(index: ChainIndex, pos: int) -> Iterable[tuple[int, str]]:
    """(spending position, address) pairs consuming outputs of ``pos``."""
    tx = index.transactions[pos]
    for addr in dict.fromkeys(o.address for o in tx.outputs):
        p = index.spender_of(addr, pos)
        if p is not None:
            yield p, addr


def build_tx_subgraph(
    index: ChainIndex,
    seed: str,
    n: int,
    tags: ServiceTagRegistry | None = None,
    limits: SubgraphLimits = SubgraphLimits(),
) -> TxSubgraph:
    """Breadth-first bidirectional closure from the seed's first transaction.

    Only transactions within ``n`` blocks of the seed transaction are
    admitted. Forward steps never pass through exchange or gambling outputs;
    coinbase transactions have nothing behind them.
    """
    if n < 1:
        raise ValueError("window n must be >= 1")
    tags = tags or ServiceTagRegistry()
    if not index.has_address(seed):
        raise UnknownAddressError(seed)
    txs = index.transactions
    start = index.first_position(seed)
    seed_height = txs[start].height
    lo, hi = seed_height - n, seed_height + n

    seen = {start}
    addresses = set(txs[start].addresses())
    queue = deque([start])

    def admit(p: int) -> None:
        if p in seen or not lo <= txs[p].height <= hi:
            return
        seen.add(p)
        addresses.update(txs[p].addresses())
        if len(seen) > limits.max_transactions:
            raise SubgraphTooLarge(f"more than {limits.max_transactions} transactions")
        if len(addresses) > limits.max_addresses:
            raise SubgraphTooLarge(f"more than {limits.max_addresses} addresses")
        queue.append(p)

    if len(addresses) > limits.max_addresses:
        raise SubgraphTooLarge(f"more than {limits.max_addresses} addresses")
    while queue:
        p = queue.popleft()
        for q, addr in links_out_of(index, p):
            if addr not in tags:
                admit(q)
        for q, _ in links_into(index, p):
            admit(q)

    edges = set()
    for p in seen:
        for q, addr in links_out_of(index, p):
            if q in seen:
                edges.add(TxEdge(txs[p].txid, txs[q].txid, addr, _received(txs[p], addr)))
    return TxSubgraph(
        seed=seed,
        seed_tx=txs[start].txid,
        window_n=n,
        nodes=frozenset(txs[p].txid for p in seen),
        edges=frozenset(edges),
    )


def write_subgraph(sub: TxSubgraph, fh: IO[str]) -> None:
    fh.write(f"# seed={sub.seed}\tseed_tx={sub.seed_tx}\tn={sub.window_n}\n")
    for e in sub.sorted_edges():
        fh.write(f"{e.src}\t{e.dst}\t{e.address}\t{e.amount}\n")
    isolated = sorted(sub.nodes - {e.src for e in sub.edges} - {e.dst for e in sub.edges})
    for txid in isolated:
        fh.write(f"# node={txid}\n")


def read_subgraph(fh: Iterable[str]) -> TxSubgraph:
    """Inverse of :func:`write_subgraph`."""
    lines = iter(fh)
    header = next(lines, "").rstrip("\n")
    if not header.startswith("# "):
        raise ChainError("subgraph file missing header line")
    meta = dict(part.split("=", 1) for part in header[2:].split("\t"))
    try:
        seed, seed_tx, n = meta["seed"], meta["seed_tx"], int(meta["n"])
    except (KeyError, ValueError):
        raise ChainError(f"bad subgraph header {header!r}") from None
    nodes = {seed_tx}
    edges = set()
    for lineno, line in enumerate(lines, start=2):
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("# node="):
            nodes.add(line[len("# node=") :])
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ChainError(f"line {lineno}: expected 4 tab-separated fields")
        src, dst, addr, amount = parts
        edges.add(TxEdge(src, dst, addr, int(amount)))
        nodes.update((src, dst))
    return TxSubgraph(seed, seed_tx, n, frozenset(nodes), frozenset(edges))
