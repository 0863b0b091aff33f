"""Local address clustering within one transaction subgraph.

Inputs of a transaction share an owner; a single never-before-seen output is
the owner's change and joins them; CoinJoin transactions link nothing. Only
addresses touched by the subgraph's transactions are clustered, so no
chain-wide super-cluster can form.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from typing import IO

import numpy as np

from . import kernels
from .chainstore import ChainError, ChainIndex, Transaction, is_reserved
from .txgraph import TxSubgraph, is_coinjoin


class ClusterMap(Mapping[str, int]):
    """Address -> dense actor id.

    Ids are assigned in order of each actor's representative, its
    lexicographically smallest address, so reruns are stable.
    """

    def __init__(self, assignment: Mapping[str, int]):
        self._actor = dict(assignment)
        members: dict[int, list[str]] = {}
        for addr, aid in self._actor.items():
            members.setdefault(aid, []).append(addr)
        self._members = {aid: sorted(m) for aid, m in members.items()}

    def __getitem__(self, address: str) -> int:
        return self._actor[address]

    def __iter__(self) -> Iterator[str]:
        return iter(self._actor)

    def __len__(self) -> int:
        return len(self._actor)

    @property
    def n_actors(self) -> int:
        return len(self._members)

    def members(self, actor: int) -> list[str]:
        return self._members[actor]

    def representative(self, actor: int) -> str:
        return self._members[actor][0]

    def partition(self) -> set[frozenset[str]]:
        return {frozenset(m) for m in self._members.values()}


def actor_of(cm: ClusterMap, address: str) -> int:
    try:
        return cm[address]
    except KeyError:
        raise KeyError(f"address {address!r} not in cluster map") from None


def fresh_outputs(tx: Transaction, index: ChainIndex) -> list[str]:
    """Distinct non-reserved output addresses with no earlier occurrence.

    An address that is also one of the transaction's inputs is not fresh.
    """
    pos = index.position(tx.txid)
    spent = {i.address for i in tx.inputs}
    out = []
    for addr in dict.fromkeys(o.address for o in tx.outputs):
        if is_reserved(addr) or addr in spent:
            continue
        if index.first_position(addr) == pos:
            out.append(addr)
    return out


def merge_groups(
    tx: Transaction, index: ChainIndex, merge_all_outputs: bool = False
) -> list[str]:
    """Addresses the rules place in one cluster for a single transaction.

    With ``merge_all_outputs`` the literal pseudocode reading applies: when
    exactly one output is fresh, every input and output joins the cluster.
    """
    if tx.is_coinbase or is_coinjoin(tx):
        return []
    group = [a for a in dict.fromkeys(i.address for i in tx.inputs) if not is_reserved(a)]
    fresh = fresh_outputs(tx, index)
    if len(fresh) == 1:
        if merge_all_outputs:
            group += [o.address for o in tx.outputs if not is_reserved(o.address)]
        else:
            group += fresh
    return list(dict.fromkeys(group))


def _assign(addresses: Iterable[str], roots_of) -> dict[str, int]:
    addrs = sorted(set(addresses))
    roots = roots_of(addrs)
    rep: dict[int, str] = {}
    for addr, r in zip(addrs, roots):
        if r not in rep:
            rep[r] = addr  # addrs sorted: first seen is smallest
    order = {r: i for i, r in enumerate(sorted(rep, key=rep.__getitem__))}
    return {addr: order[r] for addr, r in zip(addrs, roots)}


def local_cluster(
    sub: TxSubgraph, index: ChainIndex, merge_all_outputs: bool = False
) -> ClusterMap:
    try:
        txs = sorted((index.tx(t) for t in sub.nodes), key=lambda t: t.key)
    except ChainError as exc:
        raise ChainError(f"dangling txid in subgraph: {exc}") from None
    addresses: set[str] = set()
    groups = []
    for tx in txs:
        addresses.update(tx.addresses())
        g = merge_groups(tx, index, merge_all_outputs)
        if len(g) > 1:
            groups.append(g)

    def roots_of(addrs: list[str]) -> list[int]:
        ids = {a: i for i, a in enumerate(addrs)}
        left = [ids[g[0]] for g in groups for _ in g[1:]]
        right = [ids[a] for g in groups for a in g[1:]]
        return kernels.union_find_labels(
            len(addrs), np.array(left, dtype=np.int64), np.array(right, dtype=np.int64)
        ).tolist()

    return ClusterMap(_assign(addresses, roots_of))


def write_cluster_map(cm: ClusterMap, fh: IO[str]) -> None:
    fh.write("address,actor_id\n")
    for addr in sorted(cm, key=lambda a: (cm[a], a)):
        fh.write(f"{addr},{cm[addr]}\n")


def read_cluster_map(fh: Iterable[str]) -> ClusterMap:
    lines = iter(fh)
    header = next(lines, "").strip()
    if header != "address,actor_id":
        raise ValueError(f"unexpected cluster map header {header!r}")
    assignment = {}
    for line in lines:
        line = line.strip()
        if line:
            addr, aid = line.rsplit(",", 1)
            assignment[addr] = int(aid)
    return ClusterMap(assignment)
