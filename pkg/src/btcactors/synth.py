"""Seeded synthetic blockchains with planted actor behaviour.

A discrete-event simulation over wallets that spend whole address balances.
An exchange and several gambling services hold tagged addresses; background
users move coins around them. Each labelled actor runs one episode shortly
after its seed address first appears:

* ransom: many victims pay in, the actor consolidates and fans out to fresh
  addresses that are peeled, mixed or cashed out at the exchange;
* gambling: funded from the exchange, repeatedly bets at one gambling
  service and collects payouts to its reused address;
* random: a handful of ordinary payments to merchants and other users.

Ground truth (wallet ownership, class labels) is returned separately so
nothing leaks through the chain file.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .chainstore import SAT_PER_BTC, ServiceTag, ServiceTagRegistry, write_service_tags
from .txgraph import coinjoin_shape

CLASS_NAMES = ("gambling", "random", "ransom")


class SynthConfigError(ValueError):
    pass


@dataclass
class ClassProfile:
    activity: float  # mean number of primary events (victims, bets, payments)
    fan_out: float  # mean extra outputs when the actor disperses funds
    coinjoin_prob: float
    change_prob: float  # change goes to a fresh address (else back to an input)
    service_prob: float  # cash-out / funding through the exchange
    amount_mu: float  # log-normal parameters of amounts, in log(BTC)
    amount_sigma: float


def default_profiles() -> dict[str, ClassProfile]:
    return {
        "ransom": ClassProfile(14.0, 3.0, 0.3, 0.95, 0.6, -1.0, 0.8),
        "gambling": ClassProfile(8.0, 0.0, 0.0, 0.9, 0.5, -2.0, 1.0),
        "random": ClassProfile(2.0, 1.0, 0.05, 0.9, 0.5, -1.5, 1.2),
    }


@dataclass
class SynthConfig:
    seed: int = 7
    actors_per_class: int = 90
    blocks: int = 30_000
    window_n: int = 144
    background_episodes: int = 3000
    merchants: int = 150
    gambling_services: int = 3
    opreturn_prob: float = 0.03
    nonstandard_prob: float = 0.01
    profiles: dict[str, ClassProfile] = field(default_factory=default_profiles)

    def validate(self) -> None:
        if self.actors_per_class <= 0:
            raise SynthConfigError("actors_per_class must be positive")
        if self.window_n < 1 or self.blocks < 2 * self.window_n + 1:
            raise SynthConfigError("blocks must be at least 2 * window_n + 1")
        if self.blocks < 2 * self.window_n + 400:
            raise SynthConfigError("too few blocks to fit actor episodes")
        if self.gambling_services < 1 or self.merchants < 1:
            raise SynthConfigError("need at least one gambling service and merchant")
        if set(self.profiles) != set(CLASS_NAMES):
            raise SynthConfigError(f"profiles must cover {CLASS_NAMES}")
        for name, p in self.profiles.items():
            for attr in ("coinjoin_prob", "change_prob", "service_prob"):
                v = getattr(p, attr)
                if not 0.0 <= v <= 1.0:
                    raise SynthConfigError(f"{name}.{attr}={v} outside [0, 1]")
            if p.activity < 0 or p.fan_out < 0 or p.amount_sigma < 0:
                raise SynthConfigError(f"{name}: negative rate")
        for prob in (self.opreturn_prob, self.nonstandard_prob):
            if not 0.0 <= prob <= 1.0:
                raise SynthConfigError("output-kind probabilities must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        profiles = d.pop("profiles", None)
        cfg = cls(**d)
        if profiles is not None:
            merged = default_profiles()
            for name, p in profiles.items():
                merged[name] = ClassProfile(**{**asdict(merged.get(name, merged["random"])), **p})
            cfg.profiles = merged
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthResult:
    lines: list[str]
    tags: ServiceTagRegistry
    labels: dict[str, str]  # seed address -> class
    wallets: dict[str, int]  # address -> wallet id
    coinjoins: set[str]

    @property
    def chain_text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "chain": outdir / "chain.jsonl",
            "tags": outdir / "tags.csv",
            "labels": outdir / "labels.csv",
            "wallets": outdir / "wallets.csv",
        }
        paths["chain"].write_text(self.chain_text, encoding="utf-8")
        with open(paths["tags"], "w", encoding="utf-8") as fh:
            write_service_tags(self.tags, fh)
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            fh.write("actor_address,class\n")
            for a, c in self.labels.items():
                fh.write(f"{a},{c}\n")
        with open(paths["wallets"], "w", encoding="utf-8") as fh:
            fh.write("address,wallet_id\n")
            for a, w in self.wallets.items():
                fh.write(f"{a},{w}\n")
        return paths


class _Wallet:
    __slots__ = ("wid", "addresses", "funded", "tag")

    def __init__(self, wid: int, tag: ServiceTag | None = None):
        self.wid = wid
        self.addresses: list[str] = []
        self.funded: dict[str, None] = {}  # insertion-ordered set
        self.tag = tag


class _World:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.lines: list[str] = []
        self.balance: dict[str, int] = {}
        self.owner: dict[str, int] = {}
        self.wallets: list[_Wallet] = []
        self.tags = ServiceTagRegistry()
        self.coinjoins: set[str] = set()
        self.used: set[str] = set()
        self._next_addr = 0
        self._next_tx = 0
        self._slot: dict[int, int] = {}
        self._events: list = []
        self._seq = itertools.count()
        self.height = 0

    # -- bookkeeping -------------------------------------------------------

    def wallet(self, tag: ServiceTag | None = None) -> _Wallet:
        w = _Wallet(len(self.wallets), tag)
        self.wallets.append(w)
        return w

    def fresh(self, w: _Wallet) -> str:
        self._next_addr += 1
        # scrambled so address order says nothing about its owner
        addr = f"1{(self._next_addr * 2654435761) % (1 << 40):010x}"
        w.addresses.append(addr)
        self.owner[addr] = w.wid
        self.balance[addr] = 0
        if w.tag is not None:
            self.tags[addr] = w.tag
        return addr

    def funded(self, w: _Wallet) -> list[str]:
        return list(w.funded)

    def holdings(self, w: _Wallet) -> int:
        return sum(self.balance[a] for a in w.funded)

    def sat(self, mu: float, sigma: float, lo: float = 1e-4) -> int:
        btc = max(float(self.rng.lognormal(mu, sigma)), lo)
        return int(round(btc * SAT_PER_BTC))

    def fee(self) -> int:
        return int(self.rng.integers(500, 5000))

    def at(self, height: int, fn: Callable[[], None]) -> None:
        height = int(min(max(height, self.height), self.cfg.blocks - 1))
        heapq.heappush(self._events, (height, next(self._seq), fn))

    def run(self) -> None:
        while self._events:
            h, _, fn = heapq.heappop(self._events)
            self.height = h
            fn()

    # -- transactions ------------------------------------------------------

    def _emit(self, inputs: list[str], outputs: list[list], coinbase: bool = False) -> str:
        h = self.height
        idx = self._slot.get(h, 0)
        self._slot[h] = idx + 1
        self._next_tx += 1
        txid = f"{self._next_tx:016x}"
        rec_inputs = [{"address": a, "value_sat": self.balance[a]} for a in inputs]
        rec_outputs = [{"address": a, "value_sat": int(v), "kind": k} for a, v, k in outputs]
        total_in = sum(i["value_sat"] for i in rec_inputs)
        total_out = sum(o["value_sat"] for o in rec_outputs)
        assert coinbase or total_out <= total_in, "generator broke equilibrium"
        for a in inputs:
            self.balance[a] = 0
            self.wallets[self.owner[a]].funded.pop(a, None)
            self.used.add(a)
        for addr, amount, kind in outputs:
            if kind == "standard":
                self.used.add(addr)
                self.balance[addr] += int(amount)
                if self.balance[addr] > 0:
                    self.wallets[self.owner[addr]].funded[addr] = None
        rec = {
            "txid": txid,
            "height": h,
            "index_in_block": idx,
            "coinbase": coinbase,
            "inputs": rec_inputs,
            "outputs": rec_outputs,
        }
        if coinjoin_shape(len(rec_inputs), [o["value_sat"] for o in rec_outputs]):
            self.coinjoins.add(txid)
        self.lines.append(json.dumps(rec, separators=(",", ":")))
        return txid

    def coinbase(self, to: str, amount: int) -> str:
        return self._emit([], [[to, amount, "standard"]], coinbase=True)

    def pay(
        self,
        inputs: list[str],
        payments: list[tuple[str, int]],
        change_to: str | None,
        extras: bool = True,
        mixing: bool = False,
    ) -> str | None:
        """Spend the full balance of ``inputs``; the remainder goes to ``change_to``.

        Without ``change_to`` the change returns to the first input. Payments
        are scaled down when funds are short.
        """
        inputs = [a for a in dict.fromkeys(inputs) if self.balance[a] > 0]
        if not inputs:
            return None
        total = sum(self.balance[a] for a in inputs)
        fee = self.fee()
        want = sum(p for _, p in payments)
        if want + fee > total:
            if total <= fee + len(payments):
                return None
            scale = (total - fee) / want
            payments = [(a, max(1, int(p * scale))) for a, p in payments]
            want = sum(p for _, p in payments)
        outs = [[a, p, "standard"] for a, p in payments]
        change = total - want - fee
        if change > 0:
            outs.append([change_to or inputs[0], change, "standard"])
        if extras:
            if self.rng.random() < self.cfg.opreturn_prob:
                outs.append([None, 0, "opreturn"])
            if self.rng.random() < self.cfg.nonstandard_prob and change > 2000:
                outs[-1 if outs[-1][2] == "standard" else -2][1] -= 1000
                outs.append([None, 1000, "nonstandard"])
        if not mixing:
            self._break_mixing_pattern(inputs, outs)
        return self._emit(inputs, outs)

    def _break_mixing_pattern(self, inputs: list[str], outs: list[list]) -> None:
        # ordinary payments must never look like CoinJoins; shave single
        # satoshis into the fee until the shape no longer matches
        i = 0
        while coinjoin_shape(len(inputs), [o[1] for o in outs]):
            o = outs[i % len(outs)]
            if o[1] > 1:
                o[1] -= 1
            i += 1


class _Service:
    """Exchange or gambling operator holding tagged hot addresses."""

    def __init__(self, world: _World, tag: ServiceTag):
        self.w = world
        self.wallet = world.wallet(tag)
        self.deposit_addrs: list[str] = []

    def fund(self, amount: int, count: int) -> None:
        for _ in range(count):
            self.w.coinbase(self.w.fresh(self.wallet), amount)

    def deposit_address(self) -> str:
        a = self.w.fresh(self.wallet)
        self.deposit_addrs.append(a)
        return a

    def withdraw(self, to: str, amount: int) -> str | None:
        w = self.w
        hot = [a for a in self.wallet.funded if w.balance[a] > amount + 10_000]
        if hot:
            src = [hot[int(w.rng.integers(len(hot)))]]
        else:
            ranked = sorted(self.w.funded(self.wallet), key=w.balance.__getitem__, reverse=True)
            src, acc = [], 0
            for a in ranked:
                src.append(a)
                acc += w.balance[a]
                if acc > amount + 10_000:
                    break
        return w.pay(src, [(to, amount)], w.fresh(self.wallet), extras=False)

    def sweep(self) -> None:
        w = self.w
        pending = [a for a in self.deposit_addrs if w.balance[a] > 0][:30]
        self.deposit_addrs = [a for a in self.deposit_addrs if w.balance[a] > 0 and a not in pending]
        if len(pending) >= 2:
            w.pay(pending, [], w.fresh(self.wallet), extras=False)


def _poisson(rng, lam: float) -> int:
    return int(rng.poisson(lam)) if lam > 0 else 0


class _Generator:
    def __init__(self, cfg: SynthConfig):
        cfg.validate()
        self.cfg = cfg
        self.w = _World(cfg)
        self.labels: dict[str, str] = {}
        w = self.w
        self.exchange = _Service(w, ServiceTag.EXCHANGE)
        self.casinos = [_Service(w, ServiceTag.GAMBLING) for _ in range(cfg.gambling_services)]
        self.merchants = []
        for _ in range(cfg.merchants):
            m = w.wallet()
            for _ in range(int(w.rng.integers(1, 4))):
                w.fresh(m)
            self.merchants.append(m)

    # -- helpers -----------------------------------------------------------

    def _funded_user(self, when: int, amount: int, then: Callable[[_Wallet, str], None]) -> None:
        """A new user withdraws ``amount`` at ``when`` and then runs ``then``."""
        w = self.w
        user = w.wallet()

        def go():
            addr = w.fresh(user)
            if self.exchange.withdraw(addr, amount):
                then(user, addr)

        w.at(when, go)

    def _change(self, wallet: _Wallet, profile: ClassProfile) -> str | None:
        return self.w.fresh(wallet) if self.w.rng.random() < profile.change_prob else None

    def _merchant_addr(self) -> str:
        m = self.merchants[int(self.w.rng.integers(len(self.merchants)))]
        return m.addresses[int(self.w.rng.integers(len(m.addresses)))]

    def _episode_start(self) -> int:
        lo = self.cfg.window_n + 50
        hi = self.cfg.blocks - self.cfg.window_n - 200
        return int(self.w.rng.integers(lo, hi))

    def _cash_out(self, wallet: _Wallet, when: int) -> None:
        w = self.w

        def go():
            src = w.funded(wallet)
            if src:
                w.pay(src, [(self.exchange.deposit_address(), w.holdings(wallet) - 10_000)], None)

        w.at(when, go)

    # -- background --------------------------------------------------------

    def background(self) -> None:
        cfg, w = self.cfg, self.w
        for _ in range(cfg.background_episodes):
            start = int(w.rng.integers(10, cfg.blocks - 60))
            amount = w.sat(-1.0, 1.2)
            self._funded_user(start, amount, self._bg_activity)

    def _bg_activity(self, user: _Wallet, _addr: str) -> None:
        w = self.w
        rng = w.rng
        n_pay = 1 + _poisson(rng, 1.0)
        t = self.w.height
        for _ in range(n_pay):
            t += int(rng.integers(1, 25))

            def pay(user=user):
                src = w.funded(user)
                if not src:
                    return
                r = rng.random()
                if r < 0.5:
                    to = self._merchant_addr()
                else:
                    to = w.fresh(w.wallet())
                amt = int(w.holdings(user) * rng.uniform(0.1, 0.6))
                change = w.fresh(user) if rng.random() < 0.92 else None
                w.pay(src, [(to, amt)], change)

            w.at(t, pay)
        if rng.random() < 0.4:
            self._cash_out(user, t + int(rng.integers(1, 30)))

    def mining(self) -> None:
        w = self.w
        for h in range(100, self.cfg.blocks, 100):
            w.at(h, lambda: w.coinbase(w.fresh(self.exchange.wallet), 1_250_000_000))

    def sweeps(self) -> None:
        w = self.w
        for h in range(60, self.cfg.blocks, 60):
            w.at(h, self.exchange.sweep)
            for c in self.casinos:
                w.at(h + 20, c.sweep)

    # -- labelled actors ---------------------------------------------------

    def ransom(self) -> None:
        w, p = self.w, self.cfg.profiles["ransom"]
        rng = w.rng
        actor = w.wallet()
        t0 = self._episode_start()
        seed = w.fresh(actor)
        self.labels[seed] = "ransom"
        n_victims = 1 + _poisson(rng, p.activity)
        pay_times = [t0] + sorted(t0 + int(x) for x in rng.integers(1, 60, n_victims - 1))
        targets = [seed] + [
            seed if rng.random() < 0.4 else None for _ in range(n_victims - 1)
        ]
        for when, target in zip(pay_times, targets):
            ransom = w.sat(p.amount_mu, p.amount_sigma, lo=0.01)

            def victim_pays(user, addr, target=target, ransom=ransom, when=when):
                def go():
                    to = target or w.fresh(actor)
                    w.pay([addr], [(to, ransom)], w.fresh(user))

                w.at(when, go)

            self._funded_user(when - int(rng.integers(1, 10)), ransom + w.sat(-3, 1), victim_pays)

        w.at(t0 + 60 + int(rng.integers(1, 20)), lambda: self._disperse(actor, p))

    def _disperse(self, actor: _Wallet, p: ClassProfile) -> None:
        w = self.w
        rng = w.rng
        src = w.funded(actor)
        if not src:
            return
        total = w.holdings(actor) - 20_000
        k = 2 + _poisson(rng, p.fan_out)
        shares = rng.dirichlet(np.ones(k))
        outs = [(w.fresh(actor), max(1, int(total * s))) for s in shares]
        w.pay(src, outs, None)
        for addr, _ in outs:
            when = w.height + int(rng.integers(2, 30))
            r = rng.random()
            if r < p.coinjoin_prob:
                self._coinjoin(addr, actor, when)
            elif r < p.coinjoin_prob + (1 - p.coinjoin_prob) * p.service_prob:
                w.at(when, lambda addr=addr: w.pay([addr], [(self.exchange.deposit_address(), w.balance[addr] - 10_000)], None))
            else:
                w.at(when, lambda addr=addr: self._peel(addr, actor, p))

    def _peel(self, addr: str, actor: _Wallet, p: ClassProfile) -> None:
        w = self.w
        mule = w.fresh(w.wallet())
        amt = int(w.balance[addr] * w.rng.uniform(0.2, 0.5))
        rest = w.fresh(actor)
        if w.pay([addr], [(mule, amt)], rest):
            self._cash_out_addr(rest, w.height + int(w.rng.integers(2, 20)))

    def _cash_out_addr(self, addr: str, when: int) -> None:
        w = self.w
        w.at(when, lambda: w.pay([addr], [(self.exchange.deposit_address(), max(1, w.balance[addr] - 10_000))], None))

    def _coinjoin(self, addr: str, actor: _Wallet, when: int) -> None:
        """Five-party equal-denomination mix with per-party change."""
        w = self.w
        rng = w.rng
        fees = [w.fee() for _ in range(5)]

        def mix():
            bal = w.balance[addr]
            if bal <= 200_000:
                return
            denom = int(bal * rng.uniform(0.5, 0.9))
            owners = [actor] + [w.wallet() for _ in range(4)]
            inputs = [addr]
            # co-mixers are funded just before, a little above the denomination
            for owner in owners[1:]:
                a = w.fresh(owner)
                w.pay(
                    self._exchange_hot(denom * 2),
                    [(a, denom + int(rng.integers(10_000, 100_000)))],
                    w.fresh(self.exchange.wallet),
                    extras=False,
                )
                inputs.append(a)
            if any(w.balance[a] < denom + fee for a, fee in zip(inputs, fees)):
                return  # a co-mixer could not be funded; the mix is called off
            outs = [[w.fresh(owner), denom, "standard"] for owner in owners]
            for owner, a, fee in zip(owners, inputs, fees):
                change = w.balance[a] - denom - fee
                if change > 0:
                    outs.append([w.fresh(owner), change, "standard"])
            w._emit(inputs, outs)
            self._cash_out_addr(outs[0][0], w.height + int(rng.integers(2, 20)))

        w.at(when, mix)

    def _exchange_hot(self, need: int) -> list[str]:
        w = self.w
        hot = [a for a in self.exchange.wallet.funded if w.balance[a] > need]
        if hot:
            return [hot[int(w.rng.integers(len(hot)))]]
        return sorted(w.funded(self.exchange.wallet), key=w.balance.__getitem__, reverse=True)[:3]

    def gambling(self) -> None:
        w, p = self.w, self.cfg.profiles["gambling"]
        rng = w.rng
        casino = self.casinos[int(rng.integers(len(self.casinos)))]
        actor = w.wallet()
        t0 = self._episode_start()
        seed = w.fresh(actor)
        self.labels[seed] = "gambling"
        stake = w.sat(p.amount_mu + 2.0, p.amount_sigma, lo=0.01)
        w.at(t0, lambda: self.exchange.withdraw(seed, stake))
        deposit: list[str] = []
        n_bets = 1 + _poisson(rng, p.activity)
        times = sorted(t0 + int(x) for x in rng.integers(1, 120, n_bets))

        def bet():
            src = w.funded(actor)
            if not src:
                return
            if not deposit:
                deposit.append(casino.deposit_address())
            amt = int(w.holdings(actor) * rng.uniform(0.2, 0.6))
            w.pay(src, [(deposit[0], amt)], self._change(actor, p))
            if rng.random() < 0.6:
                win = int(amt * rng.uniform(0.5, 2.5))
                w.at(w.height + int(rng.integers(1, 6)), lambda: casino.withdraw(seed, win))

        for t in times:
            w.at(t, bet)
        if rng.random() < p.service_prob:
            self._cash_out(actor, times[-1] + int(rng.integers(5, 20)))

    def random_actor(self) -> None:
        w, p = self.w, self.cfg.profiles["random"]
        rng = w.rng
        actor = w.wallet()
        t0 = self._episode_start()
        seed = w.fresh(actor)
        self.labels[seed] = "random"
        amount = w.sat(p.amount_mu + 1.0, p.amount_sigma, lo=0.01)
        if rng.random() < p.service_prob:
            w.at(t0, lambda: self.exchange.withdraw(seed, amount))
        else:
            def friend_pays(user, addr):
                w.at(w.height + int(rng.integers(1, 5)), lambda: w.pay([addr], [(seed, amount)], w.fresh(user)))

            self._funded_user(t0 - 5, amount + w.sat(-3, 1), friend_pays)
        n_pay = 1 + _poisson(rng, p.activity)
        t = t0 + 5
        for _ in range(n_pay):
            t += int(rng.integers(1, 40))

            def pay():
                src = w.funded(actor)
                if not src:
                    return
                extra = _poisson(rng, p.fan_out * 0.5)
                tos = [self._merchant_addr() if rng.random() < 0.6 else w.fresh(w.wallet()) for _ in range(1 + extra)]
                budget = w.holdings(actor) * rng.uniform(0.2, 0.7)
                outs = [(a, max(1, int(budget / len(tos) * rng.uniform(0.7, 1.3)))) for a in tos]
                w.pay(src, outs, self._change(actor, p))

            w.at(t, pay)
        if rng.random() < 0.3:
            self._cash_out(actor, t + int(rng.integers(5, 30)))

    def generate(self) -> SynthResult:
        w = self.w
        # genesis funding
        self.exchange.fund(1000 * SAT_PER_BTC, 60)
        for c in self.casinos:
            c.fund(2000 * SAT_PER_BTC, 10)
        self.background()
        self.mining()
        self.sweeps()
        n = self.cfg.actors_per_class
        makers = {"ransom": self.ransom, "gambling": self.gambling, "random": self.random_actor}
        order = [c for c in CLASS_NAMES for _ in range(n)]
        for i in w.rng.permutation(len(order)):
            makers[order[i]]()
        w.run()
        labels = {a: c for a, c in self.labels.items() if a in w.used}
        wallets = {a: wid for a, wid in w.owner.items() if a in w.used}
        tags = ServiceTagRegistry({a: t for a, t in w.tags.items() if a in w.used})
        return SynthResult(w.lines, tags, labels, wallets, w.coinjoins)


def generate_chain(cfg: SynthConfig | None = None) -> SynthResult:
    """Generate a chain, service tags, class labels and wallet ownership."""
    return _Generator(cfg or SynthConfig()).generate()


def load_config(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text()))
