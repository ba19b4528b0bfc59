"""Declarative scenarios and the deterministic end-to-end runner.

Per settlement round the runner does, in order: generate traffic, route it
through the metering broker, build every participant's unilateral cube,
inject the configured faults, and settle each pair on the simulated ledger.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _kernels
from .broker import (
    BernoulliLoss,
    Broker,
    Deflate,
    DropKey,
    DropList,
    Inflate,
    LOSSLESS,
    SubscriptionRegistry,
    TrafficCube,
    apply_broker_fault,
)
from .edge import DROPPED, FaultKind, FaultSpec, PublisherCube, SubscriberCube, apply_fault
from .errors import (
    AmbiguousPropagation,
    CubeTradeError,
    InsufficientFunds,
    ReportIOError,
    ScenarioParseError,
    ValidationErrors,
)
from .ledger import Ledger, OracleMode, as_fraction
from .model import WEI_PER_ETHER, Agreement, Kind, ParticipantId, PriceTable, Window, consumer, producer
from .settlement import CubeSet, Disputed, Failed, Paid, SettlementRound, Unsettleable, settle_window


class RunError(CubeTradeError):
    """A module error raised mid-run, tagged with where it happened."""

    def __init__(self, message: str, window: Window | None = None, pair=None):
        self.window = window
        self.pair = pair
        where = []
        if window is not None:
            where.append(f"window {window}")
        if pair is not None:
            where.append(f"pair {pair[0]} -> {pair[1]}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


# --------------------------------------------------------------------------
# scenario model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficStream:
    producer: str
    topic: str
    count: int | None = None
    rate_per_s: Fraction | None = None
    interval_s: int | None = None
    offset_s: int = 0
    timestamps: tuple | None = None

    def generate(self, duration: int, rng: np.random.Generator) -> np.ndarray:
        if self.timestamps is not None:
            return np.asarray(self.timestamps, dtype=np.int64)
        if self.count is not None:
            return np.sort(rng.integers(self.offset_s, duration, size=self.count, dtype=np.int64))
        if self.interval_s is not None:
            return np.arange(self.offset_s, duration, self.interval_s, dtype=np.int64)
        n = math.ceil((duration - self.offset_s) * self.rate_per_s)
        return np.array([self.offset_s + math.floor(k / self.rate_per_s) for k in range(n)], dtype=np.int64)

    def to_json(self) -> dict:
        out = {"producer": self.producer, "topic": self.topic}
        if self.count is not None:
            out["count"] = self.count
        if self.rate_per_s is not None:
            out["rate_per_s"] = _fmt_fraction(self.rate_per_s)
        if self.interval_s is not None:
            out["interval_s"] = self.interval_s
        if self.offset_s:
            out["offset_s"] = self.offset_s
        if self.timestamps is not None:
            out["timestamps"] = list(self.timestamps)
        return out


def _key_json(key):
    return [key[0].id, key[1]] if isinstance(key, tuple) else key


@dataclass(frozen=True)
class ScheduledFault:
    spec: FaultSpec
    rounds: tuple | None = None

    def active(self, index: int) -> bool:
        return self.rounds is None or index in self.rounds

    def to_json(self) -> dict:
        s = self.spec
        out = {"target": s.target.to_json(), "kind": s.kind.value}
        if s.delta:
            out["delta"] = s.delta
        if s.factor is not None:
            out["factor"] = _fmt_fraction(s.factor)
        if s.key is not None:
            out["key"] = _key_json(s.key)
        if s.keys is not None:
            out["keys"] = sorted(_key_json(k) for k in s.keys)
        if s.pick is not None:
            out["pick"] = s.pick
        if self.rounds is not None:
            out["rounds"] = list(self.rounds)
        return out


@dataclass(frozen=True)
class LedgerConfig:
    mode: OracleMode = OracleMode.PLAIN
    gas_price_gwei: Decimal = Decimal("0.9")
    eth_usd: Fraction = Fraction(220)
    balances: Mapping = field(default_factory=dict)
    default_balance: int = 10**18

    def balance_of(self, who: ParticipantId) -> int:
        return self.balances.get((who.kind.value, who.id), self.default_balance)

    def to_json(self) -> dict:
        nested: dict = {}
        for (kind, pid), wei in sorted(self.balances.items()):
            nested.setdefault(kind, {})[pid] = str(wei)
        return {
            "mode": self.mode.value,
            "gas_price_gwei": str(self.gas_price_gwei),
            "eth_usd": _fmt_fraction(self.eth_usd),
            "initial_balances_wei": nested,
            "default_balance_wei": str(self.default_balance),
        }


@dataclass(frozen=True)
class Scenario:
    producers: Mapping           # id -> frozenset of topics
    consumers: tuple
    topics: tuple
    prices: PriceTable
    agreements: tuple
    duration_s: int
    streams: tuple
    loss: Mapping
    faults: tuple
    ledger: LedgerConfig
    window_s: int
    settlements_per_window: int = 1
    seed: int = 0
    broker_faults: tuple = ()

    @property
    def round_length(self) -> int:
        return self.window_s // self.settlements_per_window

    def rounds(self) -> list[Window]:
        return Window(0, self.duration_s).split(self.round_length)

    def to_json(self) -> dict:
        """Canonical JSON form; ``load_scenario`` of this yields an equal scenario."""
        return {
            "participants": {
                "producers": [{"id": p, "topics": sorted(ts)} for p, ts in sorted(self.producers.items())],
                "consumers": [{"id": c} for c in self.consumers],
            },
            "topics": list(self.topics),
            "prices_wei": {t: str(self.prices[t]) for t in sorted(self.prices)},
            "agreements": [a.to_json() for a in self.agreements],
            "traffic": {"duration_s": self.duration_s, "streams": [s.to_json() for s in self.streams]},
            "loss": dict(self.loss),
            "faults": [f.to_json() for f in self.faults],
            "broker_faults": [dict(b) for b in self.broker_faults],
            "ledger": self.ledger.to_json(),
            "settlement": {"window_s": self.window_s, "settlements_per_window": self.settlements_per_window},
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def _fmt_fraction(x: Fraction) -> str:
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    d = Decimal(x.numerator) / Decimal(x.denominator)
    return str(d) if Fraction(d) == x else f"{x.numerator}/{x.denominator}"


# --------------------------------------------------------------------------
# loading and validation
# --------------------------------------------------------------------------

def _int(value, what: str, errors: list, minimum: int | None = 0) -> int | None:
    try:
        if isinstance(value, bool):
            raise ValueError
        if isinstance(value, str):
            d = Decimal(value)
            if d != d.to_integral_value():
                raise ValueError
            n = int(d)
        elif isinstance(value, int):
            n = value
        else:
            raise ValueError
    except (ValueError, InvalidOperation):
        errors.append(ValueError(f"{what} must be an integer, got {value!r}"))
        return None
    if minimum is not None and n < minimum:
        errors.append(ValueError(f"{what} must be >= {minimum}, got {n}"))
        return None
    return n


def _decimal(value, what: str, errors: list, positive=True) -> Decimal | None:
    if isinstance(value, float):
        errors.append(ValueError(f"{what} must be a decimal string, not a float ({value!r})"))
        return None
    try:
        d = Decimal(str(value))
    except InvalidOperation:
        errors.append(ValueError(f"{what} is not a decimal number: {value!r}"))
        return None
    if positive and d <= 0:
        errors.append(ValueError(f"{what} must be positive, got {value}"))
        return None
    return d


def parse_scenario(raw: Mapping) -> Scenario:
    """Validate a decoded scenario document, collecting every problem found."""
    errors: list = []
    if not isinstance(raw, Mapping):
        raise ValidationErrors([ValueError("scenario must be a JSON object")])
    required = ("participants", "topics", "prices_wei", "agreements", "traffic", "ledger", "settlement")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ValidationErrors([ValueError(f"missing top-level key {k!r}") for k in missing])

    topics = list(raw["topics"])
    if len(set(topics)) != len(topics):
        errors.append(ValueError("topic names must be unique"))
    if any(not isinstance(t, str) or not t for t in topics):
        errors.append(ValueError("topic names must be non-empty strings"))
    topic_set = set(topics)

    parts = raw["participants"]
    producers: dict[str, frozenset] = {}
    for entry in parts.get("producers", []):
        pid = entry.get("id")
        if not pid:
            errors.append(ValueError("producer without id"))
            continue
        if pid in producers:
            errors.append(ValueError(f"duplicate producer id {pid!r}"))
        offered = frozenset(entry.get("topics", []))
        for t in sorted(offered - topic_set):
            errors.append(ValueError(f"producer {pid!r} publishes undeclared topic {t!r}"))
        producers[pid] = offered
    consumers: list[str] = []
    for entry in parts.get("consumers", []):
        cid = entry.get("id")
        if not cid:
            errors.append(ValueError("consumer without id"))
        elif cid in consumers:
            errors.append(ValueError(f"duplicate consumer id {cid!r}"))
        else:
            consumers.append(cid)

    prices = {}
    for t, v in raw["prices_wei"].items():
        if t not in topic_set:
            errors.append(ValueError(f"price for undeclared topic {t!r}"))
        n = _int(v, f"price of {t!r}", errors)
        if n is not None:
            prices[t] = n
    for t in topics:
        if t not in raw["prices_wei"]:
            errors.append(ValueError(f"topic {t!r} has no price"))

    registry = SubscriptionRegistry()
    agreements = []
    for i, entry in enumerate(raw["agreements"]):
        p, c = entry.get("producer"), entry.get("consumer")
        if p not in producers:
            errors.append(ValueError(f"agreement {i}: unknown producer {p!r}"))
            continue
        if c not in consumers:
            errors.append(ValueError(f"agreement {i}: unknown consumer {c!r}"))
            continue
        try:
            a = Agreement(producer(p), consumer(c), frozenset(entry.get("topics", [])), Window(*entry["window"]))
            registry.subscribe(a, producers[p])
        except (CubeTradeError, KeyError, TypeError) as exc:
            errors.append(exc)
            continue
        agreements.append(a)

    traffic = raw["traffic"]
    duration = _int(traffic.get("duration_s"), "traffic.duration_s", errors, minimum=1)
    streams = []
    for i, s in enumerate(traffic.get("streams", [])):
        p, t = s.get("producer"), s.get("topic")
        if p not in producers:
            errors.append(ValueError(f"stream {i}: unknown producer {p!r}"))
            continue
        if t not in producers[p]:
            errors.append(ValueError(f"stream {i}: producer {p!r} does not publish {t!r}"))
            continue
        given = [k for k in ("count", "rate_per_s", "interval_s", "timestamps") if k in s]
        if len(given) != 1:
            errors.append(ValueError(f"stream {i}: give exactly one of count, rate_per_s, interval_s, timestamps"))
            continue
        offset = _int(s.get("offset_s", 0), f"stream {i} offset_s", errors)
        kw = {"offset_s": offset or 0}
        kind = given[0]
        if kind == "count":
            kw["count"] = _int(s["count"], f"stream {i} count", errors)
        elif kind == "interval_s":
            kw["interval_s"] = _int(s["interval_s"], f"stream {i} interval_s", errors, minimum=1)
        elif kind == "rate_per_s":
            d = _decimal(s["rate_per_s"], f"stream {i} rate_per_s", errors, positive=False)
            if d is not None and d < 0:
                errors.append(ValueError(f"stream {i}: rate_per_s must be >= 0"))
                d = None
            kw["rate_per_s"] = Fraction(d) if d is not None else None
        else:
            ts = [_int(x, f"stream {i} timestamp", errors) for x in s["timestamps"]]
            if duration is not None and any(x is not None and x >= duration for x in ts):
                errors.append(ValueError(f"stream {i}: timestamps must lie before duration_s"))
            kw["timestamps"] = tuple(x for x in ts if x is not None)
        if any(kw.get(k, 0) is None for k in given):
            continue
        streams.append(TrafficStream(p, t, **kw))

    loss = dict(raw.get("loss", {"model": "lossless"}))
    if loss.get("model", "lossless") not in ("lossless", "bernoulli", "drop_list"):
        errors.append(ValueError(f"unknown loss model {loss.get('model')!r}"))
    loss.setdefault("model", "lossless")
    if loss["model"] == "bernoulli":
        r = _decimal(loss.get("rate", "0"), "loss.rate", errors, positive=False)
        if r is not None and not 0 <= r <= 1:
            errors.append(ValueError("loss.rate must lie in [0, 1]"))

    faults = []
    for i, f in enumerate(raw.get("faults", [])):
        try:
            faults.append(_parse_fault(f, producers, consumers))
        except (CubeTradeError, ValueError, KeyError, TypeError) as exc:
            errors.append(ValueError(f"fault {i}: {exc}"))

    broker_faults = []
    for i, bf in enumerate(raw.get("broker_faults", [])):
        if bf.get("kind") not in ("inflate", "deflate", "drop_key") or len(bf.get("key", ())) != 3:
            errors.append(ValueError(f"broker fault {i}: need kind inflate|deflate|drop_key and key [p, c, t]"))
        else:
            broker_faults.append(dict(bf))

    lraw = raw["ledger"]
    mode = lraw.get("mode", "plain")
    if mode not in ("plain", "oraclize"):
        errors.append(ValueError(f"unknown ledger mode {mode!r}"))
        mode = "plain"
    gas = _decimal(lraw.get("gas_price_gwei", "0.9"), "ledger.gas_price_gwei", errors)
    usd = _decimal(lraw.get("eth_usd", "220"), "ledger.eth_usd", errors)
    default_balance = _int(lraw.get("default_balance_wei", str(10**18)), "ledger.default_balance_wei", errors)
    balances = {}
    for kind, table in lraw.get("initial_balances_wei", {}).items():
        if kind not in (Kind.PRODUCER.value, Kind.CONSUMER.value):
            errors.append(ValueError(f"initial balances: unknown participant kind {kind!r}"))
            continue
        known = producers if kind == Kind.PRODUCER.value else consumers
        for pid, wei in table.items():
            if pid not in known:
                errors.append(ValueError(f"initial balance for unknown {kind} {pid!r}"))
            n = _int(wei, f"balance of {kind} {pid!r}", errors)
            if n is not None:
                balances[(kind, pid)] = n

    sraw = raw["settlement"]
    window_s = _int(sraw.get("window_s"), "settlement.window_s", errors, minimum=1)
    per_window = _int(sraw.get("settlements_per_window", 1), "settlement.settlements_per_window", errors, minimum=1)
    if window_s and per_window and window_s % per_window:
        errors.append(ValueError("settlement.window_s must be divisible by settlements_per_window"))
    seed = _int(raw.get("seed", 0), "seed", errors)

    if errors:
        raise ValidationErrors(errors)
    return Scenario(
        producers=producers, consumers=tuple(consumers), topics=tuple(topics), prices=PriceTable(prices),
        agreements=tuple(agreements), duration_s=duration, streams=tuple(streams), loss=loss,
        faults=tuple(faults), ledger=LedgerConfig(OracleMode(mode), gas, as_fraction(usd), balances, default_balance),
        window_s=window_s, settlements_per_window=per_window, seed=seed, broker_faults=tuple(broker_faults),
    )


def _parse_fault(f: Mapping, producers, consumers) -> ScheduledFault:
    target = ParticipantId.from_json(f["target"])
    pool = producers if target.kind is Kind.PRODUCER else consumers
    if target.id not in pool:
        raise ValueError(f"unknown target {target}")

    def key_of(k):
        if target.kind is Kind.PRODUCER:
            return k
        return (producer(k[0]), k[1])

    keys = f.get("keys")
    spec = FaultSpec(
        target=target,
        kind=FaultKind(f["kind"]),
        delta=int(f.get("delta", 0)),
        factor=Fraction(Decimal(str(f["factor"]))) if f.get("factor") is not None else None,
        key=key_of(f["key"]) if f.get("key") is not None else None,
        keys=frozenset(key_of(k) for k in keys) if keys is not None else None,
        pick=f.get("pick"),
    )
    rounds = f.get("rounds")
    return ScheduledFault(spec, tuple(rounds) if rounds is not None else None)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from exc
    return parse_scenario(raw)


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

@dataclass
class WindowReport:
    index: int
    window: Window
    global_cube: TrafficCube
    broker_cube: TrafficCube
    publisher_cubes: dict
    subscriber_cubes: dict
    settlement: SettlementRound
    receipts: list

    def to_json(self) -> dict:
        def digest(cube):
            return None if cube is None else hashlib.sha256(cube.canonical_json().encode()).hexdigest()[:16]

        r = self.settlement
        return {
            "index": self.index,
            "window": [self.window.start, self.window.end],
            "global_cube": {
                "total": self.global_cube.total(),
                "entries": [[p.id, c.id, t, n] for (p, c, t), n in self.global_cube.entries.items()],
            },
            "broker_cube_matches_global": self.broker_cube == self.global_cube,
            "unilateral": {
                "publishers": {p.id: digest(cube) for p, cube in sorted(self.publisher_cubes.items())},
                "subscribers": {c.id: digest(cube) for c, cube in sorted(self.subscriber_cubes.items())},
            },
            "consistency": {
                "consistent": r.report.consistent,
                "triples": [[p.id, c.id, t, s.status.value, s.sent, s.received, s.reason]
                            for (p, c, t), s in r.report.statuses.items()],
            },
            "propagation": [_log_entry(e) for e in r.propagation_log],
            "outcomes": [o.to_json() for o in r.outcomes],
            "receipts": [rc.to_json() for rc in self.receipts],
        }


def _log_entry(e) -> dict:
    if isinstance(e, AmbiguousPropagation):
        return {"ambiguous": True, "producer": e.producer.id, "topic": e.topic,
                "values": {c.id: v for c, v in sorted(e.values.items())}}
    key = e.key if isinstance(e.key, str) else [e.key[0].id, e.key[1]]
    return {"side": e.side, "owner": e.owner.id, "key": key, "value": e.value, "source": e.source.id}


@dataclass
class RunReport:
    scenario: Scenario
    seed: int
    windows: list
    ledger: Ledger
    broker: Broker
    traffic: dict
    deploy_receipts: list

    def outcomes(self):
        return [o for w in self.windows for o in w.settlement.outcomes]

    def totals(self) -> dict:
        outs = self.outcomes()
        per_window_fees = sum(rc.fee for w in self.windows for rc in w.receipts)
        return {
            "messages": int(self.traffic["ts"].shape[0]),
            "deliveries": int(sum(w.global_cube.total() for w in self.windows)),
            "deliveries_dropped": self.broker.deliveries_dropped,
            "fees_paid_wei": sum(o.fee for o in outs),
            "settlement_gas_fees_wei": per_window_fees,
            "deployment_gas_fees_wei": sum(rc.fee for rc in self.deploy_receipts),
            "miner_pool_wei": self.ledger.miner_pool,
            "paid_pairs": sum(isinstance(o.result, Paid) for o in outs),
            "disputed_pairs": sum(isinstance(o.result, Disputed) for o in outs),
            "unsettleable_pairs": sum(isinstance(o.result, Unsettleable) for o in outs),
            "failed_pairs": sum(isinstance(o.result, Failed) for o in outs),
            "inequalities": sum(len(w.settlement.inequalities) for w in self.windows),
        }

    def _body(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": self.scenario.to_json(),
            "deployments": [rc.to_json() for rc in self.deploy_receipts],
            "windows": [w.to_json() for w in self.windows],
            "totals": self.totals(),
            "final_balances_wei": {aid: a.balance for aid, a in sorted(self.ledger.accounts.items())},
            "eth_usd": _fmt_fraction(self.scenario.ledger.eth_usd),
            "miner_pool_eth": _fmt_fraction(Fraction(self.ledger.miner_pool, WEI_PER_ETHER)),
        }

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(_canonical(self._body()).encode()).hexdigest()

    def to_dict(self) -> dict:
        body = self._body()
        body["fingerprint"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
        return body

    def canonical_json(self) -> str:
        return _canonical(self.to_dict())


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _loss_model(scenario: Scenario, seed: int):
    cfg = scenario.loss
    if cfg["model"] == "bernoulli":
        return BernoulliLoss(Decimal(str(cfg.get("rate", "0"))), int(cfg.get("seed", seed)))
    if cfg["model"] == "drop_list":
        return DropList((int(m), consumer(c)) for m, c in cfg.get("drops", []))
    return LOSSLESS


def _broker_fault(bf: Mapping):
    p, c, t = bf["key"]
    key = (producer(p), consumer(c), t)
    if bf["kind"] == "inflate":
        return Inflate(key, int(bf.get("delta", 0)))
    if bf["kind"] == "deflate":
        return Deflate(key, int(bf.get("delta", 0)))
    return DropKey(key)


def generate_traffic(scenario: Scenario, rng: np.random.Generator) -> dict:
    """All published messages, ordered by timestamp (stream order breaks ties)."""
    prods, topics, stamps = [], [], []
    for s in scenario.streams:
        ts = s.generate(scenario.duration_s, rng)
        prods.extend([s.producer] * len(ts))
        topics.extend([s.topic] * len(ts))
        stamps.append(ts)
    ts = np.concatenate(stamps) if stamps else np.empty(0, np.int64)
    order = np.argsort(ts, kind="stable")
    return {
        "producer": [prods[i] for i in order],
        "topic": [topics[i] for i in order],
        "ts": ts[order],
    }


def run_scenario(scenario: Scenario, seed: int | None = None, workers: int = 1) -> RunReport:
    seed = scenario.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    traffic = generate_traffic(scenario, rng)

    prod_ids = {p: producer(p) for p in sorted(scenario.producers)}
    cons_ids = {c: consumer(c) for c in sorted(scenario.consumers)}
    broker = Broker({prod_ids[p]: ts for p, ts in scenario.producers.items()},
                    loss_model=_loss_model(scenario, seed))
    for a in scenario.agreements:
        broker.subscribe(a)
    broker.publish_batch([prod_ids[p] for p in traffic["producer"]], traffic["topic"], traffic["ts"])

    cfg = scenario.ledger
    ledger = Ledger(cfg.mode, cfg.gas_price_gwei)
    for who in (*prod_ids.values(), *cons_ids.values()):
        ledger.create_account(who, cfg.balance_of(who))
    deploys = []
    for p, c in sorted({a.pair for a in scenario.agreements}):
        try:
            _, rc = ledger.deploy_contract(c, memo=f"settlement {p}->{c}")
        except InsufficientFunds as exc:
            raise RunError(f"contract deployment failed: {exc}", pair=(p, c)) from exc
        deploys.append(rc)

    # per-participant local logs as index arrays
    topic_list = list(scenario.topics)
    topic_idx = {t: i for i, t in enumerate(topic_list)}
    msg_p = np.array([p for p in traffic["producer"]], dtype=object)
    msg_t = np.array([topic_idx[t] for t in traffic["topic"]], dtype=np.int64)
    sent_logs = {p: (msg_t[msg_p == p], traffic["ts"][msg_p == p]) for p in prod_ids}

    (lp, lc, lt, lts), parts, log_topics = broker.log_arrays()
    prod_order = sorted(prod_ids.values())
    prod_pos = {pid: i for i, pid in enumerate(prod_order)}
    part_to_prod = np.array([prod_pos.get(pt, -1) for pt in parts], dtype=np.int64)
    log_topic_idx = np.array([topic_idx[t] for t in log_topics], dtype=np.int64)
    n_topics = max(len(topic_list), 1)
    recv_logs = {}
    for c, cid in cons_ids.items():
        ci = parts.index(cid) if cid in parts else -1
        mask = lc == ci
        codes = part_to_prod[lp[mask]] * n_topics + log_topic_idx[lt[mask]]
        recv_logs[c] = (codes, lts[mask])

    def build_pub(p, window):
        keys, counts = _kernels.count_keys(*sent_logs[p], window.start, window.end)
        return PublisherCube(window, prod_ids[p], {topic_list[k]: n for k, n in zip(keys.tolist(), counts.tolist())})

    def build_sub(c, window):
        keys, counts = _kernels.count_keys(*recv_logs[c], window.start, window.end)
        entries = {}
        for k, n in zip(keys.tolist(), counts.tolist()):
            pi, ti = divmod(k, n_topics)
            entries[(prod_order[pi], topic_list[ti])] = n
        return SubscriberCube(window, cons_ids[c], entries)

    windows = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for index, window in enumerate(scenario.rounds()):
            if pool is not None:
                pubs = dict(zip(prod_ids, pool.map(lambda p: build_pub(p, window), prod_ids)))
                subs = dict(zip(cons_ids, pool.map(lambda c: build_sub(c, window), cons_ids)))
            else:
                pubs = {p: build_pub(p, window) for p in prod_ids}
                subs = {c: build_sub(c, window) for c in cons_ids}
            reported_pubs = {prod_ids[p]: cube for p, cube in pubs.items()}
            reported_subs = {cons_ids[c]: cube for c, cube in subs.items()}
            fault_rng = np.random.default_rng([seed, index])
            for sf in scenario.faults:
                if not sf.active(index):
                    continue
                table = reported_pubs if sf.spec.target.kind is Kind.PRODUCER else reported_subs
                cube = table.get(sf.spec.target)
                if cube is None:
                    continue
                out = apply_fault(cube, sf.spec, random.Random(int(fault_rng.integers(2**63))))
                table[sf.spec.target] = None if out is DROPPED else out

            gcube = broker.global_cube(window)
            bcube = gcube
            for bf in scenario.broker_faults:
                try:
                    bcube = apply_broker_fault(bcube, _broker_fault(bf))
                except CubeTradeError as exc:
                    raise RunError(f"broker fault failed: {exc}", window=window) from exc

            before = len(ledger.receipts)
            cubes = CubeSet(window, reported_pubs, reported_subs)
            try:
                round_ = settle_window(cubes, broker.registry, scenario.prices, ledger, cfg.mode)
            except CubeTradeError as exc:
                raise RunError(str(exc), window=window) from exc
            windows.append(WindowReport(index, window, gcube, bcube, reported_pubs, reported_subs, round_,
                                        ledger.receipts[before:]))
    finally:
        if pool is not None:
            pool.shutdown()
    return RunReport(scenario, seed, windows, ledger, broker, traffic, deploys)


# --------------------------------------------------------------------------
# report emission
# --------------------------------------------------------------------------

def emit_report(report: RunReport, fmt: str, out_dir, export_log: bool = False) -> list[Path]:
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path = out / "report.json"
            path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
            written.append(path)
        elif fmt == "csv":
            written.append(report.ledger.export_receipts_csv(out / "receipts.csv"))
            written.append(_write_disputes(report, out / "disputes.csv"))
            written.append(_write_settlements(report, out / "settlements.csv"))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        if export_log:
            written.append(report.broker.export_log(out / "traffic.log"))
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {out}: {exc}") from exc
    return written


def _write_disputes(report: RunReport, path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "window_end", "producer", "consumer", "topic", "claimed_sent", "claimed_received"])
        for win in report.windows:
            for i in win.settlement.inequalities:
                w.writerow([win.window.start, win.window.end, i.producer.id, i.consumer.id, i.topic,
                            i.claimed_sent, i.claimed_received])
    return path


def _write_settlements(report: RunReport, path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "window_end", "producer", "consumer", "status", "fee_wei", "receipts"])
        for win in report.windows:
            for o in win.settlement.outcomes:
                w.writerow([win.window.start, win.window.end, o.producer.id, o.consumer.id, o.status, o.fee,
                            " ".join(str(r) for r in o.receipts)])
    return path
