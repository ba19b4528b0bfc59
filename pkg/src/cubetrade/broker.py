"""Simulated metering pub/sub broker.

The broker routes each published message to every consumer holding an active
agreement with the producer for that topic, appends one log tuple per delivered
copy, and aggregates the log into traffic cubes keyed by
``(producer, consumer, topic)``.
"""

from __future__ import annotations

import threading
import zlib
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from types import MappingProxyType
from typing import Protocol

import numpy as np

from . import _kernels
from .errors import (
    OverlappingAgreement,
    TopicNotPublished,
    UnknownKey,
    UnknownProducer,
)
from .model import Agreement, ParticipantId, Topic, Window, consumer, producer, validate_agreement

CubeKey = tuple[ParticipantId, ParticipantId, Topic]


@dataclass(frozen=True, order=True)
class LogTuple:
    producer: ParticipantId
    consumer: ParticipantId
    topic: Topic
    timestamp: int

    def to_line(self) -> str:
        return f"{self.producer.id},{self.consumer.id},{self.topic},{self.timestamp}"

    @classmethod
    def from_line(cls, line: str) -> "LogTuple":
        p, c, t, ts = line.strip().split(",")
        return cls(producer(p), consumer(c), t, int(ts))


class SubscriptionRegistry:
    """Agreements indexed by topic and by (producer, consumer) pair."""

    def __init__(self, agreements: Iterable[Agreement] = ()):
        self._agreements: list[Agreement] = []
        self._by_topic: dict[Topic, list[int]] = defaultdict(list)
        self._by_pair: dict[tuple, list[int]] = defaultdict(list)
        for a in agreements:
            self.subscribe(a)

    def subscribe(self, agreement: Agreement, producer_topics: Iterable[Topic] | None = None) -> int:
        if producer_topics is not None:
            validate_agreement(agreement, producer_topics)
        for i in self._by_pair.get(agreement.pair, ()):
            if self._agreements[i].window.overlaps(agreement.window):
                raise OverlappingAgreement(
                    f"{agreement.producer} -> {agreement.consumer} already has an agreement "
                    f"over {self._agreements[i].window} overlapping {agreement.window}"
                )
        aid = len(self._agreements)
        self._agreements.append(agreement)
        self._by_pair[agreement.pair].append(aid)
        for t in agreement.topics:
            self._by_topic[t].append(aid)
        return aid

    def __len__(self) -> int:
        return len(self._agreements)

    def __iter__(self):
        return iter(self._agreements)

    def __getitem__(self, aid: int) -> Agreement:
        return self._agreements[aid]

    def subscribers(self, topic: Topic, at: int, of: ParticipantId | None = None) -> frozenset:
        """sub(topic) at time ``at``, optionally restricted to agreements with producer ``of``."""
        out = set()
        for i in self._by_topic.get(topic, ()):
            a = self._agreements[i]
            if a.active_at(at) and (of is None or a.producer == of):
                out.add(a.consumer)
        return frozenset(out)

    def for_pair(self, prod: ParticipantId, cons: ParticipantId) -> list[Agreement]:
        return [self._agreements[i] for i in self._by_pair.get((prod, cons), ())]

    def overlapping(self, window: Window) -> list[Agreement]:
        """Agreements active at some point of ``window``, in canonical pair order."""
        hits = [a for a in self._agreements if a.window.overlaps(window)]
        return sorted(hits, key=lambda a: (a.producer, a.consumer, a.window))

    def covering(self, window: Window) -> list[Agreement]:
        return [a for a in self.overlapping(window) if a.window.covers(window)]


@dataclass(frozen=True)
class DeliveryReport:
    message_id: int
    delivered_to: frozenset
    dropped_for: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dropped_for", MappingProxyType(dict(self.dropped_for)))
        assert not (self.delivered_to & set(self.dropped_for)), "consumer both delivered and dropped"


@dataclass(frozen=True)
class BatchReport:
    message_ids: np.ndarray
    delivered: int
    dropped: int


# --------------------------------------------------------------------------
# loss models: deterministic (message_id, consumer) -> keep/drop
# --------------------------------------------------------------------------

def consumer_code(c: ParticipantId) -> int:
    """Stable integer identity of a consumer, independent of interning order."""
    return zlib.crc32(str(c).encode())


class LossModel(Protocol):
    name: str

    def keep(self, message_ids: np.ndarray, consumers: list[ParticipantId]) -> np.ndarray: ...


class Lossless:
    name = "lossless"

    def keep(self, message_ids, consumers):
        return np.ones(len(message_ids), dtype=bool)

    def to_json(self):
        return {"model": self.name}


class DropList:
    """Drops exactly the listed ``(message_id, consumer)`` deliveries."""

    name = "drop_list"

    def __init__(self, drops: Iterable[tuple[int, ParticipantId]]):
        self.drops = frozenset((int(m), c) for m, c in drops)

    def keep(self, message_ids, consumers):
        return np.array([(int(m), c) not in self.drops for m, c in zip(message_ids, consumers)], dtype=bool)

    def to_json(self):
        return {"model": self.name, "drops": sorted([m, c.id] for m, c in self.drops)}


class BernoulliLoss:
    """Drops each delivery independently with probability ``rate``, seeded."""

    name = "bernoulli"

    def __init__(self, rate, seed: int = 0):
        self.rate = Fraction(str(rate)) if not isinstance(rate, Fraction) else rate
        if not 0 <= self.rate <= 1:
            raise ValueError(f"loss rate must lie in [0, 1], got {rate}")
        self.seed = int(seed)
        self._threshold = int(self.rate * 2**64)

    def keep(self, message_ids, consumers):
        if self._threshold == 0:
            return np.ones(len(message_ids), dtype=bool)
        if self._threshold >= 2**64:
            return np.zeros(len(message_ids), dtype=bool)
        codes = np.fromiter((consumer_code(c) for c in consumers), dtype=np.int64, count=len(consumers))
        h = _kernels.delivery_hash(self.seed, np.asarray(message_ids, dtype=np.int64), codes)
        return h >= np.uint64(self._threshold)

    def to_json(self):
        return {"model": self.name, "rate": str(self.rate), "seed": self.seed}


LOSSLESS = Lossless()


# --------------------------------------------------------------------------
# traffic cube
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficCube:
    window: Window
    entries: Mapping = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, n in self.entries.items():
            if n < 0:
                raise ValueError(f"negative count {n} for {key}")
            if n:
                clean[key] = int(n)
        object.__setattr__(self, "entries", MappingProxyType(dict(sorted(clean.items()))))

    def __getitem__(self, key: CubeKey) -> int:
        return self.entries.get(key, 0)

    def __len__(self) -> int:
        return len(self.entries)

    def total(self) -> int:
        return sum(self.entries.values())


@dataclass(frozen=True)
class Inflate:
    key: CubeKey
    delta: int


@dataclass(frozen=True)
class Deflate:
    key: CubeKey
    delta: int


@dataclass(frozen=True)
class DropKey:
    key: CubeKey


def apply_broker_fault(cube: TrafficCube, fault) -> TrafficCube:
    """Perturbed copy of ``cube`` modelling a broker colluding with a participant."""
    entries = dict(cube.entries)
    n = entries.get(fault.key, 0)
    if isinstance(fault, Inflate):
        entries[fault.key] = n + fault.delta
    elif isinstance(fault, Deflate):
        entries[fault.key] = max(0, n - fault.delta)
    elif isinstance(fault, DropKey):
        if fault.key not in entries:
            raise UnknownKey(fault.key)
        del entries[fault.key]
    else:
        raise TypeError(f"unsupported broker fault {fault!r}")
    return TrafficCube(cube.window, entries)


# --------------------------------------------------------------------------
# broker
# --------------------------------------------------------------------------

class Broker:
    """In-memory metering broker with an append-only delivery log.

    ``publish`` routes a single message; ``publish_batch`` routes many at once
    through the fan-out kernel and is what the scenario runner uses.
    """

    def __init__(self, producer_topics: Mapping[ParticipantId, Iterable[Topic]],
                 registry: SubscriptionRegistry | None = None, loss_model: LossModel | None = None):
        self.producer_topics = {p: frozenset(ts) for p, ts in producer_topics.items()}
        self.registry = registry if registry is not None else SubscriptionRegistry()
        self.loss_model = loss_model or LOSSLESS
        self._lock = threading.RLock()
        self._next_msg = 0
        self._dropped = 0
        self._parts: list[ParticipantId] = []
        self._part_idx: dict[ParticipantId, int] = {}
        self._topics: list[Topic] = []
        self._topic_idx: dict[Topic, int] = {}
        self._chunks: list[tuple[np.ndarray, ...]] = []
        self._pending: list[tuple[int, int, int, int]] = []

    # interning ------------------------------------------------------------
    def _pid(self, p: ParticipantId) -> int:
        i = self._part_idx.get(p)
        if i is None:
            i = self._part_idx[p] = len(self._parts)
            self._parts.append(p)
        return i

    def _tid(self, t: Topic) -> int:
        i = self._topic_idx.get(t)
        if i is None:
            i = self._topic_idx[t] = len(self._topics)
            self._topics.append(t)
        return i

    # subscriptions --------------------------------------------------------
    def subscribe(self, agreement: Agreement) -> int:
        if agreement.producer not in self.producer_topics:
            raise UnknownProducer(str(agreement.producer))
        with self._lock:
            return self.registry.subscribe(agreement, self.producer_topics[agreement.producer])

    def _check_publisher(self, prod: ParticipantId, topic: Topic):
        offered = self.producer_topics.get(prod)
        if offered is None:
            raise UnknownProducer(str(prod))
        if topic not in offered:
            raise TopicNotPublished(f"{prod} does not publish {topic!r}")

    # publishing -----------------------------------------------------------
    def publish(self, prod: ParticipantId, topic: Topic, timestamp: int,
                loss_model: LossModel | None = None) -> DeliveryReport:
        self._check_publisher(prod, topic)
        loss = loss_model or self.loss_model
        with self._lock:
            mid = self._next_msg
            self._next_msg += 1
            targets = sorted(self.registry.subscribers(topic, timestamp, of=prod))
            keep = loss.keep(np.full(len(targets), mid, dtype=np.int64), targets) if targets else []
            delivered, dropped = set(), {}
            for c, k in zip(targets, keep):
                if k:
                    delivered.add(c)
                    self._pending.append((self._pid(prod), self._pid(c), self._tid(topic), int(timestamp)))
                else:
                    dropped[c] = loss.name
            self._dropped += len(dropped)
        return DeliveryReport(mid, frozenset(delivered), dropped)

    def publish_batch(self, producers: list[ParticipantId], topics: list[Topic], timestamps,
                      loss_model: LossModel | None = None) -> BatchReport:
        """Route many messages; message ids are assigned in input order."""
        timestamps = np.asarray(timestamps, dtype=np.int64)
        if not (len(producers) == len(topics) == len(timestamps)):
            raise ValueError("producers, topics and timestamps must have equal length")
        for prod, topic in set(zip(producers, topics)):
            self._check_publisher(prod, topic)
        loss = loss_model or self.loss_model
        with self._lock:
            first = self._next_msg
            self._next_msg += len(timestamps)
            msg_ids = np.arange(first, first + len(timestamps), dtype=np.int64)
            msg_p = np.fromiter((self._pid(p) for p in producers), np.int64, len(producers))
            msg_t = np.fromiter((self._tid(t) for t in topics), np.int64, len(topics))

            rows = sorted(
                (a.consumer, a.producer, t, a.window.start, a.window.end)
                for a in self.registry for t in a.topics
            )
            ag_c = np.array([self._pid(r[0]) for r in rows], np.int64)
            ag_p = np.array([self._pid(r[1]) for r in rows], np.int64)
            ag_t = np.array([self._tid(r[2]) for r in rows], np.int64)
            ag_s = np.array([r[3] for r in rows], np.int64)
            ag_e = np.array([r[4] for r in rows], np.int64)

            mi, ri = _kernels.fanout(msg_p, msg_t, timestamps, ag_p, ag_t, ag_s, ag_e)
            cons = ag_c[ri]
            if isinstance(loss, Lossless):
                keep = np.ones(len(mi), dtype=bool)
            else:
                keep = np.asarray(loss.keep(msg_ids[mi], [rows[r][0] for r in ri]), dtype=bool)
            self._flush_pending()
            self._chunks.append((msg_p[mi][keep], cons[keep], msg_t[mi][keep], timestamps[mi][keep]))
            n_drop = int((~keep).sum())
            self._dropped += n_drop
        return BatchReport(msg_ids, int(keep.sum()), n_drop)

    def ingest(self, tuples: Iterable[LogTuple]) -> int:
        """Append externally captured deliveries to the log as-is (no routing)."""
        n = 0
        with self._lock:
            for lt in tuples:
                self._pending.append((self._pid(lt.producer), self._pid(lt.consumer),
                                      self._tid(lt.topic), int(lt.timestamp)))
                n += 1
        return n

    # log access -----------------------------------------------------------
    def _flush_pending(self):
        if self._pending:
            arr = np.array(self._pending, dtype=np.int64).reshape(-1, 4)
            self._chunks.append(tuple(np.ascontiguousarray(arr[:, j]) for j in range(4)))
            self._pending = []

    def log_arrays(self):
        """Snapshot ``(producer_idx, consumer_idx, topic_idx, ts)`` plus the interning tables."""
        with self._lock:
            self._flush_pending()
            if self._chunks:
                cols = tuple(np.concatenate([c[j] for c in self._chunks]) for j in range(4))
            else:
                cols = tuple(np.empty(0, np.int64) for _ in range(4))
            return cols, list(self._parts), list(self._topics)

    @property
    def log(self) -> list[LogTuple]:
        (p, c, t, ts), parts, topics = self.log_arrays()
        return [LogTuple(parts[a], parts[b], topics[k], int(s))
                for a, b, k, s in zip(p.tolist(), c.tolist(), t.tolist(), ts.tolist())]

    @property
    def messages_published(self) -> int:
        return self._next_msg

    @property
    def deliveries_dropped(self) -> int:
        return self._dropped

    def global_cube(self, window: Window) -> TrafficCube:
        (p, c, t, ts), parts, topics = self.log_arrays()
        n_parts, n_topics = max(len(parts), 1), max(len(topics), 1)
        codes = (p * n_parts + c) * n_topics + t
        keys, counts = _kernels.count_keys(codes, ts, window.start, window.end)
        entries = {}
        for code, n in zip(keys.tolist(), counts.tolist()):
            pc, ti = divmod(code, n_topics)
            pi, ci = divmod(pc, n_parts)
            entries[(parts[pi], parts[ci], topics[ti])] = n
        return TrafficCube(window, entries)

    def export_log(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="ascii", newline="\n") as fh:
            for lt in self.log:
                fh.write(lt.to_line() + "\n")
        return path


def read_log(path) -> list[LogTuple]:
    """Parse a ``producer,consumer,topic,timestamp`` log file (no header)."""
    out = []
    with Path(path).open(encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(LogTuple.from_line(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed log record {line.strip()!r}") from exc
    return out

