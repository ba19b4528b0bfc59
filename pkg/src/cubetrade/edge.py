"""Unilateral traffic cubes built inside each participant's trusted zone.

A producer's gateway counts the messages it *sent* per topic; it has no idea
who subscribes, so its cube has no consumer dimension. A consumer (VAS) counts
what it *received*, keyed by (producer, topic). Malicious reporting is modelled
by :func:`apply_fault`.
"""

from __future__ import annotations

import enum
import json
import math
import random
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import NamedTuple

from .errors import DirectionViolation
from .model import Kind, ParticipantId, Topic, Window


class SentRecord(NamedTuple):
    topic: Topic
    timestamp: int


class ReceivedRecord(NamedTuple):
    producer: ParticipantId
    topic: Topic
    timestamp: int


def _clean(entries: Mapping) -> MappingProxyType:
    out = {}
    for key, n in entries.items():
        if n < 0:
            raise ValueError(f"negative count {n} for {key}")
        if n:
            out[key] = int(n)
    return MappingProxyType(dict(sorted(out.items())))


class _Cube:
    """Shared behaviour of the two unilateral cube kinds.

    ``known`` is ``None`` for a cube reported by its owner: every absent key
    then means zero. A cube reconstructed by propagation carries the set of
    keys actually filled; everything else is unknown.
    """

    def value(self, key) -> int | None:
        if self.known is not None and key not in self.known:
            return None
        return self.entries.get(key, 0)

    @property
    def derived(self) -> bool:
        return self.known is not None

    def __len__(self) -> int:
        return len(self.entries)

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class PublisherCube(_Cube):
    window: Window
    producer: ParticipantId
    entries: Mapping = field(default_factory=dict)
    known: frozenset | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", _clean(self.entries))
        if self.known is not None:
            object.__setattr__(self, "known", frozenset(self.known))

    @property
    def owner(self) -> ParticipantId:
        return self.producer

    def to_json(self) -> dict:
        return {
            "window": [self.window.start, self.window.end],
            "owner": self.producer.to_json(),
            "entries": [[t, n] for t, n in self.entries.items()],
        }

    @classmethod
    def from_json(cls, obj) -> "PublisherCube":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(Window(*obj["window"]), ParticipantId.from_json(obj["owner"]),
                   {t: n for t, n in obj["entries"]})


@dataclass(frozen=True)
class SubscriberCube(_Cube):
    window: Window
    consumer: ParticipantId
    entries: Mapping = field(default_factory=dict)
    known: frozenset | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", _clean(self.entries))
        if self.known is not None:
            object.__setattr__(self, "known", frozenset(self.known))

    @property
    def owner(self) -> ParticipantId:
        return self.consumer

    def slice_for(self, prod: ParticipantId) -> dict[Topic, int]:
        return {t: n for (p, t), n in self.entries.items() if p == prod}

    def to_json(self) -> dict:
        return {
            "window": [self.window.start, self.window.end],
            "owner": self.consumer.to_json(),
            "entries": [[p.id, t, n] for (p, t), n in self.entries.items()],
        }

    @classmethod
    def from_json(cls, obj) -> "SubscriberCube":
        if isinstance(obj, str):
            obj = json.loads(obj)
        entries = {(ParticipantId(Kind.PRODUCER, p), t): n for p, t, n in obj["entries"]}
        return cls(Window(*obj["window"]), ParticipantId.from_json(obj["owner"]), entries)


def publisher_cube(local_log: Iterable, producer: ParticipantId, window: Window) -> PublisherCube:
    """Per-topic count of messages ``producer`` sent during ``window``."""
    counts = Counter(topic for topic, ts in local_log if window.start <= ts < window.end)
    return PublisherCube(window, producer, counts)


def subscriber_cube(local_log: Iterable, consumer: ParticipantId, window: Window) -> SubscriberCube:
    """Per-(producer, topic) count of messages ``consumer`` received during ``window``."""
    counts = Counter((p, topic) for p, topic, ts in local_log if window.start <= ts < window.end)
    return SubscriberCube(window, consumer, counts)


# --------------------------------------------------------------------------
# fault injection
# --------------------------------------------------------------------------

class FaultKind(str, enum.Enum):
    OVER_REPORT = "over_report"
    UNDER_REPORT = "under_report"
    DROP_CUBE = "drop_cube"
    PERTURB_KEY = "perturb_key"


class _Dropped:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "DROPPED"

    def __bool__(self):
        return False


DROPPED = _Dropped()


@dataclass(frozen=True)
class FaultSpec:
    """A participant's misreport.

    Over/under reporting changes either every entry of the cube or only
    ``keys`` (or ``pick`` keys sampled with the rng). Use ``delta`` for an
    additive change or ``factor`` for a multiplicative one, not both.
    """

    target: ParticipantId
    kind: FaultKind
    delta: int = 0
    factor: Fraction | None = None
    key: object = None
    keys: frozenset | None = None
    pick: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        if self.factor is not None:
            object.__setattr__(self, "factor", Fraction(str(self.factor)) if not isinstance(
                self.factor, Fraction) else self.factor)
            if self.delta:
                raise ValueError("give either delta or factor, not both")
        if self.keys is not None:
            object.__setattr__(self, "keys", frozenset(self.keys))
        if self.kind is FaultKind.OVER_REPORT:
            if self.target.kind is not Kind.PRODUCER:
                raise DirectionViolation("only producers over-report")
            if self.delta < 0 or (self.factor is not None and self.factor < 1):
                raise ValueError("over-reporting must not decrease counts")
        elif self.kind is FaultKind.UNDER_REPORT:
            if self.target.kind is not Kind.CONSUMER:
                raise DirectionViolation("only consumers under-report")
            if self.delta < 0 or (self.factor is not None and not 0 <= self.factor <= 1):
                raise ValueError("under-reporting must not increase counts")
        elif self.kind is FaultKind.PERTURB_KEY and self.key is None:
            raise ValueError("perturb_key needs a key")

    def adjust(self, n: int) -> int:
        """Count reported in place of the honest count ``n``."""
        if self.kind is FaultKind.OVER_REPORT:
            return math.ceil(n * self.factor) if self.factor is not None else n + self.delta
        if self.kind is FaultKind.UNDER_REPORT:
            return math.floor(n * self.factor) if self.factor is not None else max(0, n - self.delta)
        if self.kind is FaultKind.PERTURB_KEY:
            return max(0, n + self.delta)
        raise ValueError(f"{self.kind} does not adjust counts")


def apply_fault(cube, spec: FaultSpec, rng: random.Random | None = None):
    """Return the cube ``spec.target`` would report, or ``DROPPED``."""
    if cube.owner != spec.target:
        raise ValueError(f"fault targets {spec.target}, cube belongs to {cube.owner}")
    if spec.kind is FaultKind.OVER_REPORT and not isinstance(cube, PublisherCube):
        raise DirectionViolation("over-reporting applies to publisher cubes")
    if spec.kind is FaultKind.UNDER_REPORT and not isinstance(cube, SubscriberCube):
        raise DirectionViolation("under-reporting applies to subscriber cubes")
    if spec.kind is FaultKind.DROP_CUBE:
        return DROPPED

    entries = dict(cube.entries)
    if spec.kind is FaultKind.PERTURB_KEY:
        targets = [spec.key]
    elif spec.keys is not None:
        targets = sorted(k for k in entries if k in spec.keys)
    else:
        targets = sorted(entries)
        if spec.pick is not None:
            rng = rng or random.Random(0)
            targets = sorted(rng.sample(targets, min(spec.pick, len(targets))))
    for k in targets:
        entries[k] = spec.adjust(entries.get(k, 0))
    return type(cube)(cube.window, cube.owner, entries, cube.known)
