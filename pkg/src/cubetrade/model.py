"""Core vocabulary: participants, topics, windows, agreements and prices.

All amounts are integer wei (1 ether = 10**18 wei). Windows are half-open
``[start, end)`` in integer seconds so that consecutive windows partition time.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from types import MappingProxyType

from .errors import (
    EmptyTopicSet,
    InvalidAgreement,
    InvalidWindow,
    TopicNotOffered,
    UnknownTopic,
)

WEI_PER_ETHER = 10**18
WEI_PER_GWEI = 10**9

Topic = str


class Kind(str, enum.Enum):
    PRODUCER = "producer"
    CONSUMER = "consumer"
    GATEWAY = "gateway"
    BROKER = "broker"


@dataclass(frozen=True, order=True)
class ParticipantId:
    kind: Kind
    id: str

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.id:
            raise ValueError("participant id must be non-empty")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "id": self.id}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ParticipantId":
        return cls(Kind(obj["kind"]), obj["id"])


def producer(pid: str) -> ParticipantId:
    return ParticipantId(Kind.PRODUCER, pid)


def consumer(cid: str) -> ParticipantId:
    return ParticipantId(Kind.CONSUMER, cid)


@dataclass(frozen=True, order=True)
class Window:
    start: int
    end: int

    def __post_init__(self):
        if int(self.start) != self.start or int(self.end) != self.end:
            raise InvalidWindow(f"window bounds must be integer seconds: {self.start}, {self.end}")
        if self.start >= self.end:
            raise InvalidWindow(f"window start {self.start} must precede end {self.end}")

    def __contains__(self, ts: int) -> bool:
        return self.start <= ts < self.end

    def __str__(self) -> str:
        return f"[{self.start},{self.end})"

    @property
    def length(self) -> int:
        return self.end - self.start

    def covers(self, other: "Window") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "Window") -> bool:
        return self.start < other.end and other.start < self.end

    def split(self, length: int) -> list["Window"]:
        """Consecutive sub-windows of ``length`` seconds; the last one may be shorter."""
        if length <= 0:
            raise InvalidWindow(f"window length must be positive, got {length}")
        return [Window(s, min(s + length, self.end)) for s in range(self.start, self.end, length)]


def make_window(start: int, end: int) -> Window:
    return Window(start, end)


@dataclass(frozen=True)
class Agreement:
    """``consumer`` may receive ``producer``'s messages on ``topics`` during ``window``."""

    producer: ParticipantId
    consumer: ParticipantId
    topics: frozenset
    window: Window

    def __post_init__(self):
        object.__setattr__(self, "topics", frozenset(self.topics))
        if self.producer.kind is not Kind.PRODUCER:
            raise InvalidAgreement(f"{self.producer} is not a producer")
        if self.consumer.kind is not Kind.CONSUMER:
            raise InvalidAgreement(f"{self.consumer} is not a consumer")

    @property
    def pair(self) -> tuple[ParticipantId, ParticipantId]:
        return (self.producer, self.consumer)

    def active_at(self, ts: int) -> bool:
        return ts in self.window

    def to_json(self) -> dict:
        return {
            "producer": self.producer.id,
            "consumer": self.consumer.id,
            "topics": sorted(self.topics),
            "window": [self.window.start, self.window.end],
        }


def validate_agreement(agreement: Agreement, producer_topics: Iterable[Topic]) -> Agreement:
    """Return ``agreement`` unchanged if its topics are a non-empty subset of the offer."""
    if not agreement.topics:
        raise EmptyTopicSet()
    offending = agreement.topics - frozenset(producer_topics)
    if offending:
        raise TopicNotOffered(offending)
    return agreement


class PriceTable(Mapping):
    """Immutable topic -> unit price (wei) mapping."""

    def __init__(self, prices: Mapping[Topic, int]):
        table = {}
        for topic, price in prices.items():
            if not topic:
                raise ValueError("topic names must be non-empty")
            if int(price) != price or price < 0:
                raise ValueError(f"price for {topic!r} must be a non-negative integer wei amount")
            table[topic] = int(price)
        self._prices = MappingProxyType(table)

    def __getitem__(self, topic: Topic) -> int:
        return self._prices[topic]

    def __iter__(self):
        return iter(self._prices)

    def __len__(self) -> int:
        return len(self._prices)

    def __repr__(self) -> str:
        return f"PriceTable({dict(self._prices)!r})"

    def __hash__(self):
        return hash(frozenset(self._prices.items()))

    def price_of(self, topic: Topic) -> int:
        try:
            return self._prices[topic]
        except KeyError:
            raise UnknownTopic(topic) from None


def price_of(prices: PriceTable, topic: Topic) -> int:
    return prices.price_of(topic)
