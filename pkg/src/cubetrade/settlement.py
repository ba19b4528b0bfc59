"""Settlement over unilateral cubes.

For every (producer, consumer, topic) covered by an agreement spanning the
whole window, the producer's sent count must equal the consumer's received
count. Missing cubes are patched from the counterpart where possible, the
remaining disagreements are reported as inequalities, and each
(producer, consumer) pair is driven through the settlement contract on the
ledger.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace
from types import MappingProxyType

from .broker import SubscriptionRegistry
from .edge import PublisherCube, SubscriberCube
from .errors import (
    AmbiguousPropagation,
    ContractRejected,
    InsufficientFunds,
    OutOfOrderQuery,
    UnauthorizedSender,
)
from .ledger import Ledger, OracleMode, TxKind
from .model import ParticipantId, PriceTable, Topic, Window

Triple = tuple[ParticipantId, ParticipantId, Topic]


# --------------------------------------------------------------------------
# fees
# --------------------------------------------------------------------------

def compute_fee(counts: Mapping[Topic, int], prices: PriceTable) -> int:
    """Sum over topics of count times unit price, in wei."""
    return sum(n * prices.price_of(t) for t, n in counts.items())


def compute_profit(fees: Iterable[tuple[ParticipantId, int]]) -> int:
    return sum(fee for _, fee in fees)


# --------------------------------------------------------------------------
# cube sets and propagation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CubeSet:
    """All unilateral cubes for one window; ``None`` marks a cube never received."""

    window: Window
    publishers: Mapping = field(default_factory=dict)
    subscribers: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for cube in (*self.publishers.values(), *self.subscribers.values()):
            if cube is not None and cube.window != self.window:
                raise ValueError(f"cube of {cube.owner} is for {cube.window}, set is for {self.window}")
        object.__setattr__(self, "publishers", MappingProxyType(dict(sorted(self.publishers.items()))))
        object.__setattr__(self, "subscribers", MappingProxyType(dict(sorted(self.subscribers.items()))))

    def pub_value(self, prod: ParticipantId, topic: Topic) -> int | None:
        cube = self.publishers.get(prod)
        return None if cube is None else cube.value(topic)

    def sub_value(self, cons: ParticipantId, prod: ParticipantId, topic: Topic) -> int | None:
        cube = self.subscribers.get(cons)
        return None if cube is None else cube.value((prod, topic))

    def reported(self, who: ParticipantId) -> bool:
        """True if ``who`` submitted its own cube (as opposed to missing or reconstructed)."""
        cube = self.publishers.get(who, self.subscribers.get(who))
        return cube is not None and not cube.derived


def checkable_triples(window: Window, registry: SubscriptionRegistry) -> list[Triple]:
    """Triples whose agreement spans the whole window, in canonical order."""
    return sorted((a.producer, a.consumer, t) for a in registry.covering(window) for t in a.topics)


@dataclass(frozen=True)
class Fill:
    side: str           # "publisher" or "subscriber"
    owner: ParticipantId
    key: object
    value: int
    source: ParticipantId


def propagate_missing(cubes: CubeSet, registry: SubscriptionRegistry) -> tuple[CubeSet, list]:
    """Fill values of missing cubes from their counterparts.

    A missing publisher entry takes the count reported by the subscribers of
    that topic (only if they all agree); a missing subscriber entry takes the
    publisher's sent count. Only cubes the participants actually reported act
    as sources, so fills never feed further fills and the operation is
    idempotent. Existing values are never overwritten.
    """
    triples = checkable_triples(cubes.window, registry)
    log: list = []
    pub_fill: dict[ParticipantId, dict] = defaultdict(dict)
    sub_fill: dict[ParticipantId, dict] = defaultdict(dict)

    subs_by_pt: dict[tuple, list[ParticipantId]] = defaultdict(list)
    for p, c, t in triples:
        subs_by_pt[(p, t)].append(c)

    for (p, t), consumers in subs_by_pt.items():
        if cubes.pub_value(p, t) is not None:
            continue
        reports = {c: cubes.sub_value(c, p, t) for c in consumers if cubes.reported(c)}
        if not reports:
            continue
        values = set(reports.values())
        if len(values) > 1:
            log.append(AmbiguousPropagation(p, t, reports))
            continue
        value = values.pop()
        source = min(reports)
        pub_fill[p][t] = value
        log.append(Fill("publisher", p, t, value, source))

    for p, c, t in triples:
        if cubes.sub_value(c, p, t) is not None or not cubes.reported(p):
            continue
        value = cubes.pub_value(p, t)
        sub_fill[c][(p, t)] = value
        log.append(Fill("subscriber", c, (p, t), value, p))

    publishers = dict(cubes.publishers)
    for p, fills in pub_fill.items():
        publishers[p] = _extend(publishers.get(p), PublisherCube, cubes.window, p, fills)
    subscribers = dict(cubes.subscribers)
    for c, fills in sub_fill.items():
        subscribers[c] = _extend(subscribers.get(c), SubscriberCube, cubes.window, c, fills)
    return CubeSet(cubes.window, publishers, subscribers), log


def _extend(cube, cls, window, owner, fills):
    entries = dict(cube.entries) if cube is not None else {}
    known = set(cube.known) if cube is not None else set()
    entries.update(fills)
    known.update(fills)
    return cls(window, owner, entries, frozenset(known))


# --------------------------------------------------------------------------
# consistency
# --------------------------------------------------------------------------

class Status(str, enum.Enum):
    CONSISTENT = "consistent"
    INEQUALITY = "inequality"
    NOT_CHECKABLE = "not_checkable"


@dataclass(frozen=True, order=True)
class Inequality:
    producer: ParticipantId
    consumer: ParticipantId
    topic: Topic
    claimed_sent: int
    claimed_received: int

    def __post_init__(self):
        if self.claimed_sent == self.claimed_received:
            raise ValueError("equal claims are not an inequality")

    @property
    def triple(self) -> Triple:
        return (self.producer, self.consumer, self.topic)

    def to_json(self) -> dict:
        return {
            "producer": self.producer.id,
            "consumer": self.consumer.id,
            "topic": self.topic,
            "claimed_sent": self.claimed_sent,
            "claimed_received": self.claimed_received,
        }


@dataclass(frozen=True)
class TripleStatus:
    status: Status
    sent: int | None = None
    received: int | None = None
    reason: str = ""

    def to_json(self) -> dict:
        return {"status": self.status.value, "sent": self.sent, "received": self.received, "reason": self.reason}


@dataclass(frozen=True)
class ConsistencyReport:
    window: Window
    statuses: Mapping

    @property
    def consistent(self) -> bool:
        """No inequality and no required value left missing."""
        return all(
            s.status is Status.CONSISTENT or (s.status is Status.NOT_CHECKABLE and s.reason == "partial-window")
            for s in self.statuses.values()
        )

    def for_pair(self, prod: ParticipantId, cons: ParticipantId) -> dict[Topic, TripleStatus]:
        return {t: s for (p, c, t), s in self.statuses.items() if p == prod and c == cons}


def check_consistency(cubes: CubeSet, registry: SubscriptionRegistry) -> ConsistencyReport:
    statuses = {}
    for a in registry.overlapping(cubes.window):
        whole = a.window.covers(cubes.window)
        for t in sorted(a.topics):
            key = (a.producer, a.consumer, t)
            if not whole:
                statuses[key] = TripleStatus(Status.NOT_CHECKABLE, reason="partial-window")
                continue
            sent = cubes.pub_value(a.producer, t)
            received = cubes.sub_value(a.consumer, a.producer, t)
            if sent is None or received is None:
                side = "both" if sent is None and received is None else ("publisher" if sent is None else "subscriber")
                statuses[key] = TripleStatus(Status.NOT_CHECKABLE, sent, received, f"missing-{side}")
            elif sent == received:
                statuses[key] = TripleStatus(Status.CONSISTENT, sent, received)
            else:
                statuses[key] = TripleStatus(Status.INEQUALITY, sent, received)
    return ConsistencyReport(cubes.window, MappingProxyType(dict(sorted(statuses.items()))))


def detect_inconsistencies(report: ConsistencyReport) -> list[Inequality]:
    return [
        Inequality(p, c, t, s.sent, s.received)
        for (p, c, t), s in report.statuses.items()
        if s.status is Status.INEQUALITY
    ]


# --------------------------------------------------------------------------
# settlement contract (one producer, one VAS)
# --------------------------------------------------------------------------

PRODUCER_QUERY = "producerQuery"
VAS_QUERY = "vasQuery"


class Phase(str, enum.Enum):
    DEPLOYED = "deployed"
    AWAITING_PRODUCER = "awaiting_producer"
    AWAITING_VAS = "awaiting_vas"
    SETTLED = "settled"
    DISPUTED = "disputed"


@dataclass(frozen=True)
class ContractTx:
    sender: str
    query_id: str
    payload: Mapping | None = None


@dataclass(frozen=True)
class UpdateRequested:
    query_id: str
    party: str


@dataclass(frozen=True)
class Transfer:
    to: str
    amount: int
    counts: Mapping


@dataclass(frozen=True)
class DisputeResolution:
    inequalities: tuple


@dataclass(frozen=True)
class Rejected:
    error: ContractRejected


@dataclass(frozen=True)
class ContractState:
    producer: ParticipantId
    consumer: ParticipantId
    producer_address: str
    vas_address: str
    prices: PriceTable
    phase: Phase = Phase.DEPLOYED
    producer_cube: Mapping | None = None
    vas_cube: Mapping | None = None

    @property
    def authorized(self) -> frozenset:
        return frozenset((self.producer_address, self.vas_address))


def _nonzero(counts: Mapping) -> dict:
    return {t: int(n) for t, n in counts.items() if n}


def contract_step(state: ContractState, tx: ContractTx) -> tuple[ContractState, tuple]:
    """Apply one transaction to the contract; pure in ``(state, tx)``.

    A rejected transaction (unauthorised sender, wrong order) returns the
    state unchanged with a single ``Rejected`` effect, like a reverted call.
    """
    if tx.sender not in state.authorized:
        return state, (Rejected(UnauthorizedSender(f"{tx.sender} is not a party to this contract")),)

    if tx.query_id == PRODUCER_QUERY:
        if tx.sender != state.producer_address:
            return state, (Rejected(UnauthorizedSender("only the producer answers producerQuery")),)
        if state.phase not in (Phase.DEPLOYED, Phase.AWAITING_PRODUCER):
            return state, (Rejected(OutOfOrderQuery(f"producer cube not expected in phase {state.phase.value}")),)
        new = replace(state, phase=Phase.AWAITING_VAS, producer_cube=MappingProxyType(_nonzero(tx.payload or {})))
        return new, (UpdateRequested(VAS_QUERY, state.vas_address),)

    if tx.query_id == VAS_QUERY:
        if tx.sender != state.vas_address:
            return state, (Rejected(UnauthorizedSender("only the VAS answers vasQuery")),)
        if state.phase is not Phase.AWAITING_VAS:
            return state, (Rejected(OutOfOrderQuery(f"VAS cube not expected in phase {state.phase.value}")),)
        vas = _nonzero(tx.payload or {})
        prod = dict(state.producer_cube)
        stored = replace(state, vas_cube=MappingProxyType(vas))
        if prod == vas:
            amount = compute_fee(vas, state.prices)
            return replace(stored, phase=Phase.SETTLED), (
                Transfer(state.producer_address, amount, MappingProxyType(vas)),)
        inequalities = tuple(
            Inequality(state.producer, state.consumer, t, prod.get(t, 0), vas.get(t, 0))
            for t in sorted(set(prod) | set(vas))
            if prod.get(t, 0) != vas.get(t, 0)
        )
        return replace(stored, phase=Phase.DISPUTED), (DisputeResolution(inequalities),)

    return state, (Rejected(OutOfOrderQuery(f"unknown query {tx.query_id!r}")),)


# --------------------------------------------------------------------------
# per-window orchestration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Paid:
    fee: int
    transfer_tx: int
    counts: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class Disputed:
    inequalities: tuple


@dataclass(frozen=True)
class Unsettleable:
    missing: tuple
    reason: str


@dataclass(frozen=True)
class Failed:
    reason: str


@dataclass(frozen=True)
class PairOutcome:
    producer: ParticipantId
    consumer: ParticipantId
    window: Window
    result: Paid | Disputed | Unsettleable | Failed
    receipts: tuple = ()
    unbilled: tuple = ()

    @property
    def status(self) -> str:
        return type(self.result).__name__.lower()

    @property
    def fee(self) -> int:
        return self.result.fee if isinstance(self.result, Paid) else 0

    def to_json(self) -> dict:
        out = {
            "producer": self.producer.id,
            "consumer": self.consumer.id,
            "window": [self.window.start, self.window.end],
            "status": self.status,
            "fee_wei": self.fee,
            "receipts": list(self.receipts),
            "unbilled_topics": list(self.unbilled),
        }
        r = self.result
        if isinstance(r, Paid):
            out["counts"] = dict(r.counts)
        elif isinstance(r, Disputed):
            out["inequalities"] = [i.to_json() for i in r.inequalities]
        elif isinstance(r, Unsettleable):
            out["missing"] = [[p.id, c.id, t] for p, c, t in r.missing]
            out["reason"] = r.reason
        else:
            out["reason"] = r.reason
        return out


@dataclass(frozen=True)
class SettlementRound:
    window: Window
    cubes: CubeSet
    propagation_log: tuple
    report: ConsistencyReport
    outcomes: tuple

    @property
    def inequalities(self) -> list[Inequality]:
        return detect_inconsistencies(self.report)


def _no_reputation(outcome: PairOutcome) -> None:
    return None


def settle_window(cubes: CubeSet, registry: SubscriptionRegistry, prices: PriceTable, ledger: Ledger,
                  mode: OracleMode | str | None = None,
                  reputation_hook: Callable[[PairOutcome], None] = _no_reputation) -> SettlementRound:
    """Settle every producer/consumer pair with an agreement overlapping the window.

    Gas is paid by the transaction's sender: each party pays for posting its
    own cube, the consumer (contract deployer) pays callbacks and the transfer.
    """
    mode = OracleMode(mode or ledger.mode)
    propagated, log = propagate_missing(cubes, registry)
    report = check_consistency(propagated, registry)

    pairs: dict[tuple, dict] = defaultdict(dict)
    for (p, c, t), s in report.statuses.items():
        pairs[(p, c)][t] = s

    outcomes = []
    for (p, c), statuses in sorted(pairs.items()):
        outcome = _settle_pair(p, c, statuses, cubes, prices, ledger, mode, propagated.window)
        reputation_hook(outcome)
        outcomes.append(outcome)
    return SettlementRound(propagated.window, propagated, tuple(log), report, tuple(outcomes))


def _settle_pair(p, c, statuses, reported: CubeSet, prices, ledger: Ledger, mode, window) -> PairOutcome:
    receipts = []
    p_acct, c_acct = ledger.account_of(p), ledger.account_of(c)
    unbilled = tuple(t for t, s in statuses.items() if s.reason == "partial-window")

    def done(result):
        return PairOutcome(p, c, window, result, tuple(receipts), unbilled)

    try:
        if reported.reported(p):
            receipts.append(ledger.submit_tx(TxKind.UPDATE, p_acct, mode, memo=f"cube {p} {window}").tx_id)
        if reported.reported(c):
            receipts.append(ledger.submit_tx(TxKind.UPDATE, c_acct, mode, memo=f"cube {c} {window}").tx_id)
    except InsufficientFunds as exc:
        return done(Failed(str(exc)))

    missing = tuple((p, c, t) for t, s in statuses.items() if s.reason.startswith("missing"))
    if missing:
        return done(Unsettleable(missing, "missing cube values after propagation"))
    checkable = {t: s for t, s in statuses.items() if s.status is not Status.NOT_CHECKABLE}
    if not checkable:
        return done(Unsettleable((), "no agreement spans the whole window"))

    prod_slice = {t: s.sent for t, s in checkable.items()}
    vas_slice = {t: s.received for t, s in checkable.items()}
    fee = compute_fee(vas_slice, prices)
    consumer_cost = 2 * ledger.tx_fee(TxKind.CALLBACK, mode)
    if prod_slice == vas_slice:
        consumer_cost += ledger.tx_fee(TxKind.TRANSFER, mode) + fee
    if ledger.balance(c_acct) < consumer_cost:
        return done(Failed(str(InsufficientFunds(c_acct, consumer_cost, ledger.balance(c_acct)))))

    state = ContractState(p, c, p_acct, c_acct, prices)
    effects = ()
    for tx in (ContractTx(p_acct, PRODUCER_QUERY, prod_slice), ContractTx(c_acct, VAS_QUERY, vas_slice)):
        state, effects = contract_step(state, tx)
        if isinstance(effects[0], Rejected):
            raise effects[0].error
        receipts.append(ledger.submit_tx(TxKind.CALLBACK, c_acct, mode, memo=f"{tx.query_id} {p}->{c}").tx_id)

    effect = effects[0]
    if isinstance(effect, Transfer):
        rec = ledger.submit_tx(TxKind.TRANSFER, c_acct, mode, amount=effect.amount, recipient=effect.to,
                               memo=f"settle {p}->{c} {window}")
        receipts.append(rec.tx_id)
        return done(Paid(effect.amount, rec.tx_id, effect.counts))
    return done(Disputed(effect.inequalities))
