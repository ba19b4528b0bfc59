"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CubeTradeError(Exception):
    """Base class for every error raised by cubetrade."""


# model
class InvalidWindow(CubeTradeError, ValueError):
    pass


class UnknownTopic(CubeTradeError, KeyError):
    def __init__(self, topic: str):
        super().__init__(topic)
        self.topic = topic

    def __str__(self) -> str:
        return f"unknown topic {self.topic!r}"


class InvalidAgreement(CubeTradeError, ValueError):
    pass


class TopicNotOffered(InvalidAgreement):
    def __init__(self, topics):
        self.topics = tuple(sorted(topics))
        super().__init__(f"topics not offered by producer: {', '.join(self.topics)}")


class EmptyTopicSet(InvalidAgreement):
    def __init__(self):
        super().__init__("agreement must cover at least one topic")


# broker
class OverlappingAgreement(CubeTradeError, ValueError):
    pass


class UnknownProducer(CubeTradeError, KeyError):
    pass


class TopicNotPublished(CubeTradeError, ValueError):
    pass


class UnknownKey(CubeTradeError, KeyError):
    pass


# edge
class DirectionViolation(CubeTradeError, ValueError):
    """Fault kind does not match the incentive direction of the cube owner."""


# settlement
class AmbiguousPropagation(CubeTradeError):
    """Subscribers disagree on a value that would fill a missing publisher entry.

    Not raised by ``propagate_missing`` itself; instances are recorded in the
    propagation log so that one conflict does not abort the whole round.
    """

    def __init__(self, producer, topic: str, values):
        self.producer = producer
        self.topic = topic
        self.values = dict(values)
        super().__init__(f"conflicting subscriber reports for {producer}/{topic}: {self.values}")


class ContractRejected(CubeTradeError):
    """A transaction the settlement contract refuses (Solidity ``throw``)."""


class UnauthorizedSender(ContractRejected):
    pass


class OutOfOrderQuery(ContractRejected):
    pass


# ledger
class InsufficientFunds(CubeTradeError):
    def __init__(self, account: str, needed: int, available: int):
        self.account = account
        self.needed = needed
        self.available = available
        super().__init__(f"account {account} needs {needed} wei, has {available}")


class DuplicateOwner(CubeTradeError, ValueError):
    pass


class NonPositiveGasPrice(CubeTradeError, ValueError):
    pass


# cli / scenario
class ScenarioParseError(CubeTradeError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationErrors(CubeTradeError):
    """All problems found while validating a scenario, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


class ReportIOError(CubeTradeError, OSError):
    pass
