"""Metered IoT data trading: traffic cubes, consistency checks and on-ledger settlement."""

__version__ = "0.1.0"

from .broker import Broker, SubscriptionRegistry, TrafficCube
from .edge import FaultKind, FaultSpec, PublisherCube, SubscriberCube, apply_fault, publisher_cube, subscriber_cube
from .economics import CostModel, min_data_price, profitable_price
from .ledger import ORACLIZE_SCHEDULE, PLAIN_SCHEDULE, Ledger, OracleMode, validation_latency
from .model import Agreement, ParticipantId, PriceTable, Window, consumer, producer
from .scenario import Scenario, emit_report, load_scenario, run_scenario
from .settlement import (
    CubeSet,
    check_consistency,
    compute_fee,
    contract_step,
    detect_inconsistencies,
    propagate_missing,
    settle_window,
)

__all__ = [
    "Agreement", "Broker", "CostModel", "CubeSet", "FaultKind", "FaultSpec", "Ledger", "ORACLIZE_SCHEDULE",
    "OracleMode", "PLAIN_SCHEDULE", "ParticipantId", "PriceTable", "PublisherCube", "Scenario",
    "SubscriberCube", "SubscriptionRegistry", "TrafficCube", "Window", "apply_fault", "check_consistency",
    "compute_fee", "consumer", "contract_step", "detect_inconsistencies", "emit_report", "load_scenario",
    "min_data_price", "producer", "profitable_price", "propagate_missing", "publisher_cube", "run_scenario",
    "settle_window", "subscriber_cube", "validation_latency",
]
