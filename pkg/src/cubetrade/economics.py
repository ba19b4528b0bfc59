"""Settlement-cost economics: break-even and profitable per-message prices.

All quantities are exact rationals built from integer gas and wei; floats
appear only when values are displayed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from .ledger import GasSchedule, OracleMode, as_fraction, schedule_for
from .model import WEI_PER_ETHER, WEI_PER_GWEI

# Per-settlement gas. Neither constant is a plain sum of gas-table rows; both are
# fitted so the published cost figures come out exactly.
PLAIN_STANDALONE_GAS = 110_000   # single settlement priced on its own
PLAIN_AMORTIZED_GAS = 105_000    # settlements spread over a data volume, deployment added once
ORACLIZE_SETTLEMENT_GAS = 401_000  # 2 updates + 2 callbacks + 1 transfer

DEFAULT_ETH_USD = Fraction(220)
DEFAULT_GAS_PRICE_GWEI = Decimal("0.9")

# messages per day: 1 s sampling, 1 min sampling, hourly
DAILY_RATES = {"high": 86_400, "medium": 1_440, "low": 24}


@dataclass(frozen=True)
class CostModel:
    schedule: GasSchedule
    per_settlement_gas: int
    include_deployment: bool
    gas_price_gwei: Decimal = DEFAULT_GAS_PRICE_GWEI
    eth_usd: Fraction = DEFAULT_ETH_USD

    def __post_init__(self):
        object.__setattr__(self, "gas_price_gwei", Decimal(str(self.gas_price_gwei)))
        object.__setattr__(self, "eth_usd", as_fraction(self.eth_usd))
        if self.per_settlement_gas <= 0:
            raise ValueError("per-settlement gas must be positive")
        if self.gas_price_gwei <= 0:
            raise ValueError("gas price must be positive")
        if self.eth_usd <= 0:
            raise ValueError("ETH/USD rate must be positive")

    @classmethod
    def standalone(cls, mode: OracleMode | str, **kw) -> "CostModel":
        """Cost of settlements alone, no deployment."""
        mode = OracleMode(mode)
        gas = PLAIN_STANDALONE_GAS if mode is OracleMode.PLAIN else ORACLIZE_SETTLEMENT_GAS
        return cls(schedule_for(mode), gas, False, **kw)

    @classmethod
    def amortized(cls, mode: OracleMode | str, **kw) -> "CostModel":
        """Deployment plus settlements, to be spread over the data exchanged."""
        mode = OracleMode(mode)
        gas = PLAIN_AMORTIZED_GAS if mode is OracleMode.PLAIN else ORACLIZE_SETTLEMENT_GAS
        return cls(schedule_for(mode), gas, True, **kw)

    @property
    def mode(self) -> OracleMode:
        return self.schedule.mode

    @property
    def gas_price(self) -> Fraction:
        """Wei per gas."""
        return Fraction(self.gas_price_gwei) * WEI_PER_GWEI

    def at_gas_price(self, gwei) -> "CostModel":
        return replace(self, gas_price_gwei=Decimal(str(gwei)))


@dataclass(frozen=True)
class PriceQuote:
    ether: Fraction
    usd: Fraction
    n_data: int
    n_settlements: int
    mode: OracleMode

    def to_json(self) -> dict:
        return {
            "ether": f"{float(self.ether):.6e}",
            "usd": f"{float(self.usd):.6e}",
            "n_data": self.n_data,
            "n_settlements": self.n_settlements,
            "mode": self.mode.value,
        }


def _quote(model: CostModel, ether: Fraction, n_data: int, n_settlements: int) -> PriceQuote:
    return PriceQuote(ether, ether * model.eth_usd, n_data, n_settlements, model.mode)


def settlement_gas(model: CostModel, n_settlements: int) -> int:
    if n_settlements < 1:
        raise ValueError("need at least one settlement")
    deploy = model.schedule.deployment if model.include_deployment else 0
    return deploy + n_settlements * model.per_settlement_gas


def total_cost_ether(model: CostModel, n_settlements: int) -> Fraction:
    return settlement_gas(model, n_settlements) * model.gas_price / WEI_PER_ETHER


def min_data_price(model: CostModel, n_settlements: int, n_data: int) -> PriceQuote:
    """Per-message price at which the producer exactly recovers settlement costs."""
    if n_data < 1:
        raise ValueError("need at least one message")
    return _quote(model, total_cost_ether(model, n_settlements) / n_data, n_data, n_settlements)


@dataclass(frozen=True)
class CurvePoint:
    gas_price_gwei: Fraction
    n_settlements: int
    n_data: int
    total_eth: Fraction
    total_usd: Fraction

    @property
    def per_data_eth(self) -> Fraction:
        return self.total_eth / self.n_data


def cost_curve(model: CostModel, n_settlements: int, n_data: int, gas_price_range=("0.9", "20"),
               steps: int = 20) -> list[CurvePoint]:
    lo, hi = (as_fraction(Decimal(str(g))) for g in gas_price_range)
    if lo <= 0 or hi <= lo:
        raise ValueError("gas price range must satisfy 0 < lo < hi")
    if steps < 2:
        raise ValueError("need at least two steps")
    gas = settlement_gas(model, n_settlements)
    points = []
    for i in range(steps):
        gwei = lo + (hi - lo) * Fraction(i, steps - 1)
        total = gas * gwei * WEI_PER_GWEI / WEI_PER_ETHER
        points.append(CurvePoint(gwei, n_settlements, n_data, total, total * model.eth_usd))
    return points


def profitable_price(model: CostModel, daily_messages: int, overhead_fraction,
                     settlements_per_day: int = 1) -> PriceQuote:
    """Price at which settlement costs are ``overhead_fraction`` of daily revenue.

    Deployment is ignored: only the recurring per-settlement gas counts.
    """
    share = as_fraction(overhead_fraction)
    if not 0 < share < 1:
        raise ValueError("overhead fraction must lie strictly between 0 and 1")
    if daily_messages < 1 or settlements_per_day < 1:
        raise ValueError("daily messages and settlements must be positive")
    daily_cost = settlements_per_day * model.per_settlement_gas * model.gas_price / WEI_PER_ETHER
    return _quote(model, daily_cost / (share * daily_messages), daily_messages, settlements_per_day)


def sig3(x) -> str:
    """Three significant digits, the precision of the published tables."""
    return f"{float(x):.2e}"


def _write_curve(points, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["gas_price_gwei", "n_settlements", "n_data", "total_eth", "total_usd", "per_data_eth"])
    for pt in points:
        w.writerow([f"{float(pt.gas_price_gwei):.6g}", pt.n_settlements, pt.n_data,
                    f"{float(pt.total_eth):.6e}", f"{float(pt.total_usd):.6e}", f"{float(pt.per_data_eth):.6e}"])


def write_curve_csv(points: list[CurvePoint], path_or_stream):
    """Write plot-ready CSV to a path, or to an open text stream."""
    if hasattr(path_or_stream, "write"):
        _write_curve(points, path_or_stream)
        return path_or_stream
    path = Path(path_or_stream)
    with path.open("w", newline="", encoding="utf-8") as fh:
        _write_curve(points, fh)
    return path


def table2_rows(gas_price_gwei="0.9", overhead_fraction=Fraction(1, 50), eth_usd=DEFAULT_ETH_USD):
    """(rate, mode, quote) for every daily rate and oracle mode."""
    rows = []
    for rate, daily in DAILY_RATES.items():
        for mode in OracleMode:
            model = CostModel.standalone(mode, gas_price_gwei=gas_price_gwei, eth_usd=eth_usd)
            rows.append((rate, mode, profitable_price(model, daily, overhead_fraction, 1)))
    return rows


def write_table2_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate", "mode", "eth", "usd"])
        for rate, mode, q in rows:
            w.writerow([rate, mode.value, f"{float(q.ether):.6e}", f"{float(q.usd):.6e}"])
    return path
