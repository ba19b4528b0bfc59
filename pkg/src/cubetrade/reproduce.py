"""Side-by-side comparison of model outputs with the published cost figures."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .economics import (
    DAILY_RATES,
    CostModel,
    cost_curve,
    min_data_price,
    profitable_price,
)
from .ledger import ORACLIZE_SCHEDULE, PLAIN_SCHEDULE, OracleMode

TOLERANCE = 0.01
TARGETS = ("table1", "table2", "fig2a", "fig2b", "fig2c")

PUBLISHED_TABLE1 = {
    OracleMode.PLAIN: {"deployment": 175000, "update": 41000, "callback": 23000, "transfer": 21000},
    OracleMode.ORACLIZE: {"deployment": 2061490, "update": 120000, "callback": 70000, "transfer": 21000},
}

# rate -> mode -> (ETH, USD), at 0.9 gwei, 2 % overhead, one settlement per day
PUBLISHED_TABLE2 = {
    "high": {OracleMode.PLAIN: (5.73e-8, 1.26e-5), OracleMode.ORACLIZE: (2.09e-7, 4.59e-5)},
    "medium": {OracleMode.PLAIN: (3.44e-6, 7.56e-4), OracleMode.ORACLIZE: (1.25e-5, 2.76e-3)},
    "low": {OracleMode.PLAIN: (2.06e-4, 4.54e-2), OracleMode.ORACLIZE: (7.52e-4, 1.65e-1)},
}

# mode -> series -> ((ETH, USD) at 0.9 gwei, (ETH, USD) at 20 gwei); series is
# (n_settlements, n_data) with n_data None for the standalone single settlement
PUBLISHED_CURVES = {
    OracleMode.PLAIN: {
        (1, None): ((9.9e-5, 2.18e-2), (2.2e-3, 4.84e-1)),
        (1, 2000): ((1.26e-7, 2.77e-5), (2.8e-6, 6.16e-4)),
        (5, 2000): ((3.15e-7, 6.93e-5), (7e-6, 1.54e-3)),
    },
    OracleMode.ORACLIZE: {
        (1, None): ((3.61e-4, 7.94e-2), (8.02e-3, 1.76)),
        (1, 2000): ((1.11e-6, 2.44e-4), (2.46e-5, 5.42e-3)),
        (5, 2000): ((1.83e-6, 4.03e-4), (4.07e-5, 8.95e-3)),
    },
}


@dataclass(frozen=True)
class Comparison:
    label: str
    computed: float
    published: float
    tolerance: float = TOLERANCE

    @property
    def rel_err(self) -> float:
        if self.published == 0:
            return 0.0 if self.computed == 0 else float("inf")
        return abs(self.computed - self.published) / abs(self.published)

    @property
    def passed(self) -> bool:
        return self.rel_err <= self.tolerance

    def row(self) -> str:
        mark = "ok  " if self.passed else "FAIL"
        return f"{mark} {self.label:<44} computed={self.computed:<12.4g} published={self.published:<10.4g} rel_err={self.rel_err:.3%}"


def _table1():
    out = []
    for schedule in (PLAIN_SCHEDULE, ORACLIZE_SCHEDULE):
        for op, published in PUBLISHED_TABLE1[schedule.mode].items():
            out.append(Comparison(f"table1 {schedule.mode.value} {op}", getattr(schedule, op), published, 0.0))
    return out


def _table2():
    out = []
    for rate, daily in DAILY_RATES.items():
        for mode in OracleMode:
            q = profitable_price(CostModel.standalone(mode), daily, Fraction(1, 50), 1)
            eth, usd = PUBLISHED_TABLE2[rate][mode]
            out.append(Comparison(f"table2 {rate} {mode.value} ETH", float(q.ether), eth))
            out.append(Comparison(f"table2 {rate} {mode.value} USD", float(q.usd), usd))
    return out


def _curve(mode: OracleMode):
    out = []
    for (n, n_data), published in PUBLISHED_CURVES[mode].items():
        if n_data is None:
            model, data = CostModel.standalone(mode), 1
            label = f"{mode.value} single settlement"
        else:
            model, data = CostModel.amortized(mode), n_data
            label = f"{mode.value} n={n} over {n_data} data"
        lo, hi = cost_curve(model, n, data, ("0.9", "20"), steps=2)
        for pt, (eth, usd) in zip((lo, hi), published):
            g = f"{float(pt.gas_price_gwei):g}gwei"
            out.append(Comparison(f"{label} @{g} ETH", float(pt.per_data_eth), eth))
            out.append(Comparison(f"{label} @{g} USD", float(pt.per_data_eth * model.eth_usd), usd))
    return out


def _fig2a():
    out = []
    for mode in OracleMode:
        for n in (1, 5):
            q = min_data_price(CostModel.amortized(mode), n, 2000)
            eth, usd = PUBLISHED_CURVES[mode][(n, 2000)][0]
            out.append(Comparison(f"min price {mode.value} n={n} data=2000 ETH", float(q.ether), eth))
            out.append(Comparison(f"min price {mode.value} n={n} data=2000 USD", float(q.usd), usd))
    return out


def reproduce(which: str) -> list[Comparison]:
    if which == "table1":
        return _table1()
    if which == "table2":
        return _table2()
    if which == "fig2a":
        return _fig2a()
    if which == "fig2b":
        return _curve(OracleMode.PLAIN)
    if which == "fig2c":
        return _curve(OracleMode.ORACLIZE)
    raise ValueError(f"unknown reproduction target {which!r}; choose from {', '.join(TARGETS)}")


def min_price_grid(n_data=(100, 500, 1000, 2000, 5000, 10000), settlements=(1, 2, 3, 4, 5), gas_price_gwei="0.9"):
    """Series behind the minimum-price overview, both oracle modes."""
    rows = []
    for mode in OracleMode:
        model = CostModel.amortized(mode, gas_price_gwei=gas_price_gwei)
        for n in settlements:
            for d in n_data:
                rows.append((mode, n, d, min_data_price(model, n, d)))
    return rows
