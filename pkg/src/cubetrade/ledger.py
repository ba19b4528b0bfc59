"""Simulated blockchain: accounts, gas-metered transactions, miner fees.

Transactions apply immediately; each receipt carries the validation latency
the chosen gas price would buy, as reporting metadata only. Every amount is
integer wei and every fee is exactly ``gas_used * gas_price``.
"""

from __future__ import annotations

import csv
import enum
import math
import threading
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from .errors import DuplicateOwner, InsufficientFunds, NonPositiveGasPrice
from .model import WEI_PER_ETHER, WEI_PER_GWEI, ParticipantId


class OracleMode(str, enum.Enum):
    PLAIN = "plain"          # each party posts its own cube
    ORACLIZE = "oraclize"    # cubes fetched through a paid oracle proxy


class TxKind(str, enum.Enum):
    DEPLOY = "deploy"
    UPDATE = "update"
    CALLBACK = "callback"
    TRANSFER = "transfer"


@dataclass(frozen=True)
class GasSchedule:
    mode: OracleMode
    deployment: int
    update: int
    callback: int
    transfer: int

    def gas_for(self, kind: TxKind) -> int:
        return {
            TxKind.DEPLOY: self.deployment,
            TxKind.UPDATE: self.update,
            TxKind.CALLBACK: self.callback,
            TxKind.TRANSFER: self.transfer,
        }[TxKind(kind)]


# Oraclize rows carry the oracle proxy's extra code and fees
PLAIN_SCHEDULE = GasSchedule(OracleMode.PLAIN, deployment=175000, update=41000, callback=23000, transfer=21000)
ORACLIZE_SCHEDULE = GasSchedule(OracleMode.ORACLIZE, deployment=2061490, update=120000, callback=70000,
                                transfer=21000)


def schedule_for(mode: OracleMode | str) -> GasSchedule:
    return PLAIN_SCHEDULE if OracleMode(mode) is OracleMode.PLAIN else ORACLIZE_SCHEDULE


def gwei_to_wei(gwei) -> int:
    """Exact wei amount for a decimal gwei value; rejects sub-wei precision."""
    wei = Decimal(str(gwei)) * WEI_PER_GWEI
    if wei != wei.to_integral_value():
        raise ValueError(f"{gwei} gwei is not a whole number of wei")
    return int(wei)


def gas_cost_ether(gas_used: int, gas_price_gwei) -> Fraction:
    if Decimal(str(gas_price_gwei)) < 0:
        raise ValueError("gas price must be non-negative")
    return Fraction(gas_used * gwei_to_wei(gas_price_gwei), WEI_PER_ETHER)


def as_fraction(x) -> Fraction:
    """Exact rational for ints, Decimals, decimal strings; floats go via their repr."""
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def ether_to_usd(ether, rate_usd_per_eth) -> Fraction:
    rate = as_fraction(rate_usd_per_eth)
    if rate <= 0:
        raise ValueError("exchange rate must be positive")
    return as_fraction(ether) * rate


# (gas price in gwei, seconds until validated) at the two calibration points
LATENCY_ANCHORS = ((Fraction(9, 10), 120.0), (Fraction(20), 14.0))


def validation_latency(gas_price_gwei) -> float:
    """Seconds until a transaction is validated, interpolated in log gas price."""
    price = as_fraction(gas_price_gwei)
    if price <= 0:
        raise NonPositiveGasPrice(f"gas price must be positive, got {gas_price_gwei}")
    (lo_p, lo_s), (hi_p, hi_s) = LATENCY_ANCHORS
    if price <= lo_p:
        return lo_s
    if price >= hi_p:
        return hi_s
    frac = (math.log(price) - math.log(lo_p)) / (math.log(hi_p) - math.log(lo_p))
    return lo_s + (hi_s - lo_s) * frac


@dataclass
class Account:
    id: str
    owner: ParticipantId | None
    balance: int


@dataclass(frozen=True)
class TxReceipt:
    tx_id: int
    kind: TxKind
    gas_used: int
    gas_price: int
    fee: int
    latency: float
    payer: str
    amount: int = 0
    recipient: str | None = None
    contract: str | None = None
    memo: str = ""

    def __post_init__(self):
        assert self.fee == self.gas_used * self.gas_price

    def to_json(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "kind": self.kind.value,
            "gas_used": self.gas_used,
            "gas_price_wei": self.gas_price,
            "fee_wei": self.fee,
            "latency_s": f"{self.latency:.3f}",
            "payer": self.payer,
            "amount_wei": self.amount,
            "recipient": self.recipient,
            "contract": self.contract,
            "memo": self.memo,
        }


RECEIPT_CSV_HEADER = ["tx_id", "kind", "gas_used", "gas_price_wei", "fee_wei", "payer", "latency_s"]


class Ledger:
    """Single-writer ledger; all mutations are serialised by one lock."""

    def __init__(self, mode: OracleMode | str = OracleMode.PLAIN, gas_price_gwei="0.9",
                 schedules: dict | None = None):
        self.mode = OracleMode(mode)
        self.gas_price_gwei = Decimal(str(gas_price_gwei))
        if self.gas_price_gwei <= 0:
            raise NonPositiveGasPrice(f"gas price must be positive, got {gas_price_gwei}")
        self.gas_price = gwei_to_wei(self.gas_price_gwei)
        self.schedules = schedules or {OracleMode.PLAIN: PLAIN_SCHEDULE, OracleMode.ORACLIZE: ORACLIZE_SCHEDULE}
        self.accounts: dict[str, Account] = {}
        self._by_owner: dict[ParticipantId, str] = {}
        self.receipts: list[TxReceipt] = []
        self.miner_pool = 0
        self.contracts: dict[str, dict] = {}
        self._lock = threading.RLock()

    # accounts -------------------------------------------------------------
    def create_account(self, owner: ParticipantId, initial: int = 0) -> str:
        if initial < 0 or int(initial) != initial:
            raise ValueError("initial balance must be a non-negative integer wei amount")
        with self._lock:
            if owner in self._by_owner:
                raise DuplicateOwner(f"{owner} already has account {self._by_owner[owner]}")
            aid = f"acct:{owner}"
            self.accounts[aid] = Account(aid, owner, int(initial))
            self._by_owner[owner] = aid
            return aid

    def account_of(self, owner: ParticipantId) -> str:
        return self._by_owner[owner]

    def balance(self, who) -> int:
        aid = who if isinstance(who, str) else self._by_owner[who]
        return self.accounts[aid].balance

    def total_value(self) -> int:
        """Sum of balances plus miner fees; constant under every transaction."""
        with self._lock:
            return sum(a.balance for a in self.accounts.values()) + self.miner_pool

    # transactions ---------------------------------------------------------
    def _resolve(self, who) -> str:
        return who if isinstance(who, str) else self._by_owner[who]

    def _price(self, gas_price) -> int:
        if gas_price is None:
            return self.gas_price
        if gas_price <= 0:
            raise NonPositiveGasPrice(f"gas price must be positive, got {gas_price}")
        return int(gas_price)

    def _apply(self, kind: TxKind, mode, gas_price, payer, amount=0, recipient=None, contract=None, memo=""):
        gas = self.schedules[OracleMode(mode or self.mode)].gas_for(kind)
        price = self._price(gas_price)
        with self._lock:
            pid = self._resolve(payer)
            rid = self._resolve(recipient) if recipient is not None else None
            fee = gas * price
            needed = fee + amount
            acct = self.accounts[pid]
            if acct.balance < needed:
                raise InsufficientFunds(pid, needed, acct.balance)
            acct.balance -= needed
            if rid is not None:
                self.accounts[rid].balance += amount
            self.miner_pool += fee
            receipt = TxReceipt(
                tx_id=len(self.receipts) + 1, kind=kind, gas_used=gas, gas_price=price, fee=fee,
                latency=validation_latency(Fraction(price, WEI_PER_GWEI)), payer=pid,
                amount=amount, recipient=rid, contract=contract, memo=memo,
            )
            self.receipts.append(receipt)
            return receipt

    def deploy_contract(self, payer, mode: OracleMode | str | None = None, gas_price: int | None = None,
                        memo: str = "") -> tuple[str, TxReceipt]:
        with self._lock:
            cid = f"contract:{len(self.contracts) + 1}"
            receipt = self._apply(TxKind.DEPLOY, mode, gas_price, payer, contract=cid, memo=memo)
            self.contracts[cid] = {"mode": OracleMode(mode or self.mode), "deployer": receipt.payer}
            return cid, receipt

    def submit_tx(self, kind: TxKind | str, payer, mode: OracleMode | str | None = None,
                  gas_price: int | None = None, amount: int = 0, recipient=None,
                  contract: str | None = None, memo: str = "") -> TxReceipt:
        kind = TxKind(kind)
        if kind is TxKind.DEPLOY:
            raise ValueError("use deploy_contract for deployments")
        if kind is not TxKind.TRANSFER and (amount or recipient is not None):
            raise ValueError("only transfers move value")
        if amount < 0:
            raise ValueError("transfer amount must be non-negative")
        if kind is TxKind.TRANSFER and recipient is None:
            raise ValueError("transfer needs a recipient")
        return self._apply(kind, mode, gas_price, payer, amount, recipient, contract, memo)

    def tx_fee(self, kind: TxKind | str, mode: OracleMode | str | None = None, gas_price: int | None = None) -> int:
        return self.schedules[OracleMode(mode or self.mode)].gas_for(TxKind(kind)) * self._price(gas_price)

    def export_receipts_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECEIPT_CSV_HEADER)
            for r in self.receipts:
                w.writerow([r.tx_id, r.kind.value, r.gas_used, r.gas_price, r.fee, r.payer, f"{r.latency:.3f}"])
        return path
