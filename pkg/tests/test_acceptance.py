"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import math
import random
from collections import Counter
from fractions import Fraction

import pytest

from _oracles import (
    faulted_value,
    fee_bruteforce,
    global_counts,
    random_faulty_doc,
    random_scenario_doc,
    received_counts,
    route_bruteforce,
    sent_counts,
    whole_window_triples,
)
from cubetrade.broker import SubscriptionRegistry
from cubetrade.economics import CostModel, cost_curve, profitable_price
from cubetrade.edge import PublisherCube, SubscriberCube
from cubetrade.ledger import ORACLIZE_SCHEDULE, PLAIN_SCHEDULE, OracleMode, validation_latency
from cubetrade.model import Agreement, PriceTable, Window, consumer, producer
from cubetrade.reproduce import reproduce
from cubetrade.scenario import parse_scenario, run_scenario
from cubetrade.settlement import (
    PRODUCER_QUERY,
    VAS_QUERY,
    ContractState,
    ContractTx,
    CubeSet,
    DisputeResolution,
    Paid,
    Phase,
    Rejected,
    Transfer,
    Unsettleable,
    contract_step,
    propagate_missing,
    settle_window,
)
from cubetrade.ledger import Ledger

HONEST_SEEDS = range(50)
FAULTY_SEEDS = range(1000, 1100)


def _close(computed, published, tol=0.01):
    return abs(float(computed) - published) <= tol * abs(published)


# shared runs, so criterion 6 can audit the ledgers of criteria 4 and 5
_RUNS: dict[str, list] = {}


def _honest_runs():
    if "honest" not in _RUNS:
        _RUNS["honest"] = [run_scenario(parse_scenario(random_scenario_doc(s))) for s in HONEST_SEEDS]
    return _RUNS["honest"]


def _faulty_runs():
    if "faulty" not in _RUNS:
        out = []
        for s in FAULTY_SEEDS:
            doc = random_faulty_doc(s)
            out.append((doc, run_scenario(parse_scenario(doc))))
        _RUNS["faulty"] = out
    return _RUNS["faulty"]


# --------------------------------------------------------------------------

def test_criterion_01_gas_table(criterion):
    with criterion(1, "gas schedule constants exact; reproduce table1 at 0% error"):
        assert (PLAIN_SCHEDULE.deployment, PLAIN_SCHEDULE.update, PLAIN_SCHEDULE.callback,
                PLAIN_SCHEDULE.transfer) == (175000, 41000, 23000, 21000)
        assert (ORACLIZE_SCHEDULE.deployment, ORACLIZE_SCHEDULE.update, ORACLIZE_SCHEDULE.callback,
                ORACLIZE_SCHEDULE.transfer) == (2061490, 120000, 70000, 21000)
        rows = reproduce("table1")
        assert len(rows) == 8
        assert all(r.rel_err == 0 and r.passed for r in rows)


def test_criterion_02_profitable_prices(criterion):
    published = {
        ("high", "plain"): (5.73e-8, 1.26e-5), ("medium", "plain"): (3.44e-6, 7.56e-4),
        ("low", "plain"): (2.06e-4, 4.54e-2), ("high", "oraclize"): (2.09e-7, 4.59e-5),
        ("medium", "oraclize"): (1.25e-5, 2.76e-3), ("low", "oraclize"): (7.52e-4, 1.65e-1),
    }
    daily = {"high": 86400, "medium": 1440, "low": 24}
    with criterion(2, "six daily-rate data prices within 1% in ETH and USD"):
        for (rate, mode), (eth, usd) in published.items():
            q = profitable_price(CostModel.standalone(mode, gas_price_gwei="0.9", eth_usd=220),
                                 daily[rate], Fraction(2, 100), 1)
            assert _close(q.ether, eth), (rate, mode, float(q.ether), eth)
            assert _close(q.usd, usd), (rate, mode, float(q.usd), usd)
        assert all(r.passed for r in reproduce("table2"))


def test_criterion_03_curve_endpoints(criterion):
    cases = [
        (CostModel.standalone("plain"), 1, 1, (9.9e-5, 2.2e-3)),
        (CostModel.standalone("oraclize"), 1, 1, (3.61e-4, 8.02e-3)),
        (CostModel.amortized("plain"), 1, 2000, (1.26e-7, 2.8e-6)),
        (CostModel.amortized("plain"), 5, 2000, (3.15e-7, 7e-6)),
        (CostModel.amortized("oraclize"), 1, 2000, (1.11e-6, 2.46e-5)),
        (CostModel.amortized("oraclize"), 5, 2000, (1.83e-6, 4.07e-5)),
    ]
    with criterion(3, "cost-curve endpoints at 0.9 and 20 gwei within 1%"):
        for model, n, data, (lo, hi) in cases:
            first, last = cost_curve(model, n, data, ("0.9", "20"), steps=2)
            assert _close(first.per_data_eth, lo), (model.mode, n, data, float(first.per_data_eth), lo)
            assert _close(last.per_data_eth, hi), (model.mode, n, data, float(last.per_data_eth), hi)
        for which in ("fig2a", "fig2b", "fig2c"):
            assert all(r.passed for r in reproduce(which))


def test_criterion_04_recount_oracle(criterion):
    with criterion(4, "50 honest lossless runs match brute-force recount; zero disputes; exact fees"):
        checked_fees = 0
        for report in _honest_runs():
            sc = report.scenario
            assert report.traffic["ts"].shape[0] <= 20000
            assert len(sc.producers) <= 5 and len(sc.consumers) <= 5 and len(sc.topics) <= 6
            expected_log = route_bruteforce(report.traffic, sc.agreements)
            actual_log = [(lt.producer.id, lt.consumer.id, lt.topic, lt.timestamp) for lt in report.broker.log]
            assert Counter(actual_log) == Counter(expected_log)

            for w in report.windows:
                s, e = w.window.start, w.window.end
                g = global_counts(expected_log, s, e)
                assert {(p.id, c.id, t): n for (p, c, t), n in w.global_cube.entries.items()} == dict(g)
                for p, cube in w.publisher_cubes.items():
                    assert dict(cube.entries) == dict(sent_counts(report.traffic, p.id, s, e))
                for c, cube in w.subscriber_cubes.items():
                    got = {(pp.id, t): n for (pp, t), n in cube.entries.items()}
                    assert got == dict(received_counts(expected_log, c.id, s, e))
                # sent == received == metered, for every fully covered triple
                for p, c, t in whole_window_triples(sc.agreements, s, e):
                    sent = w.publisher_cubes[producer(p)].value(t)
                    recv = w.subscriber_cubes[consumer(c)].value((producer(p), t))
                    assert sent == recv == g[(p, c, t)]

                assert w.settlement.inequalities == []
                for o in w.settlement.outcomes:
                    covered = [a for a in sc.agreements if a.pair == (o.producer, o.consumer)
                               and a.window.covers(w.window)]
                    if not covered:
                        assert isinstance(o.result, Unsettleable)
                        continue
                    assert isinstance(o.result, Paid), o.result
                    want = fee_bruteforce(expected_log, o.producer.id, o.consumer.id, covered[0].topics,
                                          sc.prices, s, e)
                    assert o.fee == want
                    checked_fees += 1
        assert checked_fees > 50


def test_criterion_05_detection(criterion):
    with criterion(5, "100 fault-injected runs: each effective fault on a checkable triple is flagged once, "
                      "nothing else is"):
        flagged_total = 0
        for doc, report in _faulty_runs():
            sc = report.scenario
            faults = {(f["target"]["kind"], f["target"]["id"]): f for f in doc["faults"]}
            log = route_bruteforce(report.traffic, sc.agreements)
            for w in report.windows:
                s, e = w.window.start, w.window.end
                expected = {}
                for p, c, t in whole_window_triples(sc.agreements, s, e):
                    honest_sent = sent_counts(report.traffic, p, s, e)[t]
                    honest_recv = received_counts(log, c, s, e)[(p, t)]
                    assert honest_sent == honest_recv
                    pf, cf = faults.get(("producer", p)), faults.get(("consumer", c))
                    assert pf is None or cf is None  # one honest counterpart per pair
                    sent = faulted_value(pf, t, honest_sent) if pf else honest_sent
                    recv = faulted_value(cf, (p, t), honest_recv) if cf else honest_recv
                    # a dropped cube is patched from the honest side
                    sent = honest_recv if sent is None else sent
                    recv = sent if recv is None else recv
                    if sent != recv:
                        expected[(p, c, t)] = (sent, recv)
                got = [(i.producer.id, i.consumer.id, i.topic) for i in w.settlement.inequalities]
                assert len(got) == len(set(got))
                assert set(got) == set(expected), (doc["seed"], w.index, got, expected)
                for i in w.settlement.inequalities:
                    key = (i.producer.id, i.consumer.id, i.topic)
                    assert (i.claimed_sent, i.claimed_received) == expected[key]
                    assert ("producer", i.producer.id) in faults or ("consumer", i.consumer.id) in faults
                flagged_total += len(got)
                assert not any(isinstance(o.result, Unsettleable) and o.result.missing
                               for o in w.settlement.outcomes)
        assert flagged_total > 50


def test_criterion_06_conservation(criterion):
    with criterion(6, "ledger value conserved to 0 wei and fee == gas x price on every receipt"):
        runs = _honest_runs() + [r for _, r in _faulty_runs()]
        for report in runs:
            ledger = report.ledger
            initial = sum(report.scenario.ledger.balance_of(a.owner) for a in ledger.accounts.values())
            assert ledger.total_value() == initial
            assert ledger.miner_pool == sum(r.fee for r in ledger.receipts)
            replay = {aid: report.scenario.ledger.balance_of(a.owner) for aid, a in ledger.accounts.items()}
            for r in ledger.receipts:
                assert r.fee == r.gas_used * r.gas_price
                assert r.gas_price == ledger.gas_price
                replay[r.payer] -= r.fee + r.amount
                if r.recipient is not None:
                    replay[r.recipient] += r.amount
            assert replay == {aid: a.balance for aid, a in ledger.accounts.items()}
            assert [r.tx_id for r in ledger.receipts] == list(range(1, len(ledger.receipts) + 1))


def _random_cubeset(rng: random.Random):
    w = Window(0, 100)
    prods = [producer(f"p{i}") for i in range(rng.randint(1, 3))]
    cons = [consumer(f"c{j}") for j in range(rng.randint(1, 3))]
    topics = ["a", "b", "c"]
    reg = SubscriptionRegistry()
    for p in prods:
        for c in cons:
            if rng.random() < 0.7:
                reg.subscribe(Agreement(p, c, frozenset(rng.sample(topics, rng.randint(1, 3))), Window(0, 100)))
    pubs = {p: None if rng.random() < 0.35 else
            PublisherCube(w, p, {t: rng.randint(0, 9) for t in topics if rng.random() < 0.8}) for p in prods}
    subs = {c: None if rng.random() < 0.35 else
            SubscriberCube(w, c, {(p, t): rng.randint(0, 9) for p in prods for t in topics if rng.random() < 0.8})
            for c in cons}
    return CubeSet(w, pubs, subs), reg, prods, cons, topics


def test_criterion_07_propagation_laws(criterion):
    with criterion(7, "propagation idempotent and never overwrites; the three worked examples hold"):
        rng = random.Random(7)
        for _ in range(100):
            cubes, reg, prods, cons, topics = _random_cubeset(rng)
            once, _ = propagate_missing(cubes, reg)
            twice, log2 = propagate_missing(once, reg)
            assert twice == once
            assert not [e for e in log2 if hasattr(e, "side")]
            for p in prods:
                for t in topics:
                    if cubes.pub_value(p, t) is not None:
                        assert once.pub_value(p, t) == cubes.pub_value(p, t)
            for c in cons:
                for p in prods:
                    for t in topics:
                        if cubes.sub_value(c, p, t) is not None:
                            assert once.sub_value(c, p, t) == cubes.sub_value(c, p, t)

        w = Window(0, 100)
        p1, c1 = producer("p1"), consumer("c1")
        reg = SubscriptionRegistry()
        reg.subscribe(Agreement(p1, c1, frozenset({"t1"}), w))
        # missing publisher cube, subscriber says 7
        out, log = propagate_missing(CubeSet(w, {p1: None}, {c1: SubscriberCube(w, c1, {(p1, "t1"): 7})}), reg)
        assert out.pub_value(p1, "t1") == 7 and len(log) == 1
        # missing subscriber cube, publisher says 7
        out, log = propagate_missing(CubeSet(w, {p1: PublisherCube(w, p1, {"t1": 7})}, {c1: None}), reg)
        assert out.sub_value(c1, p1, "t1") == 7 and len(log) == 1
        # both missing: nothing to fill, settlement impossible
        cubes = CubeSet(w, {p1: None}, {c1: None})
        out, log = propagate_missing(cubes, reg)
        assert log == [] and out.pub_value(p1, "t1") is None and out.sub_value(c1, p1, "t1") is None
        ledger = Ledger("plain")
        ledger.create_account(p1, 10**18)
        ledger.create_account(c1, 10**18)
        rnd = settle_window(cubes, reg, PriceTable({"t1": 1000}), ledger)
        assert isinstance(rnd.outcomes[0].result, Unsettleable)
        assert ledger.receipts == []


def _state():
    return ContractState(producer("p1"), consumer("c1"), "acct:p1", "acct:c1", PriceTable({"t1": 1000, "t2": 5}))


def test_criterion_08_contract(criterion):
    with criterion(8, "settlement contract examples and random-order fuzz"):
        s0 = _state()
        s, eff = contract_step(s0, ContractTx("acct:mallory", PRODUCER_QUERY, {"t1": 10}))
        assert s == s0 and isinstance(eff[0], Rejected)

        s, _ = contract_step(s0, ContractTx("acct:p1", PRODUCER_QUERY, {"t1": 10}))
        s, eff = contract_step(s, ContractTx("acct:c1", VAS_QUERY, {"t1": 10}))
        assert s.phase is Phase.SETTLED and isinstance(eff[0], Transfer) and eff[0].amount == 10000

        s, _ = contract_step(s0, ContractTx("acct:p1", PRODUCER_QUERY, {"t1": 10}))
        s, eff = contract_step(s, ContractTx("acct:c1", VAS_QUERY, {"t1": 8}))
        assert s.phase is Phase.DISPUTED and isinstance(eff[0], DisputeResolution)
        assert not any(isinstance(x, Transfer) for x in eff)

        rng = random.Random(8)
        senders = ["acct:p1", "acct:c1", "acct:eve"]
        queries = [PRODUCER_QUERY, VAS_QUERY, "bogus"]
        for _ in range(2000):
            s = _state()
            seen = set()
            for _ in range(rng.randint(1, 8)):
                tx = ContractTx(rng.choice(senders), rng.choice(queries), {"t1": rng.randint(0, 3)})
                before = s
                s, eff = contract_step(s, tx)
                if not isinstance(eff[0], Rejected):
                    seen.add(tx.query_id)
                else:
                    assert s == before
                if any(isinstance(x, Transfer) for x in eff):
                    assert before.phase is Phase.AWAITING_VAS and s.phase is Phase.SETTLED
                if before.phase is Phase.DISPUTED:
                    assert s == before and not any(isinstance(x, Transfer) for x in eff)
                if s.phase is Phase.SETTLED:
                    assert seen == {PRODUCER_QUERY, VAS_QUERY}


def test_criterion_09_determinism(criterion):
    with criterion(9, "same scenario and seed give byte-identical canonical reports"):
        for seed in (3, 11, 1003):
            doc = random_faulty_doc(seed) if seed > 1000 else random_scenario_doc(seed, 5000)
            doc["loss"] = {"model": "bernoulli", "rate": "0.05"}
            sc = parse_scenario(doc)
            a = run_scenario(sc).canonical_json().encode()
            b = run_scenario(sc).canonical_json().encode()
            c = run_scenario(sc, workers=4).canonical_json().encode()
            assert a == b == c


def test_criterion_10_latency(criterion):
    with criterion(10, "validation latency 120 s at 0.9 gwei, 14 s at 20 gwei, monotone"):
        assert validation_latency("0.9") == 120.0
        assert validation_latency(20) == 14.0
        sweep = [Fraction(9, 10) + (Fraction(20) - Fraction(9, 10)) * Fraction(i, 99) for i in range(100)]
        values = [validation_latency(g) for g in sweep]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[0] == 120.0 and values[-1] == 14.0
        assert validation_latency(40) == 14.0 and validation_latency("0.1") == 120.0
        assert not math.isnan(sum(values))
