from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from cubetrade.broker import (
    BernoulliLoss,
    Broker,
    Deflate,
    DropKey,
    DropList,
    Inflate,
    LogTuple,
    SubscriptionRegistry,
    TrafficCube,
    apply_broker_fault,
    read_log,
)
from cubetrade.errors import OverlappingAgreement, TopicNotOffered, UnknownKey
from cubetrade.model import Agreement, Window, consumer, producer

P1, P2 = producer("p1"), producer("p2")
C1, C2 = consumer("c1"), consumer("c2")


def agreement(p, c, topics, start, end):
    return Agreement(p, c, frozenset(topics), Window(start, end))


def test_registry_window_boundaries():
    reg = SubscriptionRegistry()
    reg.subscribe(agreement(P1, C1, {"t1"}, 0, 100))
    assert C1 in reg.subscribers("t1", 50)
    with pytest.raises(OverlappingAgreement):
        reg.subscribe(agreement(P1, C1, {"t1"}, 0, 100))
    reg.subscribe(agreement(P1, C1, {"t1"}, 100, 200))
    assert C1 in reg.subscribers("t1", 150)
    assert C1 not in reg.subscribers("t1", 250)


def test_registry_validates_topics():
    reg = SubscriptionRegistry()
    with pytest.raises(TopicNotOffered):
        reg.subscribe(agreement(P1, C1, {"t9"}, 0, 10), {"t1"})


def test_registry_overlap_is_per_pair():
    reg = SubscriptionRegistry()
    reg.subscribe(agreement(P1, C1, {"t1"}, 0, 100))
    reg.subscribe(agreement(P1, C2, {"t1"}, 0, 100))
    reg.subscribe(agreement(P2, C1, {"t1"}, 50, 150))
    assert len(reg) == 3
    assert len(reg.covering(Window(0, 100))) == 2


def _broker(**kw):
    b = Broker({P1: {"t1", "t2"}, P2: {"t1"}}, **kw)
    b.subscribe(agreement(P1, C1, {"t1"}, 0, 100))
    b.subscribe(agreement(P1, C2, {"t1", "t2"}, 0, 100))
    return b


def test_publish_fans_out_to_active_subscribers():
    b = _broker()
    rep = b.publish(P1, "t1", 50)
    assert rep.delivered_to == {C1, C2} and not rep.dropped_for
    assert len(b.log) == 2
    rep = b.publish(P1, "t1", 250)
    assert not rep.delivered_to
    assert len(b.log) == 2


def test_publish_with_drop_list():
    b = _broker()
    rep = b.publish(P1, "t1", 50, loss_model=DropList([(0, C2)]))
    assert rep.delivered_to == {C1} and set(rep.dropped_for) == {C2}
    assert [lt.consumer for lt in b.log] == [C1]
    assert b.deliveries_dropped == 1


def test_global_cube_examples():
    b = Broker({P1: {"t1"}})
    assert len(b.global_cube(Window(0, 10))) == 0
    b.ingest([LogTuple(P1, C1, "t1", 5)] * 3 + [LogTuple(P1, C2, "t1", 6)] * 2)
    cube = b.global_cube(Window(0, 10))
    assert dict(cube.entries) == {(P1, C1, "t1"): 3, (P1, C2, "t1"): 2}
    assert len(b.global_cube(Window(10, 20))) == 0


def test_batch_and_single_publish_agree():
    rng = np.random.default_rng(5)
    n = 2000
    prods = [P1 if x else P2 for x in rng.integers(0, 2, n)]
    topics = [("t1", "t2")[x] if p == P1 else "t1" for p, x in zip(prods, rng.integers(0, 2, n))]
    ts = np.sort(rng.integers(0, 120, n))
    a, b = _broker(), _broker()
    a.publish_batch(prods, topics, ts)
    for p, t, s in zip(prods, topics, ts.tolist()):
        b.publish(p, t, s)
    assert a.log == b.log
    assert a.global_cube(Window(0, 100)) == b.global_cube(Window(0, 100))


def test_recount_against_raw_log():
    b = _broker()
    rng = np.random.default_rng(1)
    ts = rng.integers(0, 100, 500)
    b.publish_batch([P1] * 500, ["t1" if x else "t2" for x in rng.integers(0, 2, 500)], ts)
    w = Window(20, 60)
    brute = Counter((lt.producer, lt.consumer, lt.topic) for lt in b.log if lt.timestamp in w)
    assert dict(b.global_cube(w).entries) == dict(brute)


def test_bernoulli_loss_is_seeded_and_roughly_calibrated():
    def run(seed):
        b = _broker(loss_model=BernoulliLoss("0.2", seed))
        b.publish_batch([P1] * 5000, ["t1"] * 5000, np.zeros(5000, dtype=np.int64))
        return b
    x, y = run(1), run(1)
    assert x.log == y.log
    assert 0.17 < x.deliveries_dropped / 10000 < 0.23
    assert run(2).log != x.log
    assert BernoulliLoss(Fraction(0), 3).keep(np.arange(5), [C1] * 5).all()
    assert not BernoulliLoss(1, 3).keep(np.arange(5), [C1] * 5).any()


def test_broker_faults():
    key = (P1, C1, "t1")
    cube = TrafficCube(Window(0, 10), {key: 3})
    assert apply_broker_fault(cube, Inflate(key, 5))[key] == 8
    assert apply_broker_fault(cube, Deflate(key, 5))[key] == 0
    dropped = apply_broker_fault(cube, DropKey(key))
    assert key not in dropped.entries
    with pytest.raises(UnknownKey):
        apply_broker_fault(dropped, DropKey(key))
    assert cube[key] == 3


def test_log_export_roundtrip(tmp_path):
    b = _broker()
    b.publish_batch([P1, P1, P2], ["t1", "t2", "t1"], [1, 2, 3])
    path = b.export_log(tmp_path / "traffic.log")
    assert read_log(path) == b.log
    assert path.read_text().splitlines()[0] == "p1,c1,t1,1"
