import random
from fractions import Fraction

import pytest

from cubetrade.edge import (
    DROPPED,
    FaultKind,
    FaultSpec,
    PublisherCube,
    SubscriberCube,
    apply_fault,
    publisher_cube,
    subscriber_cube,
)
from cubetrade.errors import DirectionViolation
from cubetrade.model import Window, consumer, producer

W = Window(0, 100)
P1, P2, C1 = producer("p1"), producer("p2"), consumer("c1")


def test_publisher_cube_counts():
    assert dict(publisher_cube([("t1", 5)] * 10, P1, W).entries) == {"t1": 10}
    log = [("t1", 5)] * 6 + [("t1", 150)] * 4
    assert dict(publisher_cube(log, P1, W).entries) == {"t1": 6}
    assert len(publisher_cube([], P1, W)) == 0


def test_subscriber_cube_counts():
    assert dict(subscriber_cube([(P1, "t1", 1)] * 8, C1, W).entries) == {(P1, "t1"): 8}
    cube = subscriber_cube([(P1, "t1", 1), (P2, "t1", 2)], C1, W)
    assert set(cube.entries) == {(P1, "t1"), (P2, "t1")}
    assert len(subscriber_cube([], C1, W)) == 0


def test_fault_examples():
    over = FaultSpec(P1, FaultKind.OVER_REPORT, delta=2)
    assert dict(apply_fault(PublisherCube(W, P1, {"t1": 10}), over).entries) == {"t1": 12}
    under = FaultSpec(C1, FaultKind.UNDER_REPORT, factor=Fraction(1, 2))
    assert dict(apply_fault(SubscriberCube(W, C1, {(P1, "t1"): 9}), under).entries) == {(P1, "t1"): 4}
    assert apply_fault(PublisherCube(W, P1, {"t1": 1}), FaultSpec(P1, FaultKind.DROP_CUBE)) is DROPPED


def test_fault_direction_is_enforced():
    with pytest.raises(DirectionViolation):
        FaultSpec(C1, FaultKind.OVER_REPORT, delta=1)
    with pytest.raises(DirectionViolation):
        FaultSpec(P1, FaultKind.UNDER_REPORT, delta=1)
    with pytest.raises(ValueError):
        FaultSpec(P1, FaultKind.OVER_REPORT, factor="0.5")
    with pytest.raises(ValueError):
        FaultSpec(P1, FaultKind.OVER_REPORT, delta=1, factor=2)


def test_fault_target_must_own_cube():
    with pytest.raises(ValueError):
        apply_fault(PublisherCube(W, P2, {"t1": 1}), FaultSpec(P1, FaultKind.OVER_REPORT, delta=1))


def test_fault_keys_and_pick():
    cube = PublisherCube(W, P1, {"a": 1, "b": 2, "c": 3})
    only_b = apply_fault(cube, FaultSpec(P1, FaultKind.OVER_REPORT, delta=10, keys={"b"}))
    assert dict(only_b.entries) == {"a": 1, "b": 12, "c": 3}
    picked = apply_fault(cube, FaultSpec(P1, FaultKind.OVER_REPORT, delta=10, pick=2), random.Random(1))
    assert sum(picked.entries[k] != cube.entries[k] for k in cube.entries) == 2


def test_perturb_can_create_or_zero_a_key():
    cube = SubscriberCube(W, C1, {(P1, "t1"): 2})
    up = apply_fault(cube, FaultSpec(C1, FaultKind.PERTURB_KEY, key=(P1, "t2"), delta=3))
    assert up.value((P1, "t2")) == 3
    down = apply_fault(cube, FaultSpec(C1, FaultKind.PERTURB_KEY, key=(P1, "t1"), delta=-5))
    assert down.value((P1, "t1")) == 0 and (P1, "t1") not in down.entries


def test_cube_json_roundtrip():
    pc = PublisherCube(W, P1, {"t1": 3, "t2": 0})
    assert PublisherCube.from_json(pc.to_json()) == pc
    assert "t2" not in pc.entries
    sc = SubscriberCube(W, C1, {(P1, "t1"): 4, (P2, "t1"): 1})
    assert SubscriberCube.from_json(sc.to_json()) == sc
    assert sc.slice_for(P1) == {"t1": 4}


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        PublisherCube(W, P1, {"t1": -1})
