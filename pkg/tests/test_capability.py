import pytest
from hypothesis import given, strategies as st

from hacpo.capability import CapabilityTracker, capability, capability_ratio, record_batch
from hacpo.core import ColdStartError, InvalidInputError


def test_record_batch_mean():
    t = CapabilityTracker()
    record_batch(t, 0, [1, 0, 1, 0])
    assert list(t.history[0]) == [0.5]
    record_batch(t, 1, [1] * 6 + [0] * 2)
    assert list(t.history[1]) == [0.75]


def test_ring_buffer_eviction():
    t = CapabilityTracker(window_size=2)
    for p in (0.2, 0.4, 0.6):
        t.record_mean(0, p)
    assert list(t.history[0]) == [0.4, 0.6]


def test_empty_batch_rejected():
    with pytest.raises(InvalidInputError):
        CapabilityTracker().record_batch(0, [])
    with pytest.raises(InvalidInputError):
        CapabilityTracker().record_mean(0, 1.2)


def test_partial_window_mean():
    t = CapabilityTracker(window_size=5)
    for p in (0.5, 0.6, 0.7):
        t.record_mean(0, p)
    assert capability(t, 0) == pytest.approx(0.6, abs=1e-15)


def test_floor_and_single_entry():
    t = CapabilityTracker(floor=1e-3)
    for _ in range(3):
        t.record_mean(0, 0.0)
    assert capability(t, 0) == 1e-3
    t.record_mean(1, 0.37)
    assert capability(t, 1) == 0.37


def test_cold_start():
    t = CapabilityTracker()
    with pytest.raises(ColdStartError):
        capability(t, 0)
    t.record_mean(0, 0.5)
    with pytest.raises(ColdStartError):
        capability_ratio(t, 0, 1)


def test_ratio_examples():
    t = CapabilityTracker.seeded({1: 0.5, 2: 1.0})
    assert capability_ratio(t, 1, 2) == 0.5
    assert capability_ratio(t, 2, 1) == 2.0
    assert capability_ratio(t, 1, 1) == 1.0
    eq = CapabilityTracker.seeded({0: 0.3, 1: 0.3})
    assert capability_ratio(eq, 0, 1) == 1.0


means = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8)


@given(means, means, st.integers(1, 6))
def test_reciprocity(a, b, k):
    t = CapabilityTracker(window_size=k)
    for p in a:
        t.record_mean(0, p)
    for p in b:
        t.record_mean(1, p)
    assert abs(capability_ratio(t, 0, 1) * capability_ratio(t, 1, 0) - 1.0) <= 1e-12
    assert capability_ratio(t, 0, 0) == 1.0


@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=8),
       st.lists(st.floats(0.05, 1.0), min_size=1, max_size=8),
       st.floats(0.1, 1.0))
def test_scale_invariance(a, b, c):
    t, u = CapabilityTracker(), CapabilityTracker()
    for agent, ps in ((0, a), (1, b)):
        for p in ps:
            t.record_mean(agent, p)
            u.record_mean(agent, c * p)
    assert capability_ratio(u, 0, 1) == pytest.approx(capability_ratio(t, 0, 1), rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 1.0), st.integers(1, 8), st.integers(1, 20))
def test_constant_fixed_point(p, k, n):
    t = CapabilityTracker(window_size=k)
    for _ in range(n):
        t.record_mean(0, p)
    assert len(t.history[0]) == min(k, n)
    assert capability(t, 0) == pytest.approx(p, abs=1e-15)


def test_snapshot_is_independent():
    t = CapabilityTracker.seeded({0: 0.4})
    s = t.snapshot()
    t.record_mean(0, 1.0)
    assert capability(s, 0) == 0.4
    assert t.state() == [{"agent": 0, "p_hat": 0.7}]
