import random

import pytest

from weakmvc.sim.single import binary_inputs, measure_termination, proposal_inputs, run_slots
from weakmvc.types import BinValue


def test_unanimous_binary_stage_takes_one_phase():
    r = measure_termination(200, "unanimous", 1)
    assert r.mean_rounds == 3.0 and r.std_rounds == 0.0
    assert r.cdf[0] == 1.0 and r.capped == 0


def test_cdf_is_monotone_and_complete():
    r = measure_termination(500, "worst", 3)
    assert all(a <= b for a, b in zip(r.cdf, r.cdf[1:]))
    assert r.cdf[-1] == 1.0
    assert sum(r.phase_histogram.values()) == 500
    assert r.mean_rounds == pytest.approx(sum((2 * p + 1) * c for p, c in r.phase_histogram.items()) / 500)


def test_measurement_is_reproducible():
    a = measure_termination(300, "worst", 9)
    b = measure_termination(300, "worst", 9)
    assert a == b


def test_worst_split_is_as_even_as_possible():
    rng = random.Random(0)
    for n in (3, 4, 5, 7):
        vals = binary_inputs("worst", n, rng)
        assert vals.count(BinValue.ZERO) == n // 2
    assert binary_inputs("011", 3, rng) == [BinValue.ZERO, BinValue.ONE, BinValue.ONE]
    with pytest.raises(ValueError):
        binary_inputs("0110", 3, rng)


def test_proposal_patterns():
    u = proposal_inputs("unanimous", 3, 4)
    d = proposal_inputs("distinct", 3, 4)
    assert len(set(u)) == 1 and len(set(d)) == 3
    b = proposal_inputs("BBC", 3, 4)
    assert b[0] == b[1] != b[2]


def test_run_slots_reports_fast_path():
    slots = run_slots(5, 2, "unanimous", 50, 1)
    assert all(s.message_delays == 3 and s.fast_path and s.decision_kind == "Agreed" for s in slots)


@pytest.mark.parametrize("n,f", [(4, 1), (5, 2), (7, 3)])
def test_larger_clusters_take_three_delays_without_jitter(n, f):
    assert all(s.message_delays == 3 for s in run_slots(n, f, "unanimous", 300, 2, jitter_mean_us=0))


def test_jitter_only_adds_the_adoption_hop():
    slots = run_slots(5, 2, "unanimous", 1000, 2)
    assert {s.message_delays for s in slots} == {3, 4}
    assert all(s.decision_kind == "Agreed" and s.phases_used == 1 for s in slots)
