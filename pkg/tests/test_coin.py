import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakmvc.coin import CommonCoin, coin_flip, derive_seed
from weakmvc.types import BinValue


def test_coin_is_balanced():
    ones = sum(coin_flip(slot, 0, phase) for slot in range(1, 201) for phase in range(1, 51))
    assert 0.45 <= ones / 10_000 <= 0.55


def test_coin_depends_on_every_input():
    base = [coin_flip(1, 0, p, 7) for p in range(1, 65)]
    assert base != [coin_flip(2, 0, p, 7) for p in range(1, 65)]
    assert base != [coin_flip(1, 1, p, 7) for p in range(1, 65)]
    assert base != [coin_flip(1, 0, p, 8) for p in range(1, 65)]


def test_derived_seeds_do_not_collide():
    seeds = {derive_seed(s, slot, e) for s in range(4) for slot in range(500) for e in range(5)}
    assert len(seeds) == 4 * 500 * 5


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(0, 2**32 - 1), st.integers(1, 10_000))
def test_every_replica_sees_the_same_flip(seed, slot, epoch, phase):
    a = CommonCoin.for_slot(slot, epoch, seed).flip(phase)
    b = CommonCoin.for_slot(slot, epoch, seed).flip(phase)
    assert a is b and isinstance(a, BinValue)


def test_phase_zero_has_no_coin():
    with pytest.raises(ValueError):
        CommonCoin(1).flip(0)
