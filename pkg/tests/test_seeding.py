import numpy as np
import pytest

from fedcl.seeding import rng_for, seed_for, seed_sequence


def test_same_keys_same_stream():
    a = rng_for(7, "local-update", 3).random(5)
    b = rng_for(7, "local-update", 3).random(5)
    assert np.array_equal(a, b)


def test_different_tags_different_streams():
    a = rng_for(7, "local-update", 3).random(5)
    b = rng_for(7, "synthetic", 3).random(5)
    c = rng_for(8, "local-update", 3).random(5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_key_order_matters():
    assert not np.array_equal(rng_for(1, 2).random(4), rng_for(2, 1).random(4))


def test_seed_for_is_stable_and_non_negative():
    s1 = seed_for(0, "node", 2)
    s2 = seed_for(0, "node", 2)
    assert s1 == s2
    assert 0 <= s1 < 2**63
    assert seed_for(0, "node", 0) != seed_for(0, "node", 1)


def test_negative_key_rejected():
    with pytest.raises(ValueError):
        seed_sequence(-1)


def test_non_int_non_str_key_rejected():
    with pytest.raises(TypeError):
        seed_sequence(1.5)
