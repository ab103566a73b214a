import numpy as np
import pytest

from ivconformal.rng import RngStream


def test_same_stream_same_draws():
    a = RngStream(42, 3).generator().standard_normal(10)
    b = RngStream(42, 3).generator().standard_normal(10)
    assert np.array_equal(a, b)


def test_different_streams_differ():
    a = RngStream(42, 0).generator().standard_normal(10)
    b = RngStream(42, 1).generator().standard_normal(10)
    c = RngStream(43, 0).generator().standard_normal(10)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_child_offsets_do_not_collide():
    """Children of distinct parents must occupy distinct stream ids."""
    seen = set()
    for stream_id in range(20):
        parent = RngStream(7, stream_id)
        for offset in range(8):
            child = parent.child(offset)
            key = (child.seed, child.stream_id)
            assert key not in seen
            seen.add(key)


def test_child_is_deterministic():
    c1 = RngStream(5, 2).child(4)
    c2 = RngStream(5, 2).child(4)
    assert c1 == c2
    assert np.array_equal(
        c1.generator().standard_normal(5), c2.generator().standard_normal(5)
    )


def test_stream_is_frozen():
    s = RngStream(1, 0)
    with pytest.raises(Exception):
        s.seed = 2
