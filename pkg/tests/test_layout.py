import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatcam_accel.layout import ActLayout, LayoutError, act_address, act_index, load, reshape_map, store

L = ActLayout()


def test_origin_maps_to_bank_zero():
    assert act_address(L, (4, 4, 16), 0, 0, 0) == (0, 0, 0)


def test_6x6x24_address_counts():
    shape = (6, 6, 24)
    addrs = {act_address(L, shape, h, w, c)[:2] for h, w, c in itertools.product(range(6), range(6), range(24))}
    assert L.tiles(24) == 2 and len(addrs) == 72
    per_bank = [sum(1 for b, _ in addrs if b == k) for k in range(4)]
    assert per_bank == [18, 18, 18, 18]


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 16), w=st.integers(1, 16), c=st.integers(1, 16))
def test_address_bijection(h, w, c):
    if h * w * c > 4096:
        return
    seen = set()
    for i, j, k in itertools.product(range(h), range(w), range(c)):
        a = act_address(L, (h, w, c), i, j, k)
        assert act_index(L, (h, w, c), *a) == (i, j, k)
        seen.add(a)
    assert len(seen) == h * w * c


def test_exhaustive_round_trip_5x3x17():
    shape = (5, 3, 17)
    for i, j, k in itertools.product(range(5), range(3), range(17)):
        assert act_index(L, shape, *act_address(L, shape, i, j, k)) == (i, j, k)


def test_out_of_range_index():
    with pytest.raises(LayoutError):
        act_address(L, (2, 2, 2), 2, 0, 0)
    with pytest.raises(LayoutError):
        act_index(L, (2, 2, 2), 0, 5, 0)


def test_store_load_round_trip():
    t = np.random.default_rng(0).integers(-50, 50, size=(5, 7, 21))
    assert np.array_equal(load(L, store(L, t), t.shape), t)


def test_downsample_keeps_even_positions():
    t = np.arange(6 * 6 * 3).reshape(6, 6, 3)
    m = reshape_map(L, "downsample", [t.shape], stride=2)
    out = m.apply(L, [store(L, t)])
    assert out.shape[:2] == (3, 3) and np.array_equal(out, t[::2, ::2])


def test_concat_offsets_by_channel_tiles():
    a = np.ones((3, 3, 16), int)
    b = 2 * np.ones((3, 3, 16), int)
    m = reshape_map(L, "concatenate", [a.shape, b.shape])
    assert np.array_equal(m.apply(L, [store(L, a), store(L, b)]), np.concatenate([a, b], axis=2))
    bank, addr, _ = act_address(L, (3, 3, 32), 0, 0, 16)
    assert (addr * 4 + bank) // 9 == 1  # second tensor starts at channel tile 1
    with pytest.raises(LayoutError):
        reshape_map(L, "concatenate", [(3, 3, 8), (3, 3, 16)])


def test_upsample_zero_then_downsample_is_identity():
    t = np.random.default_rng(1).normal(size=(4, 5, 20))
    up = reshape_map(L, "upsample", [t.shape], factor=2, mode="zero").apply(L, [store(L, t)])
    assert np.count_nonzero(up[1::2]) == 0
    down = reshape_map(L, "downsample", [up.shape], stride=2).apply(L, [store(L, up)])
    assert np.array_equal(down, t)


def test_upsample_duplicate_and_partition():
    t = np.arange(3 * 4 * 2).reshape(3, 4, 2)
    up = reshape_map(L, "upsample", [t.shape], factor=2).apply(L, [store(L, t)])
    assert np.array_equal(up, np.repeat(np.repeat(t, 2, 0), 2, 1))
    part = reshape_map(L, "partition", [t.shape], rows=(1, 3), cols=(0, 2)).apply(L, [store(L, t)])
    assert np.array_equal(part, t[1:3, 0:2])
    with pytest.raises(LayoutError):
        reshape_map(L, "partition", [t.shape], rows=(2, 5), cols=(0, 1))
