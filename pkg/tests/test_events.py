import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evjoint.events import (
    DegenerateSpanError,
    Event,
    EventBoundsError,
    EventParseError,
    EventSlice,
    FixedCount,
    FixedDuration,
    build_voxel_grid,
    events_to_bytes,
    parse_policy,
    predecessor_pairs,
    read_events,
    slice_events,
    write_events,
)


def random_slice(rng, n, width=16, height=12, t_end=1.0, pixels=None):
    if pixels is None:
        x = rng.integers(0, width, n)
        y = rng.integers(0, height, n)
    else:
        k = rng.integers(0, len(pixels), n)
        x, y = np.asarray(pixels)[k].T
    t = rng.uniform(0, t_end, n)
    p = rng.choice([-1, 1], n)
    return EventSlice.from_arrays(t, x, y, p, width, height, 0.0, t_end)


@st.composite
def slices(draw, max_events=60):
    seed = draw(st.integers(0, 2**31 - 1))
    n = draw(st.integers(0, max_events))
    return random_slice(np.random.default_rng(seed), n, pixels=[(1, 1), (2, 3), (5, 5), (7, 0)]
                        if draw(st.booleans()) else None)


# ---------------------------------------------------------------------------
# Formats


def test_text_line_maps_fields():
    slc = read_events(io.StringIO("# evtxt1 64 48 0 1\n0.50 10 10 1\n"), "text")
    assert slc[0] == Event(t=0.5, x=10, y=10, p=1)
    assert (slc.width, slc.height, slc.t_start, slc.t_end) == (64, 48, 0.0, 1.0)


def test_header_only_with_empty_span_is_degenerate():
    with pytest.raises(DegenerateSpanError, match="degenerate time span"):
        read_events(b"# evtxt1 64 48 0.5 0.5\n")


def test_header_only_with_valid_span_is_empty_slice():
    slc = read_events(b"# evtxt1 8 8 0 1\n")
    assert len(slc) == 0 and slc.duration == 1.0


def test_binary_three_records_round_trip_bytes():
    rng = np.random.default_rng(3)
    slc = random_slice(rng, 3)
    data = events_to_bytes(slc, "binary")
    assert len(data) == 4 + 8 + 16 + 8 + 3 * 16
    again = events_to_bytes(read_events(data), "binary")
    assert again == data


def test_binary_layout_is_little_endian_with_padding():
    slc = EventSlice.from_arrays([0.25], [3], [2], [-1], 5, 4, 0.0, 1.0)
    data = events_to_bytes(slc)
    assert data[:4] == b"EVT1"
    assert int.from_bytes(data[4:8], "little") == 5
    assert int.from_bytes(data[8:12], "little") == 4
    rec = data[36:]
    assert np.frombuffer(rec[:8], "<f8")[0] == 0.25
    assert int.from_bytes(rec[8:10], "little") == 3
    assert int.from_bytes(rec[10:12], "little") == 2
    assert np.frombuffer(rec[12:13], "i1")[0] == -1
    assert rec[13:16] == b"\0\0\0"


@given(slices())
def test_text_and_binary_round_trip(slc):
    for fmt in ("text", "binary"):
        back = read_events(events_to_bytes(slc, fmt), fmt)
        for name in "txyp":
            np.testing.assert_array_equal(getattr(back, name), getattr(slc, name))
        assert (back.t_start, back.t_end, back.shape) == (slc.t_start, slc.t_end, slc.shape)


def test_write_events_to_path(tmp_path):
    slc = random_slice(np.random.default_rng(0), 20)
    write_events(slc, tmp_path / "e.txt", "text")
    np.testing.assert_array_equal(read_events(tmp_path / "e.txt").t, slc.t)


def test_unsorted_input_is_sorted_and_out_of_span_clamped():
    slc = read_events(b"# evtxt1 8 8 0 1\n0.7 1 1 1\n0.2 2 2 -1\n1.5 3 3 1\n")
    np.testing.assert_array_equal(slc.t, [0.2, 0.7, 1.0])
    np.testing.assert_array_equal(slc.x, [2, 1, 3])


@pytest.mark.parametrize("text, line", [
    ("# evtxt1 8 8 0 1\n0.1 1 1\n", 2),
    ("# evtxt1 8 8 0 1\n0.1 1 1 1\n0.2 a 1 1\n", 3),
    ("# evtxt1 8 8 0 1\n0.1 1 1 0\n", 2),
])
def test_malformed_text_reports_line(text, line):
    with pytest.raises(EventParseError, match=f"line {line}"):
        read_events(text.encode())


def test_bad_header():
    with pytest.raises(EventParseError, match="line 1"):
        read_events(b"# nope 8 8 0 1\n")


def test_out_of_range_pixel_is_bounds_error():
    with pytest.raises(EventBoundsError):
        read_events(b"# evtxt1 8 8 0 1\n0.1 8 1 1\n")
    slc = EventSlice.from_arrays([0.1], [1], [1], [1], 8, 8, 0.0, 1.0)
    data = bytearray(events_to_bytes(slc))
    data[36 + 10:36 + 12] = (9).to_bytes(2, "little")
    with pytest.raises(EventBoundsError, match="byte 46"):
        read_events(bytes(data))


def test_truncated_binary_reports_offset():
    slc = random_slice(np.random.default_rng(0), 4)
    with pytest.raises(EventParseError, match="byte"):
        read_events(events_to_bytes(slc)[:-5])


# ---------------------------------------------------------------------------
# Slicing


def test_fixed_duration_ten_children():
    rng = np.random.default_rng(1)
    slc = random_slice(rng, 500)
    kids = slice_events(slc, FixedDuration(0.1))
    assert len(kids) == 10
    for k, c in enumerate(kids):
        assert c.t_start == pytest.approx(0.1 * k)
        assert c.t_end == pytest.approx(0.1 * (k + 1))
        assert np.all(c.t >= c.t_start)
        assert np.all(c.t < c.t_end) or k == 9
    assert sum(len(c) for c in kids) == len(slc)


def test_fixed_count_sizes():
    slc = random_slice(np.random.default_rng(2), 7)
    assert [len(c) for c in slice_events(slc, FixedCount(3))] == [3, 3, 1]


def test_empty_parent_gives_no_children():
    assert slice_events(EventSlice.empty(4, 4, 0, 1), FixedDuration(0.1)) == []


@given(slices(max_events=80), st.floats(0.03, 0.7), st.integers(1, 20))
def test_children_partition_parent(slc, dt, n):
    for policy in (FixedDuration(dt), FixedCount(n)):
        kids = slice_events(slc, policy)
        if len(slc) == 0:
            assert kids == []
            continue
        assert kids[0].t_start == slc.t_start and kids[-1].t_end == slc.t_end
        for a, b in zip(kids, kids[1:]):
            assert a.t_end == b.t_start
        np.testing.assert_array_equal(np.concatenate([c.t for c in kids]), slc.t)
        assert all(c.shape == slc.shape for c in kids)


def test_parse_policy():
    assert parse_policy("fixed_duration:0.1") == FixedDuration(0.1)
    assert parse_policy("fixed_count:5") == FixedCount(5)
    with pytest.raises(ValueError):
        parse_policy("sliding:3")
    with pytest.raises(ValueError):
        FixedDuration(0.0)


# ---------------------------------------------------------------------------
# Predecessor pairs


def test_two_events_one_pair():
    slc = EventSlice.from_arrays([0.1, 0.3], [5, 5], [5, 5], [1, 1], 8, 8, 0.0, 1.0)
    (pair,) = predecessor_pairs(slc).items()
    assert pair.index_k == 1
    assert pair.dt == pytest.approx(0.2)


def test_distinct_pixels_no_pairs():
    slc = EventSlice.from_arrays([0.1, 0.2, 0.3], [0, 1, 2], [0, 0, 0], [1, -1, 1], 4, 4, 0.0, 1.0)
    assert len(predecessor_pairs(slc)) == 0


def test_pair_count_matches_histogram():
    slc = random_slice(np.random.default_rng(5), 1000, width=10, height=10)
    hist = Counter(zip(slc.x.tolist(), slc.y.tolist()))
    assert len(predecessor_pairs(slc)) == sum(max(0, c - 1) for c in hist.values())


@given(slices())
def test_pairs_point_to_latest_earlier_event_at_same_pixel(slc):
    pairs = predecessor_pairs(slc)
    assert np.all(pairs.dt > 0)
    for k, j, dt in zip(pairs.index, pairs.prev, pairs.dt):
        assert (slc.x[k], slc.y[k]) == (slc.x[j], slc.y[j])
        assert dt == slc.t[k] - slc.t[j]
        between = (slc.x[j + 1:k] == slc.x[k]) & (slc.y[j + 1:k] == slc.y[k])
        assert not between.any()


def test_simultaneous_events_are_not_paired():
    slc = EventSlice.from_arrays([0.2, 0.2, 0.5], [1, 1, 1], [1, 1, 1], [1, 1, 1], 4, 4, 0.0, 1.0)
    pairs = predecessor_pairs(slc)
    assert len(pairs) == 1 and pairs.dt[0] == pytest.approx(0.3)


# ---------------------------------------------------------------------------
# Voxel grid


def test_voxel_event_at_start_goes_to_bin_zero():
    slc = EventSlice.from_arrays([0.0], [2], [3], [1], 5, 5, 0.0, 1.0)
    vg = build_voxel_grid(slc, bins=15)
    assert vg.data.shape == (15, 5, 5) and vg.data.dtype == np.float32
    assert vg.data[0, 3, 2] == 1.0 and vg.data.sum() == 1.0


def test_voxel_bilinear_split():
    # normalized bin coordinate 2.25 with 5 bins: t = 2.25 / 4
    slc = EventSlice.from_arrays([2.25 / 4], [1], [1], [1], 3, 3, 0.0, 1.0)
    vg = build_voxel_grid(slc, bins=5)
    assert vg.data[2, 1, 1] == pytest.approx(0.75)
    assert vg.data[3, 1, 1] == pytest.approx(0.25)


@given(slices(), st.integers(1, 20))
def test_voxel_mass_equals_signed_count(slc, bins):
    vg = build_voxel_grid(slc, bins)
    assert vg.data.sum() == pytest.approx(slc.p.sum(), rel=1e-4, abs=1e-4)


def test_slice_invariants_enforced():
    with pytest.raises(ValueError, match="sorted"):
        EventSlice(np.array([0.5, 0.1]), np.zeros(2), np.zeros(2), np.ones(2), 0.0, 1.0, 4, 4)
    with pytest.raises(ValueError, match="polarit"):
        EventSlice.from_arrays([0.1], [0], [0], [0], 4, 4, 0.0, 1.0)
    with pytest.raises(DegenerateSpanError):
        EventSlice.empty(4, 4, 1.0, 1.0)
