import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from storagebid.errors import AlignmentError, DataError, ParseError
from storagebid.market_data import (DAYAHEAD, REALTIME, PriceFragment, align_series,
                                    format_stats_table, load_bundle, load_price_csv, price_stats,
                                    regularize, save_bundle, series_from_arrays,
                                    synthesize_dayahead, write_price_csv)

T0 = np.datetime64("2019-01-01T00:00:00", "s")


def _write_rows(path, times, prices, zone="NYC"):
    with open(path, "w") as fh:
        fh.write("timestamp,zone,price\n")
        for t, p in zip(times, prices):
            fh.write(f"{t}Z,{zone},{p}\n")


def _grid(n, minutes):
    return T0 + np.arange(n) * np.timedelta64(minutes * 60, "s")


def _frag(prices, minutes, kind=REALTIME):
    return PriceFragment("Z", kind, minutes, _grid(len(prices), minutes), np.asarray(prices, float))


def test_year_of_five_minute_rows(tmp_path):
    n = 365 * 288
    path = tmp_path / "rt.csv"
    _write_rows(path, _grid(n, 5), np.round(np.linspace(-5, 90, n), 3))
    frag = load_price_csv(path, REALTIME, "NYC", 5)
    assert len(frag) == 105_120
    assert frag.gaps_filled == 0


def test_empty_file(tmp_path):
    path = tmp_path / "rt.csv"
    path.write_text("timestamp,zone,price\n")
    with pytest.raises(DataError, match="no data rows"):
        load_price_csv(path, REALTIME, "NYC")


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_price_csv(tmp_path / "nope.csv", REALTIME, "NYC")


def test_single_gap_is_forward_filled(tmp_path):
    times = _grid(200, 5)
    prices = np.arange(200.0)
    keep = np.ones(200, bool)
    keep[57] = False
    path = tmp_path / "rt.csv"
    _write_rows(path, times[keep], prices[keep])
    frag = load_price_csv(path, REALTIME, "NYC", 5)
    assert frag.gaps_filled == 1
    assert len(frag) == 200
    assert frag.prices[57] == 56.0
    assert frag.times[57] == times[57]


def test_too_many_gaps_rejected():
    times = _grid(100, 5)[::2]
    with pytest.raises(DataError, match="gap limit"):
        regularize(times, np.ones(len(times)), 5)


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "rt.csv"
    path.write_text("timestamp,zone,price\n2019-01-01T00:00:00Z,NYC,10\n"
                    "2019-01-01T00:05:00Z,NYC,abc\n")
    with pytest.raises(ParseError) as info:
        load_price_csv(path, REALTIME, "NYC")
    assert info.value.line == 3
    assert ":3:" in str(info.value)


def test_bad_timestamp_and_column_count(tmp_path):
    path = tmp_path / "rt.csv"
    path.write_text("yesterday,NYC,10\n")
    with pytest.raises(ParseError, match="bad timestamp"):
        load_price_csv(path, REALTIME, "NYC")
    path.write_text("2019-01-01T00:00:00Z,NYC,10,extra\n")
    with pytest.raises(ParseError, match="columns"):
        load_price_csv(path, REALTIME, "NYC")


def test_other_zones_are_skipped_and_duplicates_dropped(tmp_path):
    path = tmp_path / "rt.csv"
    path.write_text("timestamp,zone,price\n"
                    "2019-01-01T00:00:00Z,NYC,1\n2019-01-01T00:00:00Z,WEST,99\n"
                    "2019-01-01T00:05:00Z,NYC,2\n2019-01-01T00:05:00Z,NYC,3\n")
    frag = load_price_csv(path, REALTIME, "NYC")
    assert frag.prices.tolist() == [1.0, 2.0]
    assert frag.duplicates_dropped == 1


def test_off_grid_timestamp():
    times = np.array([T0, T0 + np.timedelta64(7 * 60, "s")])
    with pytest.raises(AlignmentError):
        regularize(times, [1.0, 2.0], 5)


def test_resolution_must_divide_hour():
    with pytest.raises(DataError):
        regularize([T0], [1.0], 7)


def test_align_five_minute_repeats_hour():
    rt = _frag(np.arange(24.0), 5)
    da = _frag([40.0, 50.0], 60, DAYAHEAD)
    s = align_series(rt, da)
    assert np.array_equal(s.da_expanded[:12], np.full(12, 40.0))
    assert np.array_equal(s.da_expanded[12:], np.full(12, 50.0))


def test_align_hourly_is_identity():
    da = _frag([40.0, 50.0, 45.0], 60, DAYAHEAD)
    s = align_series(_frag([1.0, 2.0, 3.0], 60), da)
    assert np.array_equal(s.da_expanded, [40.0, 50.0, 45.0])
    assert np.array_equal(s.hour_index, [0, 1, 2])


def test_align_fifteen_minutes():
    s = align_series(_frag(np.zeros(8), 15), _frag([40.0, 60.0], 60, DAYAHEAD))
    assert s.da_expanded.tolist() == [40.0] * 4 + [60.0] * 4


def test_align_trims_to_overlap_and_rejects_disjoint():
    rt = _frag(np.arange(36.0), 5)  # three hours
    da = PriceFragment("Z", DAYAHEAD, 60, _grid(2, 60) + np.timedelta64(3600, "s"),
                       np.array([7.0, 8.0]))
    s = align_series(rt, da)
    assert len(s) == 24 and s.rt_prices[0] == 12.0
    far = PriceFragment("Z", DAYAHEAD, 60, _grid(1, 60) + np.timedelta64(30, "D"), np.array([1.0]))
    with pytest.raises(AlignmentError, match="no overlap"):
        align_series(rt, far)


def test_stats_examples():
    s = price_stats(np.full(10, 30.0))
    assert s.std_dev == 0.0 and s.negative_count == 0
    s = price_stats(np.array([-1.0, 1.0]))
    assert s.negative_count == 1 and s.std_dev == 1.0
    table = format_stats_table({"A": s})
    assert table.splitlines()[1].split()[:3] == ["A", "1", "1.00"]
    with pytest.raises(DataError):
        price_stats(np.array([]))


def test_synthetic_dayahead_is_trailing_mean():
    rt = _frag(np.repeat([10.0, 20.0, 30.0], 12), 5)
    da = synthesize_dayahead(rt, window_hours=2)
    assert da.prices.tolist() == [10.0, 10.0, 15.0]


def test_csv_round_trip(tmp_path):
    frag = _frag(np.random.default_rng(0).normal(30, 10, 50), 5)
    write_price_csv(tmp_path / "p.csv", frag)
    back = load_price_csv(tmp_path / "p.csv", REALTIME, "Z", 5)
    assert np.array_equal(back.prices, frag.prices)
    assert np.array_equal(back.times, frag.times)


def test_bundle_round_trip(tmp_path):
    s = series_from_arrays(np.arange(48.0), resolution_minutes=15)
    save_bundle(tmp_path / "b.npz", s)
    back = load_bundle(tmp_path / "b.npz")
    for name in ("rt_times", "rt_prices", "da_times", "da_prices", "hour_index"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    assert back.resolution_minutes == 15 and back.meta == s.meta


def test_corrupt_bundle(tmp_path):
    (tmp_path / "b.npz").write_bytes(b"garbage")
    with pytest.raises(DataError):
        load_bundle(tmp_path / "b.npz")


def test_slice_keeps_alignment():
    s = series_from_arrays(np.arange(60.0), np.arange(5.0) * 10)
    part = s.slice(13, 40)
    assert np.array_equal(part.da_expanded, s.da_expanded[13:40])
    with pytest.raises(IndexError):
        s.slice(10, 10)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 400), drop=st.data())
def test_regularize_fills_every_slot(n, drop):
    times = _grid(n, 5)
    prices = np.arange(n, dtype=float)
    k = drop.draw(st.integers(0, n // 100))
    holes = drop.draw(st.lists(st.integers(1, n - 2), min_size=k, max_size=k, unique=True)) if n > 2 else []
    keep = np.ones(n, bool)
    keep[holes] = False
    frag = regularize(times[keep], prices[keep], 5)
    assert len(frag) == n and frag.gaps_filled == len(holes)
    assert np.all(np.diff(frag.prices) >= 0)  # forward fill never invents larger values
    assert np.array_equal(frag.prices[keep], prices[keep])
