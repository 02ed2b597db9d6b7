import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from storagebid.errors import DataError
from storagebid.features import (Normalization, WindowShape, build_inputs, build_training_set,
                                 build_window, concat_sets, first_valid_anchor,
                                 load_training_set, save_training_set)
from storagebid.market_data import series_from_arrays
from storagebid.valuation import StorageSpec, backward_induction

SPEC = StorageSpec(1.0, 2.0, 0.9, 10.0, 5)


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(11)
    n = 12 * 24 * 4
    rt = 40 + 20 * np.sin(np.arange(n) * 2 * np.pi / 288) + rng.normal(0, 3, n)
    da = 40 + rng.normal(0, 5, n // 12)
    series = series_from_arrays(rt, da)
    surface = backward_induction(series.rt_prices, SPEC, segments=100)
    return series, surface


def test_window_shape(data):
    series, surface = data
    t = first_valid_anchor(series, WindowShape.for_series(series))
    w = build_window(series, surface, t + 5)
    assert w.x.shape == (61, 62)
    assert w.y.shape == (61, 10)
    w1 = build_window(series, surface, t + 5, segments=1)
    assert w1.y.shape == (61, 1)


def test_constant_prices_give_constant_window():
    series = series_from_arrays(np.full(800, 42.0), np.full(70, 42.0))
    t = first_valid_anchor(series, WindowShape.for_series(series))
    w = build_window(series, None, t)
    assert np.all(w.x == 42.0) and w.y is None


def test_row_layout(data):
    series, _ = data
    shape = WindowShape.for_series(series)
    t = first_valid_anchor(series, shape) + 17
    x = build_inputs(series, [t], shape)[0]
    for r in (0, 1, 30, 60):
        s = t - r
        assert np.array_equal(x[r, 25:], series.rt_prices[s - 36:s + 1])
        h = series.hour_index[s]
        assert np.array_equal(x[r, :25], series.da_prices[h - 24:h + 1])


def test_hour_ahead_target(data):
    series, surface = data
    t = first_valid_anchor(series, WindowShape.for_series(series)) + 3
    w = build_window(series, surface, t, hour_shift=12)
    assert np.allclose(w.y[0], surface.downsampled(10).values[t + 13])
    w0 = build_window(series, surface, t)
    assert np.allclose(w0.y[0], surface.downsampled(10).after_step(t).values)


def test_insufficient_history_names_first_anchor(data):
    series, surface = data
    first = first_valid_anchor(series, WindowShape.for_series(series))
    with pytest.raises(DataError, match=f"t={first}"):
        build_window(series, surface, first - 1)
    build_window(series, surface, first)


def test_stride_and_range_counting(data):
    series, surface = data
    first = first_valid_anchor(series, WindowShape.for_series(series))
    ts = build_training_set(series, surface, (first, first + 100), stride=4)
    assert len(ts) == 25
    assert np.array_equal(ts.anchors, np.arange(first, first + 100, 4))
    two = build_training_set(series, surface, [(first, first + 30), (first + 200, first + 250)])
    assert len(two) == 80
    # an early start is moved up to the first valid anchor
    early = build_training_set(series, surface, (0, first + 10))
    assert early.anchors[0] == first and len(early) == 10


def test_targets_must_be_covered(data):
    series, surface = data
    with pytest.raises(DataError, match="does not cover"):
        build_training_set(series, surface, (len(series) - 5, len(series)), hour_shift=12)


def test_normalization_round_trip():
    flat = np.random.default_rng(0).normal(50, 20, (40, 7))
    flat[:, 3] = 5.0
    norm = Normalization.fit(flat)
    z = norm.apply(flat)
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12)
    assert np.max(np.abs(norm.invert(z) - flat)) <= 1e-12 * np.max(np.abs(flat))
    assert np.all(z[:, 3] == 0)


def test_concat_and_split(data):
    series, surface = data
    first = first_valid_anchor(series, WindowShape.for_series(series))
    a = build_training_set(series, surface, (first, first + 40))
    b = build_training_set(series, surface, (first + 100, first + 160))
    ab = concat_sets([a, b])
    assert len(ab) == len(a) + len(b)
    tr, va = ab.split(0.25)
    assert len(tr) == 75 and len(va) == 25
    assert tr.anchors.max() < va.anchors.min()
    shifted = build_training_set(series, surface, (first, first + 40), hour_shift=12)
    with pytest.raises(DataError):
        concat_sets([a, shifted])


def test_training_set_file_round_trip(tmp_path, data):
    series, surface = data
    first = first_valid_anchor(series, WindowShape.for_series(series))
    ts = build_training_set(series, surface, (first, first + 20), hour_shift=12, segments=1)
    save_training_set(tmp_path / "set.bin", ts)
    back = load_training_set(tmp_path / "set.bin")
    assert np.array_equal(back.x, ts.x) and np.array_equal(back.y, ts.y)
    assert np.array_equal(back.anchors, ts.anchors)
    assert back.shape == ts.shape and back.hour_shift == 12
    assert np.array_equal(back.normalization.mean, ts.normalization.mean)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(DataError):
        load_training_set(tmp_path / "bad.bin")


def test_inputs_do_not_see_the_future(data):
    series, surface = data
    shape = WindowShape.for_series(series)
    t = first_valid_anchor(series, shape) + 50
    x = build_inputs(series, [t], shape)[0]
    later = series_from_arrays(np.concatenate([series.rt_prices[:t + 1],
                                               series.rt_prices[t + 1:] + 1000.0]),
                               series.da_prices)
    assert np.array_equal(build_inputs(later, [t], shape)[0][:, 25:], x[:, 25:])


@settings(max_examples=30, deadline=None)
@given(offset=st.integers(0, 400), r=st.integers(1, 60))
def test_rt_block_is_toeplitz(data, offset, r):
    series, _ = data
    shape = WindowShape.for_series(series)
    t = first_valid_anchor(series, shape) + offset
    x = build_inputs(series, [t], shape)[0]
    rt = x[:, 25:]
    # row r shifted one column right matches row r-1
    assert np.array_equal(rt[r, 1:], rt[r - 1, :-1])
