"""Input/target windows for the value-curve predictor.

A window anchored at step ``t`` stacks ``R = window_hours * steps_per_hour + 1``
rows.  Row ``r`` describes step ``t - r``:

* DA block (``m + 1`` columns): hourly DA prices for the ``m + 1`` hours
  ending with the hour that contains ``t - r``;
* RT block (``n + 1`` columns): RT prices ``t - r - n .. t - r``.

Targets: row ``r`` of ``y`` is the value curve after step
``t - r + hour_shift``, averaged down to ``S`` segments.  Only row 0 is the
label the reference regressor learns; the other rows are kept for models that
consume the whole block.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .market_data import PriceSeries
from .valuation import ValueSurface


@dataclass(frozen=True)
class WindowShape:
    m: int = 24
    n: int = 36
    window_hours: int = 5
    steps_per_hour: int = 12

    @property
    def rows(self) -> int:
        return self.window_hours * self.steps_per_hour + 1

    @property
    def cols(self) -> int:
        return (self.m + 1) + (self.n + 1)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @classmethod
    def for_series(cls, series: PriceSeries, m=24, n=36, window_hours=5) -> "WindowShape":
        return cls(m, n, window_hours, series.steps_per_hour)


@dataclass(frozen=True)
class FeatureWindow:
    x: np.ndarray
    y: np.ndarray | None
    t: int
    hour_shift: int = 0


@dataclass(frozen=True)
class Normalization:
    """Per-feature z-score over flattened windows."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, flat: np.ndarray) -> "Normalization":
        mean = flat.mean(axis=0)
        scale = flat.std(axis=0)
        scale[scale < 1e-12] = 1.0
        return cls(mean, scale)

    def apply(self, flat: np.ndarray) -> np.ndarray:
        return (flat - self.mean) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean


@dataclass
class TrainingSet:
    x: np.ndarray  # (K, R, F) raw prices
    y: np.ndarray  # (K, R, S) target curves
    anchors: np.ndarray
    normalization: Normalization
    shape: WindowShape
    hour_shift: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.anchors)

    @property
    def segments(self) -> int:
        return self.y.shape[-1]

    def inputs(self, normalization: Normalization | None = None) -> np.ndarray:
        norm = normalization or self.normalization
        return norm.apply(self.x.reshape(len(self.x), -1))

    def targets(self) -> np.ndarray:
        return self.y[:, 0, :]

    def window(self, i: int) -> FeatureWindow:
        return FeatureWindow(self.x[i], self.y[i], int(self.anchors[i]), self.hour_shift)

    def split(self, fraction: float) -> tuple["TrainingSet", "TrainingSet"]:
        """Chronological split; the tail ``fraction`` becomes the second set."""
        cut = int(round(len(self) * (1 - fraction)))
        if not 0 < cut < len(self):
            raise DataError(f"cannot split {len(self)} windows at fraction {fraction}")
        parts = []
        for sl in (slice(0, cut), slice(cut, None)):
            parts.append(TrainingSet(self.x[sl], self.y[sl], self.anchors[sl], self.normalization,
                                     self.shape, self.hour_shift, dict(self.meta)))
        return parts[0], parts[1]


def first_valid_anchor(series: PriceSeries, shape: WindowShape) -> int:
    """Smallest anchor with enough RT and DA history for a full window."""
    lead = shape.rows - 1
    # the oldest row needs n earlier RT steps and m earlier DA hours
    need_da = int(np.searchsorted(series.hour_index, shape.m)) + lead
    return max(lead + shape.n, need_da)


def _check_anchors(series, shape, anchors):
    first = first_valid_anchor(series, shape)
    if len(anchors) == 0:
        raise DataError("no anchors requested")
    if anchors.min() < first:
        raise DataError(f"insufficient history for anchor {int(anchors.min())}: "
                        f"first valid anchor is t={first}")
    if anchors.max() >= len(series):
        raise DataError(f"anchor {int(anchors.max())} beyond series of {len(series)} steps")


def build_inputs(series: PriceSeries, anchors, shape: WindowShape) -> np.ndarray:
    """Raw input blocks ``(K, R, F)`` for the given anchors."""
    anchors = np.atleast_1d(np.asarray(anchors, dtype=np.int64))
    _check_anchors(series, shape, anchors)
    rows = np.arange(shape.rows)
    steps = anchors[:, None] - rows[None, :]  # (K, R): step described by each row
    rt_win = sliding_window_view(series.rt_prices, shape.n + 1)
    da_win = sliding_window_view(series.da_prices, shape.m + 1)
    rt_block = rt_win[steps - shape.n]
    da_block = da_win[series.hour_index[steps] - shape.m]
    return np.concatenate([da_block, rt_block], axis=-1)


def _targets(surface: ValueSurface, steps: np.ndarray, offset: int) -> np.ndarray:
    idx = steps + 1 - offset
    if idx.min() < 0 or idx.max() >= len(surface):
        raise DataError(
            f"value surface (series steps {offset}..{offset + surface.horizon - 1}) does not "
            f"cover target steps {int(steps.min())}..{int(steps.max())}")
    return surface.values[idx]


def build_window(series: PriceSeries, surface: ValueSurface | None, t: int, *,
                 m: int = 24, n: int = 36, segments: int = 10, hour_shift: int = 0,
                 window_hours: int = 5, surface_offset: int = 0) -> FeatureWindow:
    shape = WindowShape.for_series(series, m, n, window_hours)
    x = build_inputs(series, [t], shape)[0]
    y = None
    if surface is not None:
        if surface.segments != segments:
            surface = surface.downsampled(segments)
        steps = t - np.arange(shape.rows) + hour_shift
        y = _targets(surface, steps, surface_offset)
    return FeatureWindow(x, y, t, hour_shift)


def _anchor_ranges(ranges):
    if len(ranges) == 2 and all(np.isscalar(v) for v in ranges):
        return [tuple(int(v) for v in ranges)]
    return [(int(a), int(b)) for a, b in ranges]


def build_training_set(series: PriceSeries, surface: ValueSurface, ranges, *,
                       m: int = 24, n: int = 36, segments: int = 10, hour_shift: int = 0,
                       stride: int = 1, window_hours: int = 5, surface_offset: int = 0,
                       normalization: Normalization | None = None) -> TrainingSet:
    """Windows at every ``stride``-th anchor of each ``[start, stop)`` range.

    ``ranges`` is a single ``(start, stop)`` pair or a list of them.  Starts
    earlier than the first anchor with full history are moved up to it.
    Normalization is fitted on these windows unless one is passed in (use the
    training set's normalization for validation and test sets).
    """
    shape = WindowShape.for_series(series, m, n, window_hours)
    first = first_valid_anchor(series, shape)
    pieces = []
    for start, stop in _anchor_ranges(ranges):
        if stop > len(series):
            raise DataError(f"range end {stop} beyond series of {len(series)} steps")
        pieces.append(np.arange(max(start, first), stop, stride))
    anchors = np.concatenate(pieces) if pieces else np.array([], dtype=np.int64)
    if len(anchors) == 0:
        raise DataError(f"empty anchor range {ranges} (first valid anchor is t={first})")
    if surface.segments != segments:
        surface = surface.downsampled(segments)
    x = build_inputs(series, anchors, shape)
    steps = anchors[:, None] - np.arange(shape.rows)[None, :] + hour_shift
    y = _targets(surface, steps, surface_offset)
    if normalization is None:
        normalization = Normalization.fit(x.reshape(len(x), -1))
    return TrainingSet(x, y, anchors, normalization, shape, hour_shift,
                       {"zone": series.zone_id})


def concat_sets(sets: list[TrainingSet], refit: bool = True) -> TrainingSet:
    first = sets[0]
    for s in sets[1:]:
        if s.shape != first.shape or s.hour_shift != first.hour_shift or s.segments != first.segments:
            raise DataError("training sets differ in window shape, shift or segments")
    x = np.concatenate([s.x for s in sets])
    norm = Normalization.fit(x.reshape(len(x), -1)) if refit else first.normalization
    return TrainingSet(x, np.concatenate([s.y for s in sets]),
                       np.concatenate([s.anchors for s in sets]), norm, first.shape,
                       first.hour_shift, dict(first.meta))


# Flat file: magic, version byte, uint32 header length, JSON header, then
# little-endian float64 blocks in header order.  Records are row-major:
# each window's flattened x followed by its flattened y.
_SET_MAGIC = b"SBTS"
_SET_VERSION = 1


def save_training_set(path, ts: TrainingSet) -> None:
    K = len(ts)
    records = np.concatenate([ts.x.reshape(K, -1), ts.y.reshape(K, -1)], axis=1)
    header = {
        "version": _SET_VERSION,
        "windows": K,
        "x_shape": list(ts.x.shape[1:]),
        "y_shape": list(ts.y.shape[1:]),
        "hour_shift": ts.hour_shift,
        "window": [ts.shape.m, ts.shape.n, ts.shape.window_hours, ts.shape.steps_per_hour],
        "meta": ts.meta,
        "blocks": ["anchors", "norm_mean", "norm_scale", "records"],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_SET_MAGIC + struct.pack("<BI", _SET_VERSION, len(raw)) + raw)
        for block in (ts.anchors.astype("<f8"), ts.normalization.mean, ts.normalization.scale,
                      records):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_training_set(path) -> TrainingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _SET_MAGIC:
        raise DataError(f"{path}: not a training-set file")
    version, hlen = struct.unpack_from("<BI", blob, 4)
    if version > _SET_VERSION:
        raise DataError(f"{path}: unsupported training-set version {version}")
    header = json.loads(blob[9:9 + hlen])
    data = np.frombuffer(blob, dtype="<f8", offset=9 + hlen)
    K = header["windows"]
    xs, ys = tuple(header["x_shape"]), tuple(header["y_shape"])
    D = int(np.prod(xs))
    anchors = data[:K].astype(np.int64)
    mean = data[K:K + D].copy()
    scale = data[K + D:K + 2 * D].copy()
    records = data[K + 2 * D:].reshape(K, -1)
    x = records[:, :D].reshape((K,) + xs).copy()
    y = records[:, D:].reshape((K,) + ys).copy()
    m, n, wh, sph = header["window"]
    return TrainingSet(x, y, anchors, Normalization(mean, scale), WindowShape(m, n, wh, sph),
                       header["hour_shift"], header["meta"])
