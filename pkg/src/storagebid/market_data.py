"""Price data ingestion, alignment and summary statistics.

Real-time (RT) prices arrive at a fixed resolution of ``resolution_minutes``
and day-ahead (DA) prices hourly.  ``align_series`` joins the two into a
:class:`PriceSeries`, where every RT step knows the DA price of the hour that
contains it.

The canonical CSV schema is ``timestamp,zone,price`` with UTC ISO-8601
timestamps.  Two-column files (``timestamp,price``) are accepted on input.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError, ParseError

log = logging.getLogger(__name__)

REALTIME = "realtime"
DAYAHEAD = "dayahead"

MAX_GAP_FRACTION = 0.01
_HOUR = np.timedelta64(3600, "s")


def _parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(ts, "s")


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


@dataclass(frozen=True)
class PriceFragment:
    """One price stream (RT or DA) for one zone on a regular time grid."""

    zone_id: str
    kind: str
    resolution_minutes: int
    times: np.ndarray  # datetime64[s], strictly increasing, constant spacing
    prices: np.ndarray
    gaps_filled: int = 0
    duplicates_dropped: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.prices)


@dataclass(frozen=True)
class PriceSeries:
    """Aligned RT and DA prices for one zone.

    ``hour_index[i]`` is the position in ``da_prices`` of the hour containing
    RT step ``i``; ``da_expanded`` is ``da_prices[hour_index]``.
    """

    zone_id: str
    resolution_minutes: int
    rt_times: np.ndarray
    rt_prices: np.ndarray
    da_times: np.ndarray
    da_prices: np.ndarray
    hour_index: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rt_prices)

    @property
    def da_expanded(self) -> np.ndarray:
        return self.da_prices[self.hour_index]

    @property
    def steps_per_hour(self) -> int:
        return 60 // self.resolution_minutes

    def slice(self, start: int, stop: int) -> "PriceSeries":
        """RT steps ``[start, stop)`` with the DA hours they touch."""
        if not 0 <= start < stop <= len(self):
            raise IndexError(f"slice [{start}, {stop}) outside series of length {len(self)}")
        h0 = int(self.hour_index[start])
        h1 = int(self.hour_index[stop - 1]) + 1
        return PriceSeries(
            zone_id=self.zone_id,
            resolution_minutes=self.resolution_minutes,
            rt_times=self.rt_times[start:stop],
            rt_prices=self.rt_prices[start:stop],
            da_times=self.da_times[h0:h1],
            da_prices=self.da_prices[h0:h1],
            hour_index=self.hour_index[start:stop] - h0,
            meta=dict(self.meta),
        )

    def index_of(self, ts) -> int:
        """First RT step at or after ``ts``."""
        return int(np.searchsorted(self.rt_times, np.datetime64(ts, "s")))


@dataclass(frozen=True)
class PriceStats:
    negative_count: int
    std_dev: float
    mean: float
    min: float
    max: float
    count: int


def _check_resolution(resolution_minutes: int) -> None:
    if resolution_minutes <= 0 or 60 % resolution_minutes != 0:
        raise DataError(f"resolution must divide 60 minutes, got {resolution_minutes}")


def _read_rows(path: Path, zone: str):
    """Yield ``(line_number, timestamp, price)`` for rows of ``zone``."""
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() in ("timestamp", "time", "datetime"):
                continue
            if len(row) == 3:
                ts_text, row_zone, price_text = row
                if row_zone.strip() != zone:
                    continue
            elif len(row) == 2:
                ts_text, price_text = row
            else:
                raise ParseError(f"expected 2 or 3 columns, got {len(row)}", path, lineno)
            try:
                ts = _parse_timestamp(ts_text)
            except ValueError:
                raise ParseError(f"bad timestamp {ts_text!r}", path, lineno) from None
            try:
                price = float(price_text)
            except ValueError:
                raise ParseError(f"bad price {price_text!r}", path, lineno) from None
            if not np.isfinite(price):
                raise ParseError(f"non-finite price {price_text!r}", path, lineno)
            yield lineno, ts, price


def regularize(times, prices, resolution_minutes: int, *, zone_id: str = "",
               kind: str = REALTIME, max_gap_fraction: float = MAX_GAP_FRACTION,
               source: str = "") -> PriceFragment:
    """Sort, de-duplicate and forward-fill a raw stream onto its time grid."""
    _check_resolution(resolution_minutes)
    times = np.asarray(times, dtype="datetime64[s]")
    prices = np.asarray(prices, dtype=float)
    if len(times) == 0:
        raise DataError("no data rows" + (f" in {source}" if source else ""))

    order = np.argsort(times, kind="stable")
    times, prices = times[order], prices[order]
    keep = np.ones(len(times), dtype=bool)
    keep[1:] = times[1:] != times[:-1]
    duplicates = int((~keep).sum())
    times, prices = times[keep], prices[keep]

    step = np.timedelta64(resolution_minutes * 60, "s")
    offsets = (times - times[0]) / step
    if not np.all(offsets == np.round(offsets)):
        bad = int(np.argmax(offsets != np.round(offsets)))
        raise AlignmentError(
            f"timestamp {format_timestamp(times[bad])} is off the {resolution_minutes}-minute grid"
        )
    slots = offsets.astype(np.int64)
    n_slots = int(slots[-1]) + 1
    gaps = n_slots - len(slots)
    if gaps > max_gap_fraction * n_slots:
        raise DataError(
            f"{gaps} missing slots out of {n_slots} exceeds {max_gap_fraction:.0%} gap limit"
        )
    filled = np.empty(n_slots)
    # forward fill: each slot takes the last observed price at or before it
    last = np.searchsorted(slots, np.arange(n_slots), side="right") - 1
    filled[:] = prices[last]
    grid = times[0] + np.arange(n_slots) * step
    if gaps:
        log.info("%s %s: forward-filled %d missing slots", zone_id, kind, gaps)
    return PriceFragment(zone_id, kind, resolution_minutes, grid, filled,
                         gaps_filled=gaps, duplicates_dropped=duplicates)


def load_price_csv(path, kind: str, zone: str, resolution_minutes: int | None = None,
                   max_gap_fraction: float = MAX_GAP_FRACTION) -> PriceFragment:
    """Load one price stream for ``zone`` from a CSV file.

    Day-ahead files are always hourly.  Real-time files default to 5-minute
    resolution; the resolution is never inferred from the data.
    """
    if kind not in (REALTIME, DAYAHEAD):
        raise ValueError(f"kind must be {REALTIME!r} or {DAYAHEAD!r}, got {kind!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    if kind == DAYAHEAD:
        resolution_minutes = 60
    elif resolution_minutes is None:
        resolution_minutes = 5
    rows = list(_read_rows(path, zone))
    if not rows:
        raise DataError(f"{path}: no data rows")
    _, times, prices = zip(*rows)
    return regularize(times, prices, resolution_minutes, zone_id=zone, kind=kind,
                      max_gap_fraction=max_gap_fraction, source=str(path))


def write_price_csv(path, fragment: PriceFragment) -> None:
    """Write ``fragment`` in the canonical ``timestamp,zone,price`` schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "zone", "price"])
        for ts, price in zip(fragment.times, fragment.prices):
            writer.writerow([format_timestamp(ts), fragment.zone_id, repr(float(price))])


def synthesize_dayahead(rt: PriceFragment, window_hours: int = 24) -> PriceFragment:
    """Stand-in DA stream for markets without a day-ahead product.

    Hour ``H`` gets the mean RT price over the trailing ``window_hours`` hours
    before ``H`` (fewer at the start of the series; the very first hour uses
    the first RT price).
    """
    hours = rt.times.astype("datetime64[h]")
    uniq, inverse = np.unique(hours, return_inverse=True)
    sums = np.bincount(inverse, weights=rt.prices)
    counts = np.bincount(inverse)
    csum = np.concatenate([[0.0], np.cumsum(sums)])
    ccount = np.concatenate([[0], np.cumsum(counts)])
    idx = np.arange(len(uniq))
    lo = np.maximum(idx - window_hours, 0)
    total = csum[idx] - csum[lo]
    n = ccount[idx] - ccount[lo]
    da = np.where(n > 0, total / np.maximum(n, 1), rt.prices[0])
    # the RT grid is regular, so every hour between first and last is present
    frag = PriceFragment(rt.zone_id, DAYAHEAD, 60, uniq.astype("datetime64[s]"), da,
                         meta={"synthetic": True, "window_hours": window_hours})
    return frag


def align_series(rt: PriceFragment, da: PriceFragment) -> PriceSeries:
    """Join RT and hourly DA streams, trimmed to their common time range."""
    if da.resolution_minutes != 60:
        raise AlignmentError("day-ahead fragment must be hourly")
    _check_resolution(rt.resolution_minutes)
    rt_hours = rt.times.astype("datetime64[h]").astype("datetime64[s]")
    da_pos = ((rt_hours - da.times[0]) / _HOUR).astype(np.int64)
    inside = (da_pos >= 0) & (da_pos < len(da))
    if not inside.any():
        raise AlignmentError(
            f"no overlap between real-time [{format_timestamp(rt.times[0])}, "
            f"{format_timestamp(rt.times[-1])}] and day-ahead "
            f"[{format_timestamp(da.times[0])}, {format_timestamp(da.times[-1])}]"
        )
    first = int(np.argmax(inside))
    last = len(inside) - int(np.argmax(inside[::-1]))
    pos = da_pos[first:last]
    h0, h1 = int(pos[0]), int(pos[-1]) + 1
    meta = {
        "rt_gaps_filled": rt.gaps_filled,
        "da_gaps_filled": da.gaps_filled,
        "da_synthetic": bool(da.meta.get("synthetic", False)),
    }
    return PriceSeries(
        zone_id=rt.zone_id,
        resolution_minutes=rt.resolution_minutes,
        rt_times=rt.times[first:last],
        rt_prices=rt.prices[first:last],
        da_times=da.times[h0:h1],
        da_prices=da.prices[h0:h1],
        hour_index=pos - h0,
        meta=meta,
    )


def price_stats(series: PriceSeries | np.ndarray) -> PriceStats:
    prices = series.rt_prices if isinstance(series, PriceSeries) else np.asarray(series, float)
    if len(prices) == 0:
        raise DataError("price_stats needs a nonempty series")
    return PriceStats(
        negative_count=int((prices < 0).sum()),
        std_dev=float(prices.std()),
        mean=float(prices.mean()),
        min=float(prices.min()),
        max=float(prices.max()),
        count=len(prices),
    )


def format_stats_table(rows: dict[str, PriceStats]) -> str:
    lines = [f"{'Zone':<12}{'Negative #':>12}{'STD':>10}{'Mean':>10}{'Min':>10}{'Max':>10}"]
    for zone, s in rows.items():
        lines.append(f"{zone:<12}{s.negative_count:>12d}{s.std_dev:>10.2f}{s.mean:>10.2f}"
                     f"{s.min:>10.2f}{s.max:>10.2f}")
    return "\n".join(lines)


def save_bundle(path, series: PriceSeries) -> None:
    """Persist an aligned series as a compressed ``.npz`` bundle."""
    np.savez_compressed(
        path,
        zone_id=np.array(series.zone_id),
        resolution_minutes=np.array(series.resolution_minutes),
        rt_times=series.rt_times.astype(np.int64),
        rt_prices=series.rt_prices,
        da_times=series.da_times.astype(np.int64),
        da_prices=series.da_prices,
        hour_index=series.hour_index,
        meta=np.array(json.dumps(series.meta, sort_keys=True)),
    )


def load_bundle(path) -> PriceSeries:
    try:
        with np.load(path, allow_pickle=False) as z:
            return PriceSeries(
                zone_id=str(z["zone_id"]),
                resolution_minutes=int(z["resolution_minutes"]),
                rt_times=z["rt_times"].astype("datetime64[s]"),
                rt_prices=z["rt_prices"],
                da_times=z["da_times"].astype("datetime64[s]"),
                da_prices=z["da_prices"],
                hour_index=z["hour_index"],
                meta=json.loads(str(z["meta"])),
            )
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: not a price bundle ({exc})") from exc


def series_from_arrays(rt_prices, da_hourly=None, *, resolution_minutes: int = 5,
                       start="2019-01-01T00:00:00", zone_id: str = "TEST") -> PriceSeries:
    """Build an aligned series directly from arrays (tests, synthetic data).

    Without ``da_hourly`` the DA stream is synthesized from the RT prices.
    """
    _check_resolution(resolution_minutes)
    rt_prices = np.asarray(rt_prices, dtype=float)
    step = np.timedelta64(resolution_minutes * 60, "s")
    times = np.datetime64(start, "s") + np.arange(len(rt_prices)) * step
    rt = PriceFragment(zone_id, REALTIME, resolution_minutes, times, rt_prices)
    if da_hourly is None:
        da = synthesize_dayahead(rt)
    else:
        da_hourly = np.asarray(da_hourly, dtype=float)
        t0 = times[0].astype("datetime64[h]").astype("datetime64[s]")
        da = PriceFragment(zone_id, DAYAHEAD, 60, t0 + np.arange(len(da_hourly)) * _HOUR, da_hourly)
    return align_series(rt, da)
