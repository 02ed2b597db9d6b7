"""Storage dispatch: price response, price-taker bid clearing, and the
arbitrage simulation loop over a test horizon.

Ties resolve to inaction: a segment is dispatched only when the price is
strictly better than its threshold.  SoC values within ``SOC_TOL`` MWh of a
breakpoint count as sitting on it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .bidding import BidCurve, make_bids, segment_edges
from .errors import ConfigError, DataError
from .valuation import (DEFAULT_SEGMENTS, INFEASIBLE, StorageSpec, ValueCurve, ValueSurface,
                        backward_induction)

SOC_TOL = 1e-9


@dataclass(frozen=True)
class Mode:
    name: str
    bidding: bool  # hour-ahead bids (True) or price response (False)
    segments: int

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.upper().replace("_", "-")
        if "-" not in key:
            key = key[:2] + "-" + key[2:]
        if key in MODES:
            return MODES[key]
        kind, _, seg = key.partition("-")
        # any segment count is allowed, e.g. PR-1000 for full-resolution curves
        if kind in ("PR", "HA") and seg.isdigit() and int(seg) > 0:
            return cls(f"{kind}-{int(seg)}", kind == "HA", int(seg))
        raise ConfigError(f"unknown mode {text!r}; expected PR-<J> or HA-<J>, "
                          f"e.g. {sorted(MODES)}")


MODES = {
    "PR-1": Mode("PR-1", False, 1),
    "PR-10": Mode("PR-10", False, 10),
    "HA-1": Mode("HA-1", True, 1),
    "HA-10": Mode("HA-10", True, 10),
}


@dataclass(frozen=True)
class DispatchRecord:
    t: int
    price: float
    p: float
    b: float
    soc: float
    revenue: float


def _settle(e_prev: float, e_new: float, spec: StorageSpec) -> tuple[float, float, float]:
    eta = spec.efficiency
    if e_new < e_prev:
        return min((e_prev - e_new) * eta, spec.p_step), 0.0, e_new
    if e_new > e_prev:
        return 0.0, min((e_new - e_prev) / eta, spec.p_step), e_new
    return 0.0, 0.0, e_prev


def _check_soc(e_prev: float, spec: StorageSpec) -> None:
    if not -SOC_TOL <= e_prev <= spec.energy_mwh + SOC_TOL:
        raise ValueError(f"SoC {e_prev} outside [0, {spec.energy_mwh}]")


def single_period_dispatch(q_hat: ValueCurve, price: float, e_prev: float,
                           spec: StorageSpec) -> tuple[float, float, float]:
    """Optimal one-step action against a concave value-to-go.

    The marginal MWh at the top of the stored energy is sold while
    ``price > [q/eta + c]^+`` for its segment; the next MWh above the current
    SoC is bought while ``price < q*eta``.  Since ``q`` is non-increasing the
    profitable segments form a contiguous band next to ``e_prev``, bounded by
    the per-step energy limit.

    Returns:
        ``(p, b, e)``: energy discharged, energy charged, SoC after the step.
    """
    _check_soc(e_prev, spec)
    if not q_hat.is_monotone():
        raise ValueError("q_hat must be non-increasing over SoC")
    q = q_hat.values
    eta, c = spec.efficiency, spec.discharge_cost
    edges = segment_edges(spec.energy_mwh, len(q))

    if price > 0:
        sell = price > np.maximum(q / eta + c, 0.0)
        if sell.any():
            floor = edges[int(np.argmax(sell))]
            if e_prev > floor + SOC_TOL:
                return _settle(e_prev, max(floor, e_prev - spec.p_step / eta), spec)
    buy = price < q * eta
    ceiling = edges[int(buy.sum())]
    if e_prev < ceiling - SOC_TOL:
        return _settle(e_prev, min(ceiling, e_prev + spec.p_step * eta), spec)
    return 0.0, 0.0, e_prev


def clear_bids(bids: BidCurve, price: float, e_prev: float,
               spec: StorageSpec) -> tuple[float, float, float]:
    """Price-taker clearing of segment bids at a realized price.

    Each segment holds at most ``E_j - E_{j-1}`` MWh and is filled from the
    bottom.  In-the-money segments clear in order of profitability (cheapest
    discharge bid first, highest charge bid first) until the per-step energy
    bound binds.
    """
    _check_soc(e_prev, spec)
    if not bids.is_monotone():
        raise ValueError("bids must be non-increasing across SoC segments")
    lo, hi = bids.breakpoints[:-1], bids.breakpoints[1:]
    J = bids.segments

    if price > 0:
        in_money = [j for j in range(J)
                    if price > max(bids.discharge_bids[j], 0.0) and e_prev > lo[j] + SOC_TOL]
        if in_money:
            limit = e_prev - spec.p_step / spec.efficiency
            level = e_prev
            for j in sorted(in_money, key=lambda j: (bids.discharge_bids[j], -j)):
                level = max(lo[j], limit)
                if level > lo[j]:
                    break
            return _settle(e_prev, level, spec)

    in_money = [j for j in range(J) if price < bids.charge_bids[j] and e_prev < hi[j] - SOC_TOL]
    if in_money:
        limit = e_prev + spec.p_step * spec.efficiency
        level = e_prev
        for j in sorted(in_money, key=lambda j: (-bids.charge_bids[j], j)):
            level = min(hi[j], limit)
            if level < hi[j]:
                break
        return _settle(e_prev, level, spec)
    return 0.0, 0.0, e_prev


class CurveSource(Protocol):
    """Anything that predicts value curves for dispatch.

    ``predict(series, anchors)`` returns an array ``(len(anchors), segments)``
    of non-increasing curves for the value after step ``anchor + hour_shift``,
    using only prices up to and including ``anchor``.
    """

    segments: int
    hour_shift: int

    def predict(self, series, anchors: np.ndarray) -> np.ndarray: ...


@dataclass
class SurfaceOracle:
    """Exact curves read off a value surface (perfect prediction)."""

    surface: ValueSurface
    segments: int
    hour_shift: int = 0
    offset: int = 0  # series index of the surface's first price

    def __post_init__(self):
        self._values = self.surface.downsampled(self.segments).values

    def predict(self, series, anchors):
        idx = np.asarray(anchors) + self.hour_shift + 1 - self.offset
        if idx.min() < 0 or idx.max() >= len(self._values):
            raise DataError("surface does not cover the requested anchors")
        return self._values[idx]


@dataclass
class ConstantSource:
    value: float
    segments: int
    hour_shift: int = 0

    def predict(self, series, anchors):
        return np.full((len(anchors), self.segments), float(self.value))


@dataclass
class SimulationResult:
    mode: str
    spec: StorageSpec
    t: np.ndarray
    times: np.ndarray
    price: np.ndarray
    p: np.ndarray
    b: np.ndarray
    soc: np.ndarray
    revenue: np.ndarray
    initial_soc: float
    meta: dict = field(default_factory=dict)

    @property
    def total_profit(self) -> float:
        return float(self.revenue.sum())

    @property
    def accumulated_profit(self) -> np.ndarray:
        return np.cumsum(self.revenue)

    def monthly_profit(self) -> dict[str, float]:
        months = self.times.astype("datetime64[M]")
        out: dict[str, float] = {}
        for month in np.unique(months):
            out[str(month)] = float(self.revenue[months == month].sum())
        return out

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield self.record(i)

    def record(self, i: int) -> DispatchRecord:
        return DispatchRecord(int(self.t[i]), float(self.price[i]), float(self.p[i]),
                              float(self.b[i]), float(self.soc[i]), float(self.revenue[i]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "price", "p", "b", "soc", "revenue"])
            for i in range(len(self.t)):
                w.writerow([int(self.t[i]), repr(float(self.price[i])), repr(float(self.p[i])),
                            repr(float(self.b[i])), repr(float(self.soc[i])),
                            repr(float(self.revenue[i]))])

    def write_monthly_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["month", "profit", "accumulated"])
            total = 0.0
            for month, profit in self.monthly_profit().items():
                total += profit
                w.writerow([month, f"{profit:.6f}", f"{total:.6f}"])


def _steps_and_times(series, start, stop):
    prices = np.asarray(getattr(series, "rt_prices", series), dtype=float)
    stop = len(prices) if stop is None else stop
    if not 0 <= start < stop <= len(prices):
        raise DataError(f"simulation range [{start}, {stop}) outside series of {len(prices)} steps")
    times = getattr(series, "rt_times", None)
    if times is None:
        times = np.datetime64("2000-01-01T00:00:00") + np.arange(len(prices)) * np.timedelta64(1, "h")
    return prices, stop, times


def _run(mode_name, spec, prices, times, start, stop, e0, step_fn):
    n = stop - start
    p = np.zeros(n)
    b = np.zeros(n)
    soc = np.zeros(n)
    e = e0
    for i in range(n):
        p[i], b[i], e = step_fn(i, start + i, prices[start + i], e)
        soc[i] = e
    lam = prices[start:stop]
    revenue = lam * (p - b) - spec.discharge_cost * p
    return SimulationResult(mode_name, spec, np.arange(start, stop), times[start:stop], lam.copy(),
                            p, b, soc, revenue, e0)


def hour_tops(series, start: int, stop: int) -> list[tuple[int, int]]:
    """``(first, last+1)`` step ranges of each clock hour within ``[start, stop)``."""
    if hasattr(series, "hour_index"):
        hours = np.asarray(series.hour_index[start:stop])
    else:
        per_hour = 60 // getattr(series, "resolution_minutes", 60)
        hours = np.arange(start, stop) // per_hour
    cuts = np.flatnonzero(np.diff(hours)) + 1
    bounds = np.concatenate([[0], cuts, [len(hours)]]) + start
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def simulate(series, spec: StorageSpec, mode: Mode | str, source: CurveSource, *,
             start: int = 0, stop: int | None = None,
             initial_soc_fraction: float = 0.5) -> SimulationResult:
    """Run the arbitrage loop over ``[start, stop)``.

    Price-response modes predict a curve from data through step ``t`` and
    solve the single-period problem after seeing the price.  Hour-ahead modes
    predict one hour early, turn the curve into bids at the top of the prior
    hour, and hold those bids for every clearing in the hour.  SoC carries
    across steps; profit counts only steps inside the range.
    """
    mode = Mode.parse(mode) if isinstance(mode, str) else mode
    prices, stop, times = _steps_and_times(series, start, stop)
    per_hour = 60 // spec.resolution_minutes
    expected_shift = per_hour if mode.bidding else 0
    if source.segments != mode.segments:
        raise ConfigError(f"{mode.name} needs {mode.segments}-segment curves, "
                          f"predictor gives {source.segments}")
    if source.hour_shift != expected_shift:
        raise ConfigError(f"{mode.name} needs hour_shift {expected_shift}, "
                          f"predictor has {source.hour_shift}")
    e0 = initial_soc_fraction * spec.energy_mwh
    E = spec.energy_mwh

    if not mode.bidding:
        anchors = np.arange(start, stop)
        curves = source.predict(series, anchors)

        def step(i, t, lam, e):
            return single_period_dispatch(ValueCurve(t + 1, curves[i], E), lam, e, spec)
    else:
        blocks = hour_tops(series, start, stop)
        anchors = np.array([first - per_hour for first, _ in blocks])
        curves = source.predict(series, anchors)
        bid_of_step = np.empty(stop - start, dtype=np.int64)
        bids = []
        for k, (first, last) in enumerate(blocks):
            bids.append(make_bids(ValueCurve(first + 1, curves[k], E), spec))
            bid_of_step[first - start:last - start] = k

        def step(i, t, lam, e):
            return clear_bids(bids[bid_of_step[i]], lam, e, spec)

    result = _run(mode.name, spec, prices, times, start, stop, e0, step)
    return result


def perfect_foresight(series, spec: StorageSpec, *, start: int = 0, stop: int | None = None,
                      initial_soc_fraction: float = 0.5, segments: int = DEFAULT_SEGMENTS,
                      q_terminal=None, boundary: str = INFEASIBLE,
                      surface: ValueSurface | None = None) -> SimulationResult:
    """Dispatch against exact value curves computed from the realized prices."""
    prices, stop, times = _steps_and_times(series, start, stop)
    E = spec.energy_mwh
    horizon = stop - start
    if surface is None and horizon * segments > MAX_SURFACE_CELLS:
        return _perfect_foresight_chunked(prices, times, spec, start, stop, initial_soc_fraction,
                                          segments, q_terminal, boundary)
    if surface is None:
        surface = backward_induction(prices[start:stop], spec, q_terminal,
                                     segments=segments, boundary=boundary)
    if surface.horizon != horizon:
        raise DataError("surface horizon does not match the simulation range")

    def step(i, t, lam, e):
        return single_period_dispatch(surface.after_step(i), lam, e, spec)

    result = _run("PF", spec, prices, times, start, stop, initial_soc_fraction * E, step)
    result.meta["surface"] = surface
    return result


MAX_SURFACE_CELLS = 20_000_000  # 160 MB of float64 curves


def _perfect_foresight_chunked(prices, times, spec, start, stop, soc_fraction, segments,
                               q_terminal, boundary):
    """Same dispatch as :func:`perfect_foresight` with bounded memory.

    A first backward pass keeps the curve at every chunk boundary; each
    chunk is then recomputed from its boundary curve just before it is
    dispatched.  The recursion is deterministic, so the curves are identical.
    """
    lam = prices[start:stop]
    chunk = max(1, MAX_SURFACE_CELLS // (4 * segments))
    marks = list(range(0, len(lam), chunk)) + [len(lam)]
    boundary_curves = {}
    tail = q_terminal
    for a, b in zip(marks[-2::-1], marks[:0:-1]):
        boundary_curves[b] = tail
        part = backward_induction(lam[a:b], spec, tail, segments=segments, boundary=boundary,
                                  keep_segments=None)
        tail = part.curve(0)
    E = spec.energy_mwh
    parts = []
    e = soc_fraction * E
    for a, b in zip(marks[:-1], marks[1:]):
        surf = backward_induction(lam[a:b], spec, boundary_curves[b], segments=segments,
                                  boundary=boundary)

        def step(i, t, price, e_prev, surf=surf):
            return single_period_dispatch(surf.after_step(i), price, e_prev, spec)

        part = _run("PF", spec, prices, times, start + a, start + b, e, step)
        e = part.soc[-1]
        parts.append(part)
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return SimulationResult("PF", spec, cat("t"), cat("times"), cat("price"), cat("p"), cat("b"),
                            cat("soc"), cat("revenue"), first.initial_soc,
                            {"surface": None, "chunks": len(parts)})


def perfect_foresight_profit(series, spec: StorageSpec, **kw) -> float:
    return perfect_foresight(series, spec, **kw).total_profit
