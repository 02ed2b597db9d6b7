"""Opportunity-value curves by backward induction.

A value curve holds the marginal value ``q(e)`` ($/MWh) of stored energy on
``N`` equal SoC segments of width ``E/N``; it is the derivative of the
value-to-go ``Q(e)``.  One backward step maps the curve after period ``t``
to the curve after period ``t-1`` given the price of period ``t``:

    q_{t-1}(e) = q_t(e + P*eta)       if lam <= q_t(e + P*eta) * eta
               = lam / eta            if lam <= q_t(e) * eta
               = q_t(e)               if lam <= [q_t(e)/eta + c]^+
               = (lam - c) * eta      if lam <= [q_t(e - P/eta)/eta + c]^+
               = q_t(e - P/eta)       otherwise

where ``P`` is the per-step energy bound.  The first matching case wins.

Indexing convention: for a horizon of ``T`` prices, ``surface.values[k]``
is the curve that applies *after* price ``k-1`` has been settled, so price
``k`` is dispatched against ``values[k+1]`` (see :meth:`ValueSurface.after_step`).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, NumericError

DEFAULT_SEGMENTS = 1000
TIE_TOL = 1e-9

INFEASIBLE = "infeasible"
CLAMP = "clamp"
BOUNDARY_RULES = (INFEASIBLE, CLAMP)


@dataclass(frozen=True)
class StorageSpec:
    power_mw: float
    energy_mwh: float
    efficiency: float = 0.9
    discharge_cost: float = 10.0
    resolution_minutes: int = 5

    def __post_init__(self):
        if not (self.power_mw > 0 and self.energy_mwh > 0):
            raise ValueError("power and energy must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if self.discharge_cost < 0:
            raise ValueError("discharge cost must be non-negative")
        if self.resolution_minutes <= 0 or 60 % self.resolution_minutes:
            raise ValueError("resolution must divide 60 minutes")
        if self.p_step > self.energy_mwh:
            raise ValueError("per-step energy bound exceeds energy capacity")

    @property
    def step_hours(self) -> float:
        return self.resolution_minutes / 60.0

    @property
    def p_step(self) -> float:
        """Energy (MWh) that can be charged or discharged in one step."""
        return self.power_mw * self.step_hours

    @property
    def steps_per_hour(self) -> int:
        return 60 // self.resolution_minutes

    @property
    def duration_hours(self) -> float:
        return self.energy_mwh / self.power_mw

    @classmethod
    def from_duration(cls, hours: float, power_mw: float = 1.0, **kw) -> "StorageSpec":
        return cls(power_mw=power_mw, energy_mwh=power_mw * hours, **kw)


@dataclass(frozen=True)
class ValueCurve:
    t: int
    values: np.ndarray
    energy_mwh: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or len(values) == 0:
            raise ValueError("a value curve needs a nonempty 1-d array of segment values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def segments(self) -> int:
        return len(self.values)

    @property
    def segment_width(self) -> float:
        return self.energy_mwh / len(self.values)

    def is_monotone(self, tol: float = TIE_TOL) -> bool:
        return bool(np.all(np.diff(self.values) <= tol))


def segment_shifts(spec: StorageSpec, segments: int) -> tuple[int, int]:
    """Whole-segment SoC shifts for a full charge and a full discharge step.

    A shift lands in the segment containing the shifted segment midpoint.
    """
    width = spec.energy_mwh / segments
    up = int(np.floor(spec.p_step * spec.efficiency / width + 0.5))
    down = int(np.floor(spec.p_step / spec.efficiency / width + 0.5))
    if up < 1:
        raise GridMismatchError(
            f"SoC grid of {segments} segments is too coarse for a per-step bound of "
            f"{spec.p_step:g} MWh; segments must be well below the power rating"
        )
    return up, down


def _shifted(q: np.ndarray, k: int, up: bool, fill: float) -> np.ndarray:
    n = len(q)
    out = np.empty(n)
    k = min(k, n)
    if up:
        out[: n - k] = q[k:]
        out[n - k:] = fill
    else:
        out[k:] = q[: n - k]
        out[:k] = fill
    return out


def _update(q, lam, up, down, eta, c, clamp, tol=TIE_TOL):
    qc = _shifted(q, up, True, q[-1] if clamp else -np.inf)
    qd = _shifted(q, down, False, q[0] if clamp else np.inf)
    hold_hi = np.maximum(q / eta + c, 0.0)
    sell_hi = np.maximum(qd / eta + c, 0.0)
    out = np.where(
        lam <= qc * eta + tol, qc,
        np.where(lam <= q * eta + tol, lam / eta,
                 np.where(lam <= hold_hi + tol, q,
                          np.where(lam <= sell_hi + tol, (lam - c) * eta, qd))))
    # exact arithmetic gives a non-increasing result; inside a tie band lam/eta
    # and a shifted q can differ by an ulp, so drop those rounding bumps
    return np.minimum.accumulate(out)


def _check_boundary(boundary: str) -> bool:
    if boundary not in BOUNDARY_RULES:
        raise ValueError(f"boundary must be one of {BOUNDARY_RULES}, got {boundary!r}")
    return boundary == CLAMP


def value_update(q_next: ValueCurve, price: float, spec: StorageSpec,
                 boundary: str = INFEASIBLE) -> ValueCurve:
    """One backward step of the recursion.

    ``boundary`` decides what an SoC lookup beyond ``[0, E]`` returns.  The
    default treats the missing headroom as infeasible (charging past ``E`` is
    worth ``-inf``, discharging below 0 costs ``+inf``), which is exact.
    ``"clamp"`` reuses the end segment instead.

    Raises:
        GridMismatchError: curve energy differs from ``spec.energy_mwh``.
        NumericError: price is not finite.
    """
    clamp = _check_boundary(boundary)
    if not np.isclose(q_next.energy_mwh, spec.energy_mwh, rtol=1e-12, atol=0):
        raise GridMismatchError(
            f"curve covers {q_next.energy_mwh} MWh, storage has {spec.energy_mwh} MWh")
    if not np.isfinite(price):
        raise NumericError(f"non-finite price {price!r}")
    if not q_next.is_monotone():
        raise ValueError("q_next must be non-increasing over SoC")
    up, down = segment_shifts(spec, q_next.segments)
    out = _update(q_next.values, float(price), up, down, spec.efficiency,
                  spec.discharge_cost, clamp)
    return ValueCurve(q_next.t - 1, out, spec.energy_mwh)


@dataclass
class ValueSurface:
    """Value curves for every boundary ``t = 0..T`` of a price horizon.

    ``values`` has shape ``(T + 1, K)``.  ``K`` equals ``grid_segments`` for a
    full surface, or a divisor of it when only segment averages were kept.
    """

    spec: StorageSpec
    values: np.ndarray
    grid_segments: int
    boundary: str = INFEASIBLE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("surface values must be 2-d (T + 1, segments)")
        self.values.setflags(write=False)

    def __len__(self):
        return len(self.values)

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    @property
    def segments(self) -> int:
        return self.values.shape[1]

    def curve(self, t: int) -> ValueCurve:
        return ValueCurve(t, self.values[t], self.spec.energy_mwh)

    def after_step(self, k: int) -> ValueCurve:
        """Curve used to dispatch price ``k`` (0-based)."""
        return self.curve(k + 1)

    @property
    def curves(self) -> list[ValueCurve]:
        return [self.curve(t) for t in range(len(self.values))]

    def downsampled(self, segments: int) -> "ValueSurface":
        return ValueSurface(self.spec, _downsample(self.values, segments), self.grid_segments,
                            self.boundary, dict(self.meta))


def _downsample(values: np.ndarray, segments: int) -> np.ndarray:
    n = values.shape[-1]
    if segments <= 0 or n % segments:
        raise ValueError(f"{segments} segments do not divide a grid of {n}")
    return values.reshape(*values.shape[:-1], segments, n // segments).mean(axis=-1)


def backward_induction(prices, spec: StorageSpec, q_terminal: ValueCurve | float | None = None,
                       *, segments: int = DEFAULT_SEGMENTS, boundary: str = INFEASIBLE,
                       keep_segments: int | None = None) -> ValueSurface:
    """Optimal value curves for a known price path.

    Args:
        prices: real-time prices, one per step (array or ``PriceSeries``).
        spec: storage parameters.
        q_terminal: end-of-horizon curve; a number means a constant salvage
            value on ``segments`` segments; ``None`` means zero.
        segments: SoC grid size used when ``q_terminal`` is not a curve.
        boundary: see :func:`value_update`.
        keep_segments: store only segment averages at this resolution, to keep
            memory bounded on long horizons. The recursion itself always runs
            on the full grid.
    """
    clamp = _check_boundary(boundary)
    lam = np.asarray(getattr(prices, "rt_prices", prices), dtype=float)
    if not np.all(np.isfinite(lam)):
        raise NumericError(f"non-finite price at step {int(np.argmax(~np.isfinite(lam)))}")
    if isinstance(q_terminal, ValueCurve):
        if not np.isclose(q_terminal.energy_mwh, spec.energy_mwh, rtol=1e-12, atol=0):
            raise GridMismatchError("terminal curve energy differs from storage energy")
        q = q_terminal.values.copy()
    else:
        q = np.full(segments, 0.0 if q_terminal is None else float(q_terminal))
    n = len(q)
    up, down = segment_shifts(spec, n)
    eta, c = spec.efficiency, spec.discharge_cost
    width = n if keep_segments is None else keep_segments
    if n % width:
        raise ValueError(f"{keep_segments} segments do not divide a grid of {n}")
    group = n // width

    out = np.empty((len(lam) + 1, width))
    started = time.perf_counter()
    out[-1] = q.reshape(width, group).mean(axis=1)
    for k in range(len(lam) - 1, -1, -1):
        q = _update(q, lam[k], up, down, eta, c, clamp)
        out[k] = q if group == 1 else q.reshape(width, group).mean(axis=1)
    runtime = time.perf_counter() - started
    return ValueSurface(spec, out, n, boundary, {"runtime_seconds": runtime})


def query_marginal_value(curve: ValueCurve, soc: float) -> float:
    """Value of the segment containing ``soc``; ``soc == E`` maps to the last one."""
    if not 0 <= soc <= curve.energy_mwh:
        raise ValueError(f"SoC {soc} outside [0, {curve.energy_mwh}]")
    i = min(int(soc / curve.segment_width), curve.segments - 1)
    return float(curve.values[i])


def downsample_curve(curve: ValueCurve, segments: int) -> ValueCurve:
    """Average the curve over ``segments`` equal SoC intervals."""
    return ValueCurve(curve.t, _downsample(curve.values, segments), curve.energy_mwh)


def save_surface_csv(path, surface: ValueSurface) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "segment_index", "q_value"])
        for t, row in enumerate(surface.values):
            for j, v in enumerate(row):
                w.writerow([t, j, repr(float(v))])


def load_surface_csv(path, spec: StorageSpec, grid_segments: int | None = None) -> ValueSurface:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0].astype(int)
    j = data[:, 1].astype(int)
    values = np.empty((t.max() + 1, j.max() + 1))
    values[t, j] = data[:, 2]
    return ValueSurface(spec, values, grid_segments or values.shape[1])


def save_surface(path, surface: ValueSurface) -> None:
    s = surface.spec
    np.savez_compressed(
        path, values=surface.values, grid_segments=surface.grid_segments,
        boundary=np.array(surface.boundary),
        spec=np.array([s.power_mw, s.energy_mwh, s.efficiency, s.discharge_cost,
                       s.resolution_minutes], dtype=float),
    )


def load_surface(path) -> ValueSurface:
    with np.load(path, allow_pickle=False) as z:
        p, e, eta, c, res = z["spec"]
        spec = StorageSpec(p, e, eta, c, int(res))
        return ValueSurface(spec, z["values"].copy(), int(z["grid_segments"]), str(z["boundary"]))
