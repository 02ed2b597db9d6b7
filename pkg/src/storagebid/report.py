"""Profit ratios and the summary tables built from simulation runs."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

log = logging.getLogger(__name__)

RATIO_GUARD = 100.5


def profit_ratio(profit: float, pf_profit: float) -> float | None:
    """Realized profit as a percentage of perfect-foresight profit.

    Undefined (``None``) when the benchmark itself earns nothing.
    """
    if not pf_profit > 0:
        return None
    return 100.0 * profit / pf_profit


@dataclass
class ProfitEntry:
    zone: str
    duration_hours: float
    mode: str
    profit: float
    pf_profit: float
    ratio: float | None
    monthly: dict = field(default_factory=dict)
    pf_monthly: dict = field(default_factory=dict)
    variant: str = ""

    @property
    def row_label(self) -> str:
        return f"{self.zone} {self.variant}" if self.variant else self.zone

    @property
    def over_guard(self) -> bool:
        return self.ratio is not None and self.ratio > RATIO_GUARD


@dataclass
class ProfitReport:
    name: str
    entries: list[ProfitEntry] = field(default_factory=list)

    def add(self, zone, duration_hours, mode, profit, pf_profit, monthly=None, pf_monthly=None,
            variant: str = ""):
        entry = ProfitEntry(zone, float(duration_hours), mode, float(profit), float(pf_profit),
                            profit_ratio(profit, pf_profit), dict(monthly or {}),
                            dict(pf_monthly or {}), variant)
        if entry.over_guard:
            log.warning("%s %sh %s: ratio %.2f%% exceeds perfect foresight beyond grid tolerance",
                        zone, duration_hours, mode, entry.ratio)
        self.entries.append(entry)
        return entry

    def get(self, zone, duration_hours, mode, variant: str = "") -> ProfitEntry:
        for e in self.entries:
            if (e.zone, e.duration_hours, e.mode, e.variant) == (zone, float(duration_hours),
                                                                 mode, variant):
                return e
        raise KeyError((zone, duration_hours, mode, variant))

    @property
    def over_guard(self) -> list[ProfitEntry]:
        return [e for e in self.entries if e.over_guard]

    def _sorted(self):
        return sorted(self.entries, key=lambda e: (e.zone, e.variant, e.mode, e.duration_hours))

    def to_json(self) -> str:
        body = {"name": self.name, "entries": [asdict(e) for e in self._sorted()]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ProfitReport":
        body = json.loads(text)
        return cls(body["name"], [ProfitEntry(**e) for e in body["entries"]])

    def table(self) -> str:
        """Zones as rows, modes x durations as columns."""
        rows = sorted({(e.zone, e.variant) for e in self.entries})
        modes = sorted({e.mode for e in self.entries}, key=_mode_order)
        durations = sorted({e.duration_hours for e in self.entries})
        width = 9
        lw = max([10] + [len(f"{z} {v}") + 2 for z, v in rows if v])
        head1 = f"{'Zone':<{lw}}" + "".join(f"{m:^{width * len(durations)}}" for m in modes)
        head2 = f"{'':<{lw}}" + "".join(f"{_fmt_hours(d):>{width}}" for _ in modes for d in durations)
        lines = [head1, head2]
        for z, v in rows:
            cells = []
            for m in modes:
                for d in durations:
                    try:
                        r = self.get(z, d, m, v).ratio
                        cells.append(f"{r:>{width}.2f}" if r is not None else f"{'n/a':>{width}}")
                    except KeyError:
                        cells.append(f"{'-':>{width}}")
            label = f"{z} {v}" if v else z
            lines.append(f"{label:<{lw}}" + "".join(cells))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zone", "variant", "duration_hours", "mode", "profit", "pf_profit", "ratio"])
            for e in self._sorted():
                ratio = "" if e.ratio is None else f"{e.ratio:.4f}"
                w.writerow([e.zone, e.variant, e.duration_hours, e.mode, f"{e.profit:.6f}",
                            f"{e.pf_profit:.6f}", ratio])

    def write_monthly_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zone", "variant", "duration_hours", "mode", "month", "profit", "pf_profit",
                        "accumulated", "pf_accumulated"])
            for e in self._sorted():
                acc = pf_acc = 0.0
                for month in sorted(e.pf_monthly):
                    prof = e.monthly.get(month, 0.0)
                    pf = e.pf_monthly[month]
                    acc += prof
                    pf_acc += pf
                    w.writerow([e.zone, e.variant, e.duration_hours, e.mode, month, f"{prof:.6f}",
                                f"{pf:.6f}", f"{acc:.6f}", f"{pf_acc:.6f}"])


def _mode_order(mode: str):
    kind, _, seg = mode.partition("-")
    return (kind != "PR", int(seg) if seg.isdigit() else 0)


def _fmt_hours(d: float) -> str:
    return f"{d:g}hr"
