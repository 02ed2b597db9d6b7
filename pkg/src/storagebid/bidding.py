"""SoC-dependent charge/discharge bids from value curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .valuation import TIE_TOL, StorageSpec, ValueCurve


def segment_edges(energy_mwh: float, segments: int) -> np.ndarray:
    """Equal-width SoC breakpoints ``0 = E_0 < ... < E_J = E``."""
    edges = np.arange(segments + 1) * (energy_mwh / segments)
    edges[-1] = energy_mwh
    return edges


@dataclass(frozen=True)
class BidCurve:
    """Bid pair per SoC segment ``[breakpoints[j], breakpoints[j+1]]``.

    Discharge clears on segment ``j`` when the price exceeds
    ``discharge_bids[j]``; charge clears when it is below ``charge_bids[j]``.
    """

    t: int
    breakpoints: np.ndarray
    discharge_bids: np.ndarray
    charge_bids: np.ndarray

    @property
    def segments(self) -> int:
        return len(self.discharge_bids)

    def is_monotone(self, tol: float = TIE_TOL) -> bool:
        return bool(np.all(np.diff(self.discharge_bids) <= tol)
                    and np.all(np.diff(self.charge_bids) <= tol))


def make_bids(curve: ValueCurve, spec: StorageSpec) -> BidCurve:
    """Discharge bid ``c + q/eta`` and charge bid ``q*eta`` per segment.

    Each segment value of ``curve`` is already the average marginal value
    over its SoC interval, so one curve segment becomes one bid segment.
    """
    if not curve.is_monotone():
        raise ValueError("bids need a non-increasing value curve; project it first")
    q = curve.values
    return BidCurve(
        t=curve.t,
        breakpoints=segment_edges(spec.energy_mwh, len(q)),
        discharge_bids=spec.discharge_cost + q / spec.efficiency,
        charge_bids=q * spec.efficiency,
    )


def average_marginal_value(curve: ValueCurve) -> float:
    """Mean marginal value over ``[0, E]`` (equal-width segments)."""
    return float(np.mean(curve.values))


def write_bids_csv(path, bids: list[BidCurve]) -> None:
    """Export bids rounded to the $0.01/MWh market tick."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "segment", "charge_bid", "discharge_bid", "E_lo", "E_hi"])
        for bid in bids:
            for j in range(bid.segments):
                w.writerow([bid.t, j, f"{bid.charge_bids[j]:.2f}", f"{bid.discharge_bids[j]:.2f}",
                            repr(float(bid.breakpoints[j])), repr(float(bid.breakpoints[j + 1]))])
