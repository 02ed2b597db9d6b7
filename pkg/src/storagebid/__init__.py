"""Storage arbitrage valuation, bidding and dispatch.

Exact value curves come from backward dynamic programming over historical
prices; a regressor learns to predict them from recent prices; the predicted
curves drive price-response dispatch or hour-ahead bids, scored against
perfect foresight.
"""

from .bidding import BidCurve, make_bids
from .dispatch import Mode, clear_bids, perfect_foresight, simulate, single_period_dispatch
from .errors import ConfigError, DataError, NumericError, StorageBidError
from .market_data import PriceSeries, align_series, load_price_csv
from .pipeline import RunConfig, run_pipeline
from .report import ProfitReport, profit_ratio
from .valuation import StorageSpec, ValueCurve, ValueSurface, backward_induction, value_update

__version__ = "0.1.0"

__all__ = [
    "BidCurve", "ConfigError", "DataError", "Mode", "NumericError", "PriceSeries", "ProfitReport",
    "RunConfig", "StorageBidError", "StorageSpec", "ValueCurve", "ValueSurface", "align_series",
    "backward_induction", "clear_bids", "load_price_csv", "make_bids", "perfect_foresight",
    "profit_ratio", "run_pipeline", "simulate", "single_period_dispatch", "value_update",
]
