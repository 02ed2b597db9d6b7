"""Config-driven experiment runs: ingest, value, features, train or transfer,
simulate and report, with every stage result cached under a content hash.

A config is one YAML mapping::

    name: nyc-price-response
    resolution_minutes: 5
    zones:
      - id: NYC
        rt: data/nyiso_rt.csv        # paths are relative to the config file
        da: data/nyiso_da.csv        # optional; synthesized when absent
        zone: N.Y.C.                 # zone key inside the CSVs (default: id)
    periods:
      train: [["2017-01-01", "2018-10-01"]]
      validate: [["2018-10-01", "2019-01-01"]]
      test: ["2019-01-01", "2020-01-01"]
    storage: {power_mw: 1, durations: [2, 4, 12], efficiency: 0.9, discharge_cost: 10}
    modes: [PR-1, PR-10]
    predictor: {kind: mlp, epochs: 100, lr: 0.001, seeds: [0, 1, 2]}

Ranges are ``[start, stop)`` as timestamps or step indices.  A zone may
override ``periods``.  The optional ``pretrain`` and ``variants`` keys set up
transfer experiments (see ``configs/``).
"""

from __future__ import annotations

import contextlib
import copy
import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import features as feat
from .dispatch import ConstantSource, Mode, SurfaceOracle, perfect_foresight, simulate
from .errors import ConfigError, DataError, StorageBidError
from .market_data import (DAYAHEAD, REALTIME, PriceSeries, align_series, load_bundle,
                          load_price_csv, price_stats, save_bundle, synthesize_dayahead)
from .predictor import ModelSource, load_model, save_model, train_multistart, transfer
from .report import ProfitReport
from .synthetic import SyntheticPriceConfig, synthetic_series
from .valuation import DEFAULT_SEGMENTS, StorageSpec, backward_induction, load_surface, save_surface

log = logging.getLogger(__name__)

CACHE_ENV = "STORAGEBID_CACHE_DIR"
PREDICTOR_KINDS = ("mlp", "oracle", "zero")
METHODS = ("scratch", "transfer", "pretrained")

_PREDICTOR_DEFAULTS = {
    "kind": "mlp", "hidden": [256, 128], "epochs": 100, "lr": 1e-3, "batch_size": 128,
    "optimizer": "adam", "momentum": 0.9, "seeds": [0, 1, 2], "select": "profit",
    "stride": 1, "m": 24, "n": 36, "window_hours": 5, "val_fraction": 0.2,
}
_STORAGE_DEFAULTS = {
    "power_mw": 1.0, "durations": [2.0], "efficiency": 0.9, "discharge_cost": 10.0,
    "segments": DEFAULT_SEGMENTS, "initial_soc": 0.5,
}
_TRANSFER_DEFAULTS = {"epochs": 25, "lr": 1e-3, "val_fraction": 0.2}


# ---------------------------------------------------------------- config

@dataclass
class ZoneConfig:
    id: str
    rt: str | None = None
    da: str | None = None
    zone: str | None = None
    synthetic: dict | None = None
    periods: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    name: str
    zones: list[ZoneConfig]
    periods: dict
    storage: dict
    modes: list[str]
    predictor: dict
    resolution_minutes: int = 5
    pretrain: dict | None = None
    variants: list[dict] = field(default_factory=list)
    transfer: dict = field(default_factory=lambda: dict(_TRANSFER_DEFAULTS))
    workers: int = 1
    output_dir: str = "results"
    cache_dir: str | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        known = {"name", "zones", "periods", "storage", "modes", "predictor", "resolution_minutes",
                 "pretrain", "variants", "transfer", "workers", "output_dir", "cache_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("name", "zones", "modes"):
            if key not in raw:
                raise ConfigError(f"config is missing {key!r}")
        zones = []
        for z in raw["zones"]:
            if not isinstance(z, dict) or "id" not in z:
                raise ConfigError(f"zone entry needs an id: {z!r}")
            extra = set(z) - {"id", "rt", "da", "zone", "synthetic", "periods"}
            if extra:
                raise ConfigError(f"zone {z['id']}: unknown keys {sorted(extra)}")
            zones.append(ZoneConfig(**z))
        cfg = cls(
            name=str(raw["name"]),
            zones=zones,
            periods=dict(raw.get("periods") or {}),
            storage={**_STORAGE_DEFAULTS, **(raw.get("storage") or {})},
            modes=[Mode.parse(m).name for m in _listify(raw["modes"])],
            predictor={**_PREDICTOR_DEFAULTS, **(raw.get("predictor") or {})},
            resolution_minutes=int(raw.get("resolution_minutes", 5)),
            pretrain=raw.get("pretrain"),
            variants=list(raw.get("variants") or []),
            transfer={**_TRANSFER_DEFAULTS, **(raw.get("transfer") or {})},
            workers=int(raw.get("workers", 1)),
            output_dir=str(raw.get("output_dir", f"results/{raw['name']}")),
            cache_dir=raw.get("cache_dir"),
            base_dir=str(base_dir),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def zone(self, zone_id: str) -> ZoneConfig:
        for z in self.zones:
            if z.id == zone_id:
                return z
        raise ConfigError(f"unknown zone {zone_id!r}")

    def periods_for(self, zone: ZoneConfig) -> dict:
        return {**self.periods, **zone.periods}

    @property
    def durations(self) -> list[float]:
        return [float(d) for d in _listify(self.storage["durations"])]

    def spec(self, duration: float) -> StorageSpec:
        s = self.storage
        return StorageSpec.from_duration(duration, float(s["power_mw"]),
                                         efficiency=float(s["efficiency"]),
                                         discharge_cost=float(s["discharge_cost"]),
                                         resolution_minutes=self.resolution_minutes)

    def effective_variants(self) -> list[dict]:
        if self.predictor["kind"] != "mlp" or not self.variants:
            return [{"name": "", "method": "scratch"}]
        return self.variants

    def validate(self) -> None:
        if not self.zones:
            raise ConfigError("config lists no zones")
        ids = [z.id for z in self.zones]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate zone ids in {ids}")
        for z in self.zones:
            if z.synthetic is None and not z.rt:
                raise ConfigError(f"zone {z.id}: give an rt file or a synthetic block")
        if self.resolution_minutes <= 0 or 60 % self.resolution_minutes:
            raise ConfigError(f"resolution {self.resolution_minutes} min must divide an hour")
        durations = self.durations
        if not durations or any(not d > 0 for d in durations):
            raise ConfigError(f"storage durations must be positive, got {durations}")
        for d in durations:
            try:
                self.spec(d)
            except ValueError as exc:
                raise ConfigError(f"storage for duration {d}: {exc}") from exc
        n = int(self.storage["segments"])
        for m in self.modes:
            if n % Mode.parse(m).segments:
                raise ConfigError(f"{m}: {Mode.parse(m).segments} bid segments do not divide "
                                  f"the {n}-segment SoC grid")
        if not 0.0 <= float(self.storage["initial_soc"]) <= 1.0:
            raise ConfigError("initial_soc is a fraction of capacity in [0, 1]")
        if self.predictor["kind"] not in PREDICTOR_KINDS:
            raise ConfigError(f"predictor kind must be one of {PREDICTOR_KINDS}")
        if self.predictor["select"] not in ("profit", "mse"):
            raise ConfigError("predictor select must be 'profit' or 'mse'")
        if not _listify(self.predictor["seeds"]):
            raise ConfigError("predictor needs at least one seed")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for v in self.variants:
            if v.get("method") not in METHODS or "name" not in v:
                raise ConfigError(f"variant needs a name and a method in {METHODS}: {v!r}")
            if v["method"] != "pretrained" and not v.get("train"):
                raise ConfigError(f"variant {v['name']}: method {v['method']} needs train ranges")
            if v["method"] != "scratch" and not self.pretrain:
                raise ConfigError(f"variant {v['name']}: method {v['method']} needs a pretrain block")
        if self.pretrain:
            zid = self.pretrain.get("zone")
            self.zone(zid)
            if not self.pretrain.get("train"):
                raise ConfigError("pretrain block needs train ranges")
        for z in self.zones:
            p = self.periods_for(z)
            if "test" not in p:
                raise ConfigError(f"zone {z.id}: no test period")
            test = _parse_range(p["test"])
            fitted = [_parse_range(r) for r in _ranges(p.get("train")) + _ranges(p.get("validate"))]
            if self.pretrain and z.id == self.pretrain["zone"]:
                fitted += [_parse_range(r) for r in _ranges(self.pretrain["train"])
                           + _ranges(self.pretrain.get("validate"))]
            else:
                for v in self.variants:
                    fitted += [_parse_range(r)
                               for r in _ranges(v.get("train")) + _ranges(v.get("validate"))]
            if self.predictor["kind"] == "mlp" and not self.variants and not _ranges(p.get("train")):
                raise ConfigError(f"zone {z.id}: no train period")
            for r in fitted:
                if _overlaps(r, test):
                    raise ConfigError(f"zone {z.id}: test period {p['test']} overlaps "
                                      f"train/validate range {list(r)}")


def _listify(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _ranges(v) -> list:
    """Normalize ``[a, b]`` or ``[[a, b], ...]`` to a list of pairs."""
    if not v:
        return []
    if len(v) == 2 and not isinstance(v[0], (list, tuple)):
        return [list(v)]
    return [list(r) for r in v]


def _point(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    try:
        return np.datetime64(str(x), "s")
    except ValueError as exc:
        raise ConfigError(f"cannot read {x!r} as a timestamp or step index") from exc


def _parse_range(r):
    if len(r) != 2:
        raise ConfigError(f"range must be [start, stop], got {r!r}")
    a, b = _point(r[0]), _point(r[1])
    if type(a) is not type(b):
        raise ConfigError(f"range {r!r} mixes timestamps and step indices")
    if not a < b:
        raise ConfigError(f"empty range {r!r}")
    return a, b


def _overlaps(r1, r2) -> bool:
    if type(r1[0]) is not type(r2[0]):
        return False  # compared again as step indices once data is loaded
    return r1[0] < r2[1] and r2[0] < r1[1]


# ---------------------------------------------------------------- cache

def _digest(obj) -> str:
    raw = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(raw).hexdigest()[:24]


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Cache:
    """Artifacts on disk at ``<root>/<kind>/<key><ext>``; writes are atomic."""

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, kind: str, key: str, ext: str) -> Path:
        return self.root / kind / f"{key}{ext}"

    def _lock(self, name: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(name, threading.Lock())

    def get_or_compute(self, kind, key, ext, compute, save, load):
        path = self.path(kind, key, ext)
        with self._lock(str(path)):
            if path.exists():
                with self._guard:
                    self.hits += 1
                return load(path)
            with self._guard:
                self.misses += 1
            value = compute()
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f"{key}.{os.getpid()}.{threading.get_ident()}.tmp{ext}")
            save(tmp, value)
            os.replace(tmp, path)
            # hand back what a later cache hit would see
            return load(path)

    def json(self, kind, key, compute):
        def save(p, v):
            p.write_text(json.dumps(v, sort_keys=True, indent=1))
        return self.get_or_compute(kind, key, ".json", compute, save,
                                   lambda p: json.loads(p.read_text()))


def cache_root(cfg: RunConfig) -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    if cfg.cache_dir:
        return Path(cfg.base_dir) / cfg.cache_dir
    return Path(cfg.base_dir) / cfg.output_dir / ".cache"


# ---------------------------------------------------------------- stages

@contextlib.contextmanager
def stage(name: str, **context):
    """Prefix errors raised inside a stage with the stage name and context."""
    try:
        yield
    except StorageBidError as exc:
        if getattr(exc, "stage", None) is None:
            ctx = ", ".join(f"{k}={v}" for k, v in context.items())
            exc.stage = name
            exc.args = (f"stage {name} ({ctx}): {exc}",) + exc.args[1:]
        raise
    except (ValueError, OSError) as exc:
        ctx = ", ".join(f"{k}={v}" for k, v in context.items())
        err = DataError(f"stage {name} ({ctx}): {exc}")
        err.stage = name
        raise err from exc


@dataclass
class _Zone:
    cfg: ZoneConfig
    series: PriceSeries
    key: str
    periods: dict

    def index(self, point) -> int:
        p = _point(point)
        if isinstance(p, int):
            return p
        return self.series.index_of(p)

    def span(self, r) -> tuple[int, int]:
        a, b = self.index(r[0]), self.index(r[1])
        if not a < b:
            raise DataError(f"range {r} selects no data in zone {self.cfg.id}")
        return a, b


class Pipeline:
    def __init__(self, cfg: RunConfig, cache: Cache | None = None):
        self.cfg = cfg
        self.cache = cache or Cache(cache_root(cfg))
        self.zones: dict[str, _Zone] = {}

    # ingest ---------------------------------------------------------
    def _source_path(self, rel) -> Path:
        return (Path(self.cfg.base_dir) / rel).resolve()

    def ingest(self, zc: ZoneConfig) -> _Zone:
        with stage("ingest", zone=zc.id):
            if zc.synthetic is not None:
                ident = {"synthetic": zc.synthetic, "zone": zc.id,
                         "resolution": self.cfg.resolution_minutes}
            else:
                files = {k: _file_digest(self._source_path(v))
                         for k, v in (("rt", zc.rt), ("da", zc.da)) if v}
                ident = {"files": files, "zone": zc.zone or zc.id,
                         "resolution": self.cfg.resolution_minutes}
            key = _digest(ident)
            series = self.cache.get_or_compute("bundle", key, ".npz", lambda: self._load_zone(zc),
                                               save_bundle, load_bundle)
        return _Zone(zc, series, key, self.cfg.periods_for(zc))

    def _load_zone(self, zc: ZoneConfig) -> PriceSeries:
        res = self.cfg.resolution_minutes
        if zc.synthetic is not None:
            params = {"resolution_minutes": res, "zone_id": zc.id, **zc.synthetic}
            try:
                return synthetic_series(SyntheticPriceConfig(**params))
            except TypeError as exc:
                raise ConfigError(f"zone {zc.id}: bad synthetic parameters: {exc}") from exc
        name = zc.zone or zc.id
        rt = load_price_csv(self._source_path(zc.rt), REALTIME, name, res)
        da = (load_price_csv(self._source_path(zc.da), DAYAHEAD, name) if zc.da
              else synthesize_dayahead(rt))
        series = align_series(rt, da)
        series.zone_id = zc.id
        return series

    # value ----------------------------------------------------------
    def _grid(self) -> int:
        return int(self.cfg.storage["segments"])

    def _keep(self) -> int:
        """Coarsest stored surface resolution that every mode can be read from."""
        keep = int(np.lcm.reduce([Mode.parse(m).segments for m in self.cfg.modes]))
        return keep if self._grid() % keep == 0 else self._grid()

    def training_surface(self, z: _Zone, duration: float, stop: int):
        spec = self.cfg.spec(duration)
        key = _digest({"bundle": z.key, "spec": asdict(spec), "grid": self._grid(), "stop": stop,
                       "keep": self._keep()})
        with stage("value", zone=z.cfg.id, duration=f"{duration:g}h", purpose="training"):
            surf = self.cache.get_or_compute(
                "surface", key, ".npz",
                lambda: backward_induction(z.series.rt_prices[:stop], spec, segments=self._grid(),
                                           keep_segments=self._keep()),
                save_surface, load_surface)
        return surf, key

    def benchmark(self, z: _Zone, duration: float):
        """Perfect-foresight profit and exact surface over the test range."""
        spec = self.cfg.spec(duration)
        start, stop = z.span(_ranges(z.periods["test"])[0])
        ident = {"bundle": z.key, "spec": asdict(spec), "grid": self._grid(), "test": [start, stop],
                 "soc": float(self.cfg.storage["initial_soc"])}
        key = _digest(ident)
        with stage("value", zone=z.cfg.id, duration=f"{duration:g}h", purpose="benchmark"):
            surf = self.cache.get_or_compute(
                "surface", _digest({**ident, "keep": self._keep()}), ".npz",
                lambda: backward_induction(z.series.rt_prices[start:stop], spec,
                                           segments=self._grid(), keep_segments=self._keep()),
                save_surface, load_surface)
        with stage("simulate", zone=z.cfg.id, duration=f"{duration:g}h", mode="PF"):
            def run():
                # the benchmark needs the full grid, so it cannot reuse the stored surface
                r = perfect_foresight(z.series, spec, start=start, stop=stop,
                                      initial_soc_fraction=float(self.cfg.storage["initial_soc"]),
                                      segments=self._grid())
                return _result_summary(r)
            pf = self.cache.json("pf", key, run)
        return pf, surf, key, (start, stop)

    # features + train -----------------------------------------------
    def _set(self, z, surface, ranges, S, shift, normalization=None):
        p = self.cfg.predictor
        limit = len(surface) - 1 - shift  # anchors whose targets the surface covers
        spans = []
        for r in ranges:
            a, b = z.span(r)
            spans.append((a, min(b, limit)))
        return feat.build_training_set(z.series, surface, spans, m=int(p["m"]), n=int(p["n"]),
                                       segments=S, hour_shift=shift, stride=int(p["stride"]),
                                       window_hours=int(p["window_hours"]),
                                       normalization=normalization)

    def _fit_ranges(self, z, train, validate):
        ends = [z.span(r)[1] for r in _ranges(train) + _ranges(validate)]
        return max(ends)

    def model(self, z: _Zone, duration: float, mode: Mode, train, validate, method="scratch",
              base=None):
        """Train (or adapt) a predictor; returns ``(model, key)``."""
        p = self.cfg.predictor
        S = mode.segments
        shift = self.cfg.spec(duration).steps_per_hour if mode.bidding else 0
        stop = self._fit_ranges(z, train, validate)
        surface, skey = self.training_surface(z, duration, stop)
        spans = [list(z.span(r)) for r in _ranges(train)]
        vspans = [list(z.span(r)) for r in _ranges(validate)]
        for r in spans + vspans:
            test = z.span(_ranges(z.periods["test"])[0])
            if r[0] < test[1] and test[0] < r[1]:
                raise ConfigError(f"zone {z.cfg.id}: training range {r} overlaps test {list(test)}")
        ident = {"surface": skey, "S": S, "shift": shift, "train": spans, "validate": vspans,
                 "method": method, "predictor": {k: v for k, v in p.items() if k != "kind"},
                 "base": base[1] if base else None,
                 "transfer": self.cfg.transfer if method == "transfer" else None}
        key = _digest(ident)
        ctx = dict(zone=z.cfg.id, duration=f"{duration:g}h", mode=mode.name)

        def compute():
            with stage("features", **ctx):
                tr = self._set(z, surface, _ranges(train), S, shift,
                               base[0].normalization if method == "transfer" else None)
                va = (self._set(z, surface, _ranges(validate), S, shift, tr.normalization)
                      if vspans else None)
            if method == "transfer":
                with stage("transfer", **ctx):
                    t = self.cfg.transfer
                    m, _ = transfer(base[0], tr, int(t["epochs"]), float(t["lr"]), val_set=va,
                                    val_fraction=float(t["val_fraction"]),
                                    batch_size=int(p["batch_size"]), momentum=float(p["momentum"]),
                                    optimizer=p["optimizer"])
                    return m
            with stage("train", **ctx):
                if va is None:
                    tr, va = tr.split(float(p["val_fraction"]))
                score = None
                if p["select"] == "profit" and vspans:
                    a, b = vspans[0]
                    score = lambda model: simulate(  # noqa: E731
                        z.series, self.cfg.spec(duration), mode, ModelSource(model),
                        start=a, stop=b).total_profit
                m, _ = train_multistart(_listify(p["seeds"]), S, tr, va,
                                        hidden=tuple(p["hidden"]), epochs=int(p["epochs"]),
                                        lr=float(p["lr"]), batch_size=int(p["batch_size"]),
                                        momentum=float(p["momentum"]), optimizer=p["optimizer"],
                                        score=score)
                return m

        return self.cache.get_or_compute("model", key, ".bin", compute, save_model, load_model), key

    # legs -----------------------------------------------------------
    def leg(self, z: _Zone, duration: float, mode_name: str, variant: dict) -> dict:
        mode = Mode.parse(mode_name)
        spec = self.cfg.spec(duration)
        pf, surf, pf_key, (start, stop) = self.benchmark(z, duration)
        kind = self.cfg.predictor["kind"]
        shift = spec.steps_per_hour if mode.bidding else 0
        if kind == "oracle":
            source, skey = SurfaceOracle(surf, mode.segments, shift, offset=start), ["oracle", pf_key]
        elif kind == "zero":
            source, skey = ConstantSource(0.0, mode.segments, shift), ["zero"]
        else:
            model, mkey = self._variant_model(z, duration, mode, variant)
            source, skey = ModelSource(model), ["model", mkey]
        key = _digest({"source": skey, "bundle": z.key, "spec": asdict(spec), "mode": mode.name,
                       "range": [start, stop], "soc": float(self.cfg.storage["initial_soc"])})
        with stage("simulate", zone=z.cfg.id, duration=f"{duration:g}h", mode=mode.name):
            res = self.cache.json("sim", key, lambda: _result_summary(simulate(
                z.series, spec, mode, source, start=start, stop=stop,
                initial_soc_fraction=float(self.cfg.storage["initial_soc"]))))
        return {"zone": z.cfg.id, "duration": duration, "mode": mode.name,
                "variant": variant["name"], "result": res, "pf": pf}

    def _variant_model(self, z, duration, mode, variant):
        method = variant["method"]
        base = None
        if method in ("transfer", "pretrained") or self.cfg.pretrain and z.cfg.id == self.cfg.pretrain["zone"]:
            pre = self.cfg.pretrain
            pz = self.zones[pre["zone"]]
            base = self.model(pz, duration, mode, pre["train"], pre.get("validate"))
            if method == "pretrained" or z.cfg.id == pre["zone"]:
                return base
        if variant.get("train"):
            train, validate = variant["train"], variant.get("validate")
        else:
            train, validate = z.periods.get("train"), z.periods.get("validate")
        return self.model(z, duration, mode, train, validate, method, base)

    def legs(self):
        zones = [z for z in self.cfg.zones
                 if not (self.cfg.pretrain and z.id == self.cfg.pretrain["zone"]
                         and self.cfg.pretrain.get("report") is False)]
        for zc in zones:
            for d in self.cfg.durations:
                for m in self.cfg.modes:
                    for v in self.cfg.effective_variants():
                        yield zc.id, d, m, v

    def run(self) -> ProfitReport:
        for zc in self.cfg.zones:
            self.zones[zc.id] = self.ingest(zc)
        todo = list(self.legs())
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                outcomes = list(pool.map(lambda a: self.leg(self.zones[a[0]], *a[1:]), todo))
        else:
            outcomes = [self.leg(self.zones[a[0]], *a[1:]) for a in todo]
        with stage("report", config=self.cfg.name):
            report = ProfitReport(self.cfg.name)
            for o in outcomes:
                report.add(o["zone"], o["duration"], o["mode"], o["result"]["profit"],
                           o["pf"]["profit"], o["result"]["monthly"], o["pf"]["monthly"],
                           o["variant"])
            self._write_outputs(report, outcomes)
        log.info("pipeline %s: %d cache hits, %d misses", self.cfg.name, self.cache.hits,
                 self.cache.misses)
        return report

    def _write_outputs(self, report: ProfitReport, outcomes) -> None:
        out = Path(self.cfg.base_dir) / self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "table.txt").write_text(report.table() + "\n")
        report.write_csv(out / "report.csv")
        report.write_monthly_csv(out / "monthly.csv")
        stats = {zid: price_stats(z.series) for zid, z in self.zones.items()}
        lines = ["zone,negative_count,std_dev,mean,min,max,count"]
        for zid in sorted(stats):
            s = stats[zid]
            lines.append(f"{zid},{s.negative_count},{s.std_dev:.6f},{s.mean:.6f},{s.min:.6f},"
                         f"{s.max:.6f},{s.count}")
        (out / "price_stats.csv").write_text("\n".join(lines) + "\n")
        # daily accumulated profit, one file per leg, for plotting
        plots = out / "accumulated"
        plots.mkdir(exist_ok=True)
        for o in sorted(outcomes, key=lambda o: (o["zone"], o["variant"], o["mode"], o["duration"])):
            tag = "_".join(x for x in (o["zone"], o["variant"], f"{o['duration']:g}h", o["mode"]) if x)
            rows = ["day,profit,pf_profit"]
            acc = pf_acc = 0.0
            for day in sorted(o["pf"]["daily"]):
                acc += o["result"]["daily"].get(day, 0.0)
                pf_acc += o["pf"]["daily"][day]
                rows.append(f"{day},{acc:.6f},{pf_acc:.6f}")
            (plots / f"{tag.replace(' ', '-')}.csv").write_text("\n".join(rows) + "\n")


def _result_summary(r) -> dict:
    days = r.times.astype("datetime64[D]").astype(str)
    uniq, inv = np.unique(days, return_inverse=True)
    daily = np.bincount(inv, weights=r.revenue, minlength=len(uniq))
    return {"profit": r.total_profit, "monthly": r.monthly_profit(),
            "daily": {d: float(v) for d, v in zip(uniq, daily)},
            "charged_mwh": float(r.b.sum()), "discharged_mwh": float(r.p.sum())}


def run_pipeline(config: RunConfig | dict | str | os.PathLike, cache: Cache | None = None
                 ) -> ProfitReport:
    """Run every (zone, duration, mode, variant) leg of a config."""
    if isinstance(config, (str, os.PathLike)):
        config = RunConfig.load(config)
    elif isinstance(config, dict):
        config = RunConfig.from_dict(copy.deepcopy(config))
    return Pipeline(config, cache).run()
