"""Value-curve regressor: a small ReLU network trained by minibatch
gradient descent (Adam by default, plain momentum on request).

The model maps a flattened, normalized feature window to ``S`` segment
values.  Parameters live in ordered blocks; the last block is the output
layer, and transfer learning retrains only that block.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import DataError, NumericError
from .features import Normalization, TrainingSet, WindowShape, build_inputs
from .valuation import ValueCurve

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (256, 128)


@dataclass
class Block:
    name: str
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)

    def copy(self) -> "Block":
        return Block(self.name, self.weight.copy(), self.bias.copy())

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class PredictorModel:
    blocks: list[Block]
    meta: dict = field(default_factory=dict)
    normalization: Normalization | None = None

    @property
    def output_block(self) -> Block:
        return self.blocks[-1]

    @property
    def segments(self) -> int:
        return self.output_block.bias.size

    @property
    def input_size(self) -> int:
        return self.blocks[0].weight.shape[0]

    @property
    def n_parameters(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def hour_shift(self) -> int:
        return int(self.meta.get("hour_shift", 0))

    def copy(self) -> "PredictorModel":
        return PredictorModel([b.copy() for b in self.blocks], json.loads(json.dumps(self.meta)),
                              self.normalization)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for b in self.blocks:
            h.update(b.weight.tobytes())
            h.update(b.bias.tobytes())
        return h.hexdigest()[:16]


@dataclass
class TrainReport:
    epochs_run: int
    best_validation_mse: float
    best_epoch: int
    checkpoint_id: str
    history: list = field(default_factory=list)
    seed: int | None = None
    wall_seconds: float = field(default=0.0, compare=False)


def init_model(seed: int, segments: int, input_shape, hidden=DEFAULT_HIDDEN, **meta) -> PredictorModel:
    """Fresh network with uniform fan-in scaled weights and zero biases."""
    input_size = int(np.prod(input_shape))
    if input_size <= 0 or segments <= 0 or any(h <= 0 for h in hidden):
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    sizes = [input_size, *hidden, segments]
    blocks = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        limit = np.sqrt((3.0 if last else 6.0) / fan_in)
        blocks.append(Block("output" if last else f"hidden{i}",
                            rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
    info = {"segments": segments, "input_shape": list(np.atleast_1d(input_shape).tolist()),
            "hidden": list(hidden), "seed": seed}
    info.update(meta)
    return PredictorModel(blocks, info)


def forward(blocks: list[Block], x: np.ndarray, keep: bool = False, linear_out: bool = True):
    """Run ``x`` through ``blocks``; the last one is linear unless ``linear_out`` is off."""
    acts = [x]
    h = x
    for i, blk in enumerate(blocks):
        z = h @ blk.weight + blk.bias
        h = z if (linear_out and i == len(blocks) - 1) else np.maximum(z, 0.0)
        acts.append(h)
    return (h, acts) if keep else h


def loss_and_grads(blocks: list[Block], x: np.ndarray, y: np.ndarray, first_trainable: int = 0):
    """Mean squared error over samples and segments, and its exact gradient.

    Returns ``(loss, grads)`` with ``grads[i] = (dW, db)`` for blocks from
    ``first_trainable`` on.
    """
    out, acts = forward(blocks, x, keep=True)
    diff = out - y
    loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size
    grads = []
    for i in range(len(blocks) - 1, first_trainable - 1, -1):
        a_in = acts[i]
        grads.append((a_in.T @ delta, delta.sum(axis=0)))
        if i > first_trainable:
            delta = (delta @ blocks[i].weight.T) * (acts[i] > 0)
    grads.reverse()
    return loss, grads


def _mse(blocks, x, y, batch=4096) -> float:
    total = 0.0
    for i in range(0, len(x), batch):
        d = forward(blocks, x[i:i + batch]) - y[i:i + batch]
        total += float(np.sum(d * d))
    return total / y.size


def _as_arrays(data, normalization):
    if isinstance(data, TrainingSet):
        return data.inputs(normalization), data.targets()
    x, y = data
    return np.asarray(x, float), np.asarray(y, float)


class _Momentum:
    def __init__(self, blocks, lr, momentum=0.9, **_):
        self.lr, self.mu = lr, momentum
        self.v = [(np.zeros_like(b.weight), np.zeros_like(b.bias)) for b in blocks]

    def step(self, blocks, grads):
        for blk, (vw, vb), (dw, db) in zip(blocks, self.v, grads):
            vw *= self.mu
            vw -= self.lr * dw
            vb *= self.mu
            vb -= self.lr * db
            blk.weight += vw
            blk.bias += vb


class _Adam:
    def __init__(self, blocks, lr, beta1=0.9, beta2=0.999, eps=1e-7, **_):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [[np.zeros_like(b.weight), np.zeros_like(b.bias)] for b in blocks]
        self.v = [[np.zeros_like(b.weight), np.zeros_like(b.bias)] for b in blocks]
        self.k = 0

    def step(self, blocks, grads):
        self.k += 1
        lr = self.lr * np.sqrt(1 - self.b2 ** self.k) / (1 - self.b1 ** self.k)
        for blk, m, v, g in zip(blocks, self.m, self.v, grads):
            for j, param in enumerate((blk.weight, blk.bias)):
                m[j] *= self.b1
                m[j] += (1 - self.b1) * g[j]
                v[j] *= self.b2
                v[j] += (1 - self.b2) * g[j] * g[j]
                param -= lr * m[j] / (np.sqrt(v[j]) + self.eps)


OPTIMIZERS = {"adam": _Adam, "momentum": _Momentum}


def _fit(blocks, x, y, xv, yv, *, epochs, lr, batch_size, momentum, seed, first_trainable,
         optimizer="adam", features=None, features_val=None):
    """Minibatch training of ``blocks[first_trainable:]``; keeps the
    parameters with the best validation error seen, starting from the
    incoming ones."""
    rng = np.random.default_rng(seed)
    # frozen prefix already applied by the caller when features are given
    head = blocks[first_trainable:]
    try:
        opt = OPTIMIZERS[optimizer](head, lr, momentum=momentum, beta1=momentum)
    except KeyError:
        raise ValueError(f"unknown optimizer {optimizer!r}") from None
    xin = x if features is None else features
    xvin = xv if features_val is None else features_val

    best = _mse(head, xvin, yv)
    best_epoch = 0
    best_params = [(b.weight.copy(), b.bias.copy()) for b in head]
    history = [{"epoch": 0, "train_mse": _mse(head, xin, y), "val_mse": best}]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(xin))
        running = 0.0
        for k, start in enumerate(range(0, len(order), batch_size)):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_grads(head, xin[idx], y[idx])
            if not np.isfinite(loss):
                peak = max(float(np.abs(b.weight).max()) for b in head)
                raise NumericError(f"loss became {loss} at epoch {epoch}, batch {k}; "
                                   f"largest |weight| {peak:.3g}, lr {lr}, optimizer {optimizer}")
            running += loss * len(idx)
            opt.step(head, grads)
        val = _mse(head, xvin, yv)
        history.append({"epoch": epoch, "train_mse": running / len(xin), "val_mse": val})
        if val < best:
            best, best_epoch = val, epoch
            best_params = [(b.weight.copy(), b.bias.copy()) for b in head]
    for b, (w, bias) in zip(head, best_params):
        b.weight[...] = w
        b.bias[...] = bias
    return best, best_epoch, history


def train(model: PredictorModel, train_set, val_set, epochs: int = 100, lr: float = 1e-3, *,
          batch_size: int = 128, momentum: float = 0.9, optimizer: str = "adam",
          seed: int | None = None) -> tuple[PredictorModel, TrainReport]:
    """Fit all blocks to minimize the squared error against target curves.

    ``train_set``/``val_set`` are :class:`TrainingSet` objects (inputs are
    normalized with the training set's statistics) or ``(x, y)`` arrays that
    are used as given.  The returned model holds the best-validation
    checkpoint; with ``epochs=0`` it equals the input model.
    """
    started = time.perf_counter()
    out = model.copy()
    norm = None
    if isinstance(train_set, TrainingSet):
        norm = train_set.normalization
        out.normalization = norm
        out.meta.update(hour_shift=train_set.hour_shift, zone=train_set.meta.get("zone"),
                        window=[train_set.shape.m, train_set.shape.n, train_set.shape.window_hours,
                                train_set.shape.steps_per_hour])
    x, y = _as_arrays(train_set, norm)
    xv, yv = _as_arrays(val_set, norm)
    _check_shapes(out, x, y)
    seed = out.meta.get("seed", 0) if seed is None else seed
    best, best_epoch, history = _fit(out.blocks, x, y, xv, yv, epochs=epochs, lr=lr,
                                     batch_size=batch_size, momentum=momentum, seed=seed,
                                     first_trainable=0, optimizer=optimizer)
    report = TrainReport(epochs, best, best_epoch, out.checksum(), history, seed,
                         time.perf_counter() - started)
    log.info("trained seed %s: best val mse %.4f at epoch %d", seed, best, best_epoch)
    return out, report


def train_multistart(seeds, segments, train_set: TrainingSet, val_set: TrainingSet, *,
                     hidden=DEFAULT_HIDDEN, epochs=100, lr=1e-3, batch_size=128, momentum=0.9,
                     optimizer="adam", score=None):
    """Train one network per seed and keep the best one.

    Without ``score`` the lowest validation error wins; otherwise the model
    with the highest ``score(model)`` (e.g. arbitrage profit on the
    validation range), ties going to the earlier seed.
    """
    results = []
    for seed in seeds:
        model = init_model(seed, segments, train_set.x.shape[1:], hidden)
        results.append(train(model, train_set, val_set, epochs, lr, batch_size=batch_size,
                             momentum=momentum, optimizer=optimizer, seed=seed))
    if score is None:
        best = min(results, key=lambda r: r[1].best_validation_mse)
    else:
        scores = [float(score(r[0])) for r in results]
        best = results[int(np.argmax(scores))]
        for r, sc in zip(results, scores):
            r[0].meta["selection_score"] = sc
    return best[0], [r[1] for r in results]


def transfer(model: PredictorModel, new_set, epochs: int = 25, lr: float = 1e-3, *,
             val_set=None, val_fraction: float = 0.2, batch_size: int = 128,
             momentum: float = 0.9, optimizer: str = "adam", seed: int | None = None
             ) -> tuple[PredictorModel, TrainReport]:
    """Retrain only the output block on data from a new zone.

    All other blocks are copied bit for bit.  Inputs are normalized with the
    pre-trained model's statistics, since the frozen layers were fitted to
    them.  Without ``val_set`` the last ``val_fraction`` of ``new_set`` is
    held out.
    """
    started = time.perf_counter()
    if isinstance(new_set, TrainingSet):
        if new_set.segments != model.segments:
            raise DataError(f"set has {new_set.segments} target segments, model has {model.segments}")
        if val_set is None:
            new_set, val_set = new_set.split(val_fraction)
    norm = model.normalization
    x, y = _as_arrays(new_set, norm)
    xv, yv = _as_arrays(val_set, norm)
    out = model.copy()
    _check_shapes(out, x, y)
    frozen = out.blocks[:-1]
    features = forward(frozen, x, linear_out=False) if frozen else x
    features_val = forward(frozen, xv, linear_out=False) if frozen else xv
    seed = out.meta.get("seed", 0) if seed is None else seed
    best, best_epoch, history = _fit(out.blocks, x, y, xv, yv, epochs=epochs, lr=lr,
                                     batch_size=batch_size, momentum=momentum, seed=seed,
                                     first_trainable=len(out.blocks) - 1, optimizer=optimizer,
                                     features=features, features_val=features_val)
    if isinstance(new_set, TrainingSet):
        out.meta["transfer_zone"] = new_set.meta.get("zone")
    report = TrainReport(epochs, best, best_epoch, out.checksum(), history, seed,
                         time.perf_counter() - started)
    return out, report


def _check_shapes(model, x, y):
    if x.ndim != 2 or x.shape[1] != model.input_size:
        raise DataError(f"inputs have {x.shape[-1]} features, model expects {model.input_size}")
    if y.ndim != 2 or y.shape[1] != model.segments:
        raise DataError(f"targets have {y.shape[-1]} segments, model predicts {model.segments}")


def project_monotone(values: np.ndarray) -> np.ndarray:
    """Closest non-increasing sequence in least squares (pooled adjacent means)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return isotonic_regression(values, increasing=False).x
    return np.stack([isotonic_regression(v, increasing=False).x for v in values])


def predict(model: PredictorModel, x_raw: np.ndarray) -> np.ndarray:
    """Projected curves ``(K, S)`` for raw windows ``(K, R, F)`` or ``(K, D)``."""
    flat = x_raw.reshape(len(x_raw), -1)
    if flat.shape[1] != model.input_size:
        raise DataError(f"window has {flat.shape[1]} features, model expects {model.input_size}")
    if model.normalization is not None:
        flat = model.normalization.apply(flat)
    out = forward(model.blocks, flat)
    if not np.all(np.isfinite(out)):
        raise NumericError("model produced non-finite predictions")
    return project_monotone(out)


def predict_curve(model: PredictorModel, window, energy_mwh: float = 1.0) -> ValueCurve:
    x = getattr(window, "x", window)
    t = getattr(window, "t", -1)
    return ValueCurve(t, predict(model, np.asarray(x)[None])[0], energy_mwh)


@dataclass
class ModelSource:
    """Adapter that lets :func:`dispatch.simulate` query a trained model."""

    model: PredictorModel

    @property
    def segments(self) -> int:
        return self.model.segments

    @property
    def hour_shift(self) -> int:
        return self.model.hour_shift

    def predict(self, series, anchors):
        m, n, wh, _ = self.model.meta["window"]
        shape = WindowShape.for_series(series, m, n, wh)
        out = np.empty((len(anchors), self.segments))
        for i in range(0, len(anchors), 2048):
            chunk = np.asarray(anchors[i:i + 2048])
            out[i:i + len(chunk)] = predict(self.model, build_inputs(series, chunk, shape))
        return out


# Model file: magic, version byte, uint32 header length, JSON header, then
# little-endian float64 arrays in the order listed by the header.
_MODEL_MAGIC = b"SBPM"
_MODEL_VERSION = 1


def save_model(path, model: PredictorModel) -> None:
    arrays = []
    layout = []
    for b in model.blocks:
        layout.append({"name": b.name, "weight": list(b.weight.shape), "bias": list(b.bias.shape)})
        arrays += [b.weight, b.bias]
    header = {"version": _MODEL_VERSION, "blocks": layout, "meta": model.meta,
              "normalization": model.normalization is not None}
    if model.normalization is not None:
        arrays += [model.normalization.mean, model.normalization.scale]
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC + struct.pack("<BI", _MODEL_VERSION, len(raw)) + raw)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> PredictorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    version, hlen = struct.unpack_from("<BI", blob, 4)
    if version > _MODEL_VERSION:
        raise DataError(f"{path}: model version {version} is newer than supported")
    header = json.loads(blob[9:9 + hlen])
    pos = 9 + hlen

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(float)
        pos += 8 * count
        return a

    blocks = [Block(spec["name"], take(tuple(spec["weight"])), take(tuple(spec["bias"])))
              for spec in header["blocks"]]
    norm = None
    if header["normalization"]:
        d = blocks[0].weight.shape[0]
        norm = Normalization(take((d,)), take((d,)))
    return PredictorModel(blocks, header["meta"], norm)
