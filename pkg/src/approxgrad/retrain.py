"""Deterministic MLP retraining with approximate multipliers in the loop.

Every linear layer runs as a fake-quantized approximate GEMM in the forward
pass and backpropagates through the chosen gradient estimator. Gradient
tables depend only on the multiplier, so they are built once per run.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .appgemm import fq_linear_backward, fq_linear_forward
from .data import STREAM_INIT, STREAM_SHUFFLE, Dataset, rng
from .fakequant import ASYMMETRIC, MODES, SYMMETRIC, QuantParams, RangeOverflowError
from .gradest import ESTIMATOR_KINDS, EstimatorPair, make_estimator
from .multlib import Multiplier, build_exact

CHECKPOINT_FORMAT = "approxgrad-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class ModelSpec:
    sizes: tuple[int, ...]
    activations: tuple[str, ...] | None = None
    bias: bool = True
    bits: int = 8
    mode: str = ASYMMETRIC
    # indices of layers kept on the exact multiplier
    exact_layers: tuple[int, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {self.sizes}")
        if sizes[-1] < 2:
            raise ValueError("the output layer needs one unit per class (>= 2)")
        acts = self.activations
        acts = ("relu",) * (len(sizes) - 2) if acts is None else tuple(acts)
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"need {len(sizes) - 2} hidden activations, got {len(acts)}")
        if any(a not in ("relu", "none") for a in acts):
            raise ValueError(f"activations must be 'relu' or 'none', got {acts}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if any(not 0 <= i < len(sizes) - 1 for i in self.exact_layers):
            raise ValueError(f"exact_layers {self.exact_layers} out of range")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "exact_layers", tuple(int(i) for i in self.exact_layers))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        d["activations"] = list(self.activations)
        d["exact_layers"] = list(self.exact_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            tuple(d["sizes"]),
            tuple(d["activations"]) if d.get("activations") is not None else None,
            bool(d.get("bias", True)),
            int(d.get("bits", 8)),
            d.get("mode", ASYMMETRIC),
            tuple(d.get("exact_layers", ())),
        )


def thirds_schedule(epochs: int) -> tuple[tuple[int, int, float], ...]:
    """0.001 / 0.0005 / 0.00025 over consecutive thirds of the run."""
    a = max(1, round(epochs / 3))
    b = max(a + 1, round(2 * epochs / 3))
    sched = [(1, a, 0.001), (a + 1, b, 0.0005), (b + 1, epochs, 0.00025)]
    return tuple((s, e, r) for s, e, r in sched if s <= e)


@dataclass(frozen=True)
class TrainConfig:
    estimator: str = "ste"
    multiplier: str = ""
    hws: int | None = None
    epochs: int = 30
    batch_size: int = 64
    lr_schedule: tuple[tuple[int, int, float], ...] | None = None
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    product_path_only: bool = False
    eval_batch: int = 256

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_KINDS:
            raise ValueError(f"estimator must be one of {ESTIMATOR_KINDS}, got {self.estimator!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.eval_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        sched = thirds_schedule(self.epochs) if self.lr_schedule is None else self.lr_schedule
        sched = tuple((int(s), int(e), float(r)) for s, e, r in sched)
        if not sched:
            raise ValueError("learning-rate schedule is empty")
        for s, e, r in sched:
            if s > e or r < 0 or not math.isfinite(r):
                raise ValueError(f"invalid schedule entry {(s, e, r)}")
        object.__setattr__(self, "lr_schedule", sched)

    def rate(self, epoch: int) -> float:
        for s, e, r in self.lr_schedule:
            if s <= epoch <= e:
                return r
        return self.lr_schedule[-1][2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_schedule"] = [list(t) for t in self.lr_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("lr_schedule") is not None:
            d["lr_schedule"] = tuple(tuple(t) for t in d["lr_schedule"])
        return cls(**d)


@dataclass(eq=False)
class Checkpoint:
    model: ModelSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    wparams: list[QuantParams | None] = field(default_factory=list)
    xparams: list[QuantParams | None] = field(default_factory=list)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.model, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                          list(self.wparams), list(self.xparams))

    def to_dict(self) -> dict:
        def qp(p):
            return None if p is None else p.as_dict()

        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model": self.model.to_dict(),
            "layers": [
                {
                    "shape": list(w.shape),
                    "weight": [float(v) for v in w.reshape(-1)],
                    "bias": [float(v) for v in b],
                    "wparams": qp(self.wparams[i] if i < len(self.wparams) else None),
                    "xparams": qp(self.xparams[i] if i < len(self.xparams) else None),
                }
                for i, (w, b) in enumerate(zip(self.weights, self.biases))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a version-1 approxgrad checkpoint")
        model = ModelSpec.from_dict(d["model"])
        ws, bs, wp, xp = [], [], [], []
        for i, layer in enumerate(d["layers"]):
            shape = (model.sizes[i + 1], model.sizes[i])
            if tuple(layer["shape"]) != shape:
                raise ValueError(f"layer {i}: shape {layer['shape']} does not match model {list(shape)}")
            ws.append(np.array(layer["weight"], dtype=np.float64).reshape(shape))
            bs.append(np.array(layer["bias"], dtype=np.float64))
            wp.append(None if layer["wparams"] is None else QuantParams.from_dict(layer["wparams"]))
            xp.append(None if layer["xparams"] is None else QuantParams.from_dict(layer["xparams"]))
        if len(ws) != model.n_layers:
            raise ValueError("checkpoint layer count does not match model")
        return cls(model, ws, bs, wp, xp)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(ckpt.to_dict(), sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_dict(json.loads(Path(path).read_text()))


def init_checkpoint(model: ModelSpec, seed: int) -> Checkpoint:
    """Glorot-uniform weights, zero biases."""
    g = rng(seed, STREAM_INIT)
    ws, bs = [], []
    for fan_in, fan_out in zip(model.sizes[:-1], model.sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(g.uniform(-limit, limit, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    n = model.n_layers
    return Checkpoint(model, ws, bs, [None] * n, [None] * n)


def _check_compat(model: ModelSpec, m: Multiplier) -> None:
    if m.bits != model.bits:
        raise ValueError(f"multiplier is {m.bits}-bit but the model quantizes to {model.bits} bits")
    if m.signed != (model.mode == SYMMETRIC):
        want = "signed" if model.mode == SYMMETRIC else "unsigned"
        raise ValueError(f"{model.mode} quantization needs a {want} multiplier, got {m.name}")


class _Network:
    """Per-layer multipliers and estimators bound to one checkpoint."""

    def __init__(self, ckpt: Checkpoint, m: Multiplier, est: EstimatorPair | None,
                 product_path_only: bool = False, backend: str | None = None):
        model = ckpt.model
        _check_compat(model, m)
        self.ckpt = ckpt
        self.model = model
        self.product_path_only = product_path_only
        self.backend = backend
        exact = build_exact(m.bits, m.signed) if model.exact_layers else None
        exact_est = make_estimator(exact, "ste") if exact is not None else None
        self.mults = [exact if i in model.exact_layers else m for i in range(model.n_layers)]
        self.ests = [exact_est if i in model.exact_layers else est for i in range(model.n_layers)]

    def forward(self, x: np.ndarray, keep: bool = False):
        model, ck = self.model, self.ckpt
        cache = []
        h = x
        for i in range(model.n_layers):
            y, ctx = fq_linear_forward(ck.weights[i], h.T, self.mults[i], model.bits, model.mode,
                                       backend=self.backend)
            z = y.T
            if model.bias:
                z = z + ck.biases[i]
            relu = i < model.n_layers - 1 and model.activations[i] == "relu"
            h = np.maximum(z, 0.0) if relu else z
            if keep:
                cache.append((ctx, z, relu))
        return h, cache

    def backward(self, cache, dlogits: np.ndarray):
        n = self.model.n_layers
        gw, gb = [None] * n, [None] * n
        dz = dlogits
        for i in reversed(range(n)):
            ctx, _, _ = cache[i]
            gb[i] = dz.sum(axis=0)
            dw, dx = fq_linear_backward(ctx, dz.T, self.ests[i], product_path_only=self.product_path_only,
                                        need_x=i > 0, backend=self.backend)
            gw[i] = dw
            if i > 0:
                _, zprev, relu_prev = cache[i - 1]
                dz = dx.T * (zprev > 0) if relu_prev else dx.T
        return gw, gb


def softmax_xent(logits: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params):
        pass

    def step(self, params, grads, lr):
        for p, g in zip(params, grads):
            p -= lr * g


def _predict(net: _Network, x: np.ndarray, batch: int) -> np.ndarray:
    out = []
    for s in range(0, len(x), batch):
        logits, _ = net.forward(x[s:s + batch])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(ckpt: Checkpoint, data: Dataset, multiplier: Multiplier, split: str = "eval",
             batch: int = 256, backend: str | None = None) -> float:
    """Top-1 accuracy of fake-quantized approximate inference."""
    x, y = data.split(split)
    if x.shape[1] != ckpt.model.sizes[0]:
        raise ValueError(f"data has {x.shape[1]} features but the model expects {ckpt.model.sizes[0]}")
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    net = _Network(ckpt, multiplier, None, backend=backend)
    return float(np.mean(_predict(net, x, batch) == y))


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    eval_acc: float


@dataclass
class TrainReport:
    config: dict
    model: dict
    multiplier: str
    initial_acc: float
    final_acc: float
    epochs: list[EpochStats]
    wall_time: float = 0.0
    epoch_times: list[float] = field(default_factory=list)

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "config": self.config,
            "model": self.model,
            "multiplier": self.multiplier,
            "initial_acc": self.initial_acc,
            "final_acc": self.final_acc,
            "final_train_loss": self.epochs[-1].train_loss,
            "epochs": [asdict(e) for e in self.epochs],
        }
        if timing:
            d["wall_time"] = self.wall_time
            d["epoch_times"] = list(self.epoch_times)
        return d

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "train_acc", "eval_acc"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.train_acc), repr(e.eval_acc)])
        return buf.getvalue()


def train(model: ModelSpec, data: Dataset, cfg: TrainConfig, multiplier: Multiplier,
          init: Checkpoint | None = None, backend: str | None = None):
    """Retrain ``model`` with ``multiplier`` in every approximate layer.

    Returns ``(checkpoint, report)``. Raises :class:`TrainingDiverged` when a
    batch loss becomes non-finite.
    """
    _check_compat(model, multiplier)
    if data.dim != model.sizes[0]:
        raise ValueError(f"data has {data.dim} features but the model expects {model.sizes[0]}")
    if data.classes > model.sizes[-1]:
        raise ValueError(f"{data.classes} classes but only {model.sizes[-1]} outputs")
    t_start = time.perf_counter()
    ckpt = init_checkpoint(model, cfg.seed) if init is None else init.copy()
    if ckpt.model != model:
        raise ValueError("initial checkpoint was built for a different model")
    est = make_estimator(multiplier, cfg.estimator, cfg.hws)
    net = _Network(ckpt, multiplier, est, cfg.product_path_only, backend)
    params = ckpt.weights + ckpt.biases
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps) if cfg.optimizer == "adam" else SGD(params)
    shuffle = rng(cfg.seed, STREAM_SHUFFLE)
    x_eval, y_eval = data.split("eval")

    initial_acc = float(np.mean(_predict(net, x_eval, cfg.eval_batch) == y_eval))
    stats, times = [], []
    n = len(data.y_train)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.rate(epoch)
        order = shuffle.permutation(n)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            try:
                logits, cache = net.forward(xb, keep=True)
            except RangeOverflowError as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}, batch {s // cfg.batch_size}") from None
            loss, dlogits = softmax_xent(logits, yb)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {s // cfg.batch_size}")
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            gw, gb = net.backward(cache, dlogits)
            if not model.bias:
                gb = [np.zeros_like(b) for b in gb]
            opt.step(params, gw + gb, lr)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDiverged(f"non-finite parameters after epoch {epoch}, batch {s // cfg.batch_size}")
            ckpt.wparams = [c[0].pw for c in cache]
            ckpt.xparams = [c[0].px for c in cache]
        eval_acc = float(np.mean(_predict(net, x_eval, cfg.eval_batch) == y_eval))
        stats.append(EpochStats(epoch, lr, loss_sum / n, correct / n, eval_acc))
        times.append(time.perf_counter() - t0)

    report = TrainReport(cfg.to_dict(), model.to_dict(), multiplier.name, initial_acc,
                         stats[-1].eval_acc, stats, time.perf_counter() - t_start, times)
    return ckpt, report


def thread_cap(default: int = 3) -> int:
    """Worker count, capped by ``APPROXGRAD_THREADS`` when set."""
    env = os.environ.get("APPROXGRAD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"APPROXGRAD_THREADS must be an integer, got {env!r}") from None
    return max(1, min(default, os.cpu_count() or 1))


@dataclass
class ComparisonReport:
    multiplier: str
    runs: dict[str, tuple[Checkpoint, TrainReport]]

    @property
    def initial_acc(self) -> float:
        return self.runs["ste"][1].initial_acc

    def final(self, kind: str) -> float:
        return self.runs[kind][1].final_acc

    def deltas(self) -> dict[str, float]:
        ste = self.final("ste")
        return {f"{k}_impr_vs_ste": self.final(k) - ste for k in ("lut1d", "lut2d")}

    def to_dict(self) -> dict:
        return {
            "multiplier": self.multiplier,
            "initial_acc": self.initial_acc,
            "final_acc": {k: self.final(k) for k in ESTIMATOR_KINDS},
            "final_train_loss": {k: self.runs[k][1].epochs[-1].train_loss for k in ESTIMATOR_KINDS},
            "deltas": self.deltas(),
            "runs": {k: self.runs[k][1].to_dict() for k in ESTIMATOR_KINDS},
        }

    def to_csv(self) -> str:
        d = self.deltas()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["multiplier", "initial_acc", "ste", "lut1d", "lut1d_impr_vs_ste", "lut2d", "lut2d_impr_vs_ste"])
        w.writerow([self.multiplier, repr(self.initial_acc), repr(self.final("ste")), repr(self.final("lut1d")),
                    repr(d["lut1d_impr_vs_ste"]), repr(self.final("lut2d")), repr(d["lut2d_impr_vs_ste"])])
        return buf.getvalue()


def compare_estimators(model: ModelSpec, data: Dataset, base_cfg: TrainConfig, multiplier: Multiplier,
                       init: Checkpoint | None = None, backend: str | None = None,
                       workers: int | None = None) -> ComparisonReport:
    """Train once per estimator from the same seed and data."""
    workers = thread_cap() if workers is None else max(1, workers)

    def run(kind):
        return train(model, data, replace(base_cfg, estimator=kind), multiplier, init, backend)

    if workers == 1:
        results = [run(k) for k in ESTIMATOR_KINDS]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(ESTIMATOR_KINDS))) as pool:
            results = list(pool.map(run, ESTIMATOR_KINDS))
    return ComparisonReport(multiplier.name, dict(zip(ESTIMATOR_KINDS, results)))


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
