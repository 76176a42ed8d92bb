"""Training loop, optimizers, metrics CSV and the binary checkpoint format."""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Rng
from .losses import (
    LOSS_MODES,
    LossWeights,
    PredictionBundle,
    auxiliary_term,
    classification_term,
    distillation_for_mode,
    total_objective,
)
from .model import Model, ModelSpec, evaluate, forward
from .synth import Dataset, MultiViewBatch

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 2.6e-4
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 0.0
    warmup_epochs: int = 10
    decay_epochs: Optional[tuple[int, ...]] = None
    decay_factor: float = 0.1
    epochs: int = 200
    batch_size: int = 64
    loss_mode: str = "ce+mv2d"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    bottleneck_samples: int = 1

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.bottleneck_samples < 1:
            raise ValueError("epochs, batch_size and bottleneck_samples must be >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.decay_epochs is not None:
            object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))

    def milestones(self) -> tuple[int, ...]:
        if self.decay_epochs is not None:
            return self.decay_epochs
        return (max(1, round(2 * self.epochs / 3)),)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: linear warm-up, then step decay."""
        lr = self.lr
        if self.warmup_epochs > 0 and epoch < self.warmup_epochs:
            lr *= (epoch + 1) / self.warmup_epochs
        for m in self.milestones():
            if epoch >= m:
                lr *= self.decay_factor
        return lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["decay_epochs"] = None if self.decay_epochs is None else list(self.decay_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


class Adam:
    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float):
        for p, b in zip(self.params, self.buf):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
            b *= self.momentum
            b += g
            p.value = p.value - lr * b


def make_optimizer(model: Model, config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(model.params.values(), config.betas, config.adam_eps, config.weight_decay)
    return SGDMomentum(model.params.values(), config.momentum, config.weight_decay)


def _kl_rows(p: np.ndarray, q: np.ndarray) -> float:
    pf, qf = np.maximum(p, ad.EPS), np.maximum(q, ad.EPS)
    return float((p * (np.log(pf) - np.log(qf))).sum() / p.shape[0])


def monitor_terms(bundle: PredictionBundle) -> tuple[float, float]:
    """(sufficiency KL sum, consistency KL sum) from values only, no graph."""
    suff = sum(_kl_rows(o.value, r.value) for o, r in zip(bundle.obs, bundle.rep))
    cons = sum(_kl_rows(bundle.joint.value, q.value) for q in bundle.loo)
    return suff, cons


def step_loss(model: Model, batch: MultiViewBatch, config: TrainConfig, rng: Rng):
    """Loss node for one minibatch plus monitored component values."""
    weights = config.weights
    if config.loss_mode == "ce-only":
        weights = LossWeights(weights.ce_weight, weights.task_aux_weight, 0.0)
    losses, parts = [], np.zeros(3)
    for _ in range(config.bottleneck_samples):
        bundle = forward(model, batch, rng).bundle
        distill = distillation_for_mode(bundle, config.loss_mode)
        losses.append(total_objective(bundle, batch.labels, weights, distill))
        ce = weights.ce_weight * classification_term(bundle, batch.labels).value
        ce += weights.task_aux_weight * auxiliary_term(bundle, batch.labels).value
        parts += (float(ce), *monitor_terms(bundle))
    s = config.bottleneck_samples
    loss = losses[0] if s == 1 else (1.0 / s) * ad.add_n(losses)
    return loss, parts / s


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    checkpoint: "Checkpoint"


ProbeFn = Callable[[Model, int], dict]


def train(model: Model, dataset: Dataset, config: TrainConfig,
          probe: Optional[ProbeFn] = None, probe_epochs=()) -> TrainResult:
    """Train in place. Records one metrics dict per epoch (1-based ``epoch``)."""
    if dataset.train.n_views != model.spec.n_views:
        raise ValueError("dataset and model disagree on the number of views")
    shuffle_rng = Rng(config.seed, stream=20)
    sample_rng = Rng(config.seed, stream=21)
    opt = make_optimizer(model, config)
    n = len(dataset.train)
    n_views = model.spec.n_views
    probe_epochs = set(probe_epochs)
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, config.batch_size):
            idx = np.sort(perm[start:start + config.batch_size])
            batch = dataset.train.subset(idx)
            try:
                loss, parts = step_loss(model, batch, config, sample_rng)
            except FloatingPointError as exc:
                raise DivergenceError(f"non-finite values at epoch {epoch + 1}: {exc}") from exc
            value = float(loss.value)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
            ad.backward(loss)
            opt.step(lr)
            model.zero_grad()
            sums += len(idx) * np.array([value, *parts])
        sums /= n
        record = {
            "epoch": epoch + 1,
            "loss_total": float(sums[0]),
            "loss_ce": float(sums[1]),
            "loss_vsd": float(sums[2]),
            "loss_consistency": float(sums[3]),
            "acc_train": evaluate(model, dataset.train).accuracy,
        }
        val = evaluate(model, dataset.val)
        record["acc_val"] = val.accuracy
        for i in range(n_views if n_views > 1 else 0):
            record[f"acc_loo_{i + 1}"] = val.per_head[f"loo{i + 1}"]
        if probe is not None and (epoch + 1) in probe_epochs:
            record.update(probe(model, epoch + 1))
        history.append(record)
        if not all(np.isfinite(v) for v in record.values() if isinstance(v, float)):
            raise DivergenceError(f"non-finite metrics at epoch {epoch + 1}")
    ckpt = Checkpoint(
        params={k: v.copy() for k, v in model.state_arrays().items()},
        spec={"model": model.spec.to_dict(), "train": config.to_dict(), "data": dataset.spec.to_dict()},
        rng_state={"shuffle": shuffle_rng.state, "sample": sample_rng.state},
        history=history,
    )
    return TrainResult(model, history, ckpt)


METRIC_BASE = ["epoch", "loss_total", "loss_ce", "loss_vsd", "loss_consistency", "acc_train", "acc_val"]


def metric_columns(n_views: int) -> list[str]:
    return METRIC_BASE + ([f"acc_loo_{i + 1}" for i in range(n_views)] if n_views > 1 else [])


def write_metrics_csv(path, history: list[dict], n_views: int, config_echo: dict):
    cols = metric_columns(n_views)
    with open(path, "w") as fh:
        fh.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
        fh.write(",".join(cols) + "\n")
        for rec in history:
            fh.write(",".join(str(rec[c]) if c == "epoch" else repr(float(rec[c])) for c in cols) + "\n")


# checkpoint layout (little-endian):
#   magic(8) version(u32) header_len(u64) header_json
#   n_arrays(u32) { name_len(u16) name ndim(u8) dims(u64 * ndim) data(f64 * size) }*
#   crc32(u32) over everything before it
MAGIC = b"MVDCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    spec: dict
    rng_state: dict
    history: list[dict]

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"spec": self.spec, "rng_state": self.rng_state, "history": self.history},
            sort_keys=True,
        ).encode()
        out = [MAGIC, struct.pack("<IQ", VERSION, len(header)), header, struct.pack("<I", len(self.params))]
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            raw = name.encode()
            out.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(arr.tobytes())
        body = b"".join(out)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < len(MAGIC) + 16 or not data.startswith(MAGIC):
            raise CheckpointError("not a checkpoint (bad magic)")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise CheckpointError("checksum mismatch: file truncated or corrupt")
        pos = len(MAGIC)
        version, hlen = struct.unpack_from("<IQ", body, pos)
        if version != VERSION:
            raise CheckpointError(f"checkpoint version {version}, expected {VERSION}")
        pos += 12
        try:
            header = json.loads(body[pos:pos + hlen].decode())
            pos += hlen
            (count,) = struct.unpack_from("<I", body, pos)
            pos += 4
            params = {}
            for _ in range(count):
                nlen, ndim = struct.unpack_from("<HB", body, pos)
                pos += 3
                name = body[pos:pos + nlen].decode()
                pos += nlen
                shape = struct.unpack_from(f"<{ndim}Q", body, pos)
                pos += 8 * ndim
                size = int(np.prod(shape, dtype=np.int64))
                if pos + 8 * size > len(body):
                    raise CheckpointError("array data truncated")
                params[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
                pos += 8 * size
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
        if pos != len(body):
            raise CheckpointError("trailing bytes after arrays")
        return cls(params, header["spec"], header["rng_state"], header["history"])


def save_checkpoint(ckpt: Checkpoint, path):
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return Checkpoint.from_bytes(data)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    model = Model(ModelSpec.from_dict(ckpt.spec["model"]))
    model.load_arrays(ckpt.params)
    return model
