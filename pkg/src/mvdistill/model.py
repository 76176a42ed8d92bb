"""Per-view encoder -> stochastic bottleneck -> prediction heads.

For every view i the model produces an observation feature v_i (encoder
output) and a representation z_i sampled from a Gaussian whose mean and
log-variance come from the bottleneck MLP. Heads:

* obs_i   : p(y | v_i)
* rep_i   : p(y | z_i)
* joint   : p(y | z_1..z_n)            (n >= 2)
* loo_i   : p(y | z_1..z_n without z_i) (n >= 2, excluded block zeroed)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Rng
from .losses import PredictionBundle
from .synth import MultiViewBatch


@dataclass(frozen=True)
class ModelSpec:
    input_dims: tuple[int, ...]
    n_classes: int
    encoder_widths: tuple[int, ...] = (64, 32)
    bottleneck_hidden: int = 32
    bottleneck_dim: int = 8
    stochastic: bool = True
    init_log_var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        dims = [*self.input_dims, *self.encoder_widths, self.bottleneck_hidden, self.bottleneck_dim, self.n_classes]
        if not self.input_dims or not self.encoder_widths or min(dims) < 1:
            raise ValueError("all model dimensions must be >= 1")

    @property
    def n_views(self) -> int:
        return len(self.input_dims)

    @property
    def head_count(self) -> int:
        n = self.n_views
        return 2 * n if n == 1 else 3 * n + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_dims"] = list(self.input_dims)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _dense(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)


class Model:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.params: dict[str, Node] = {}
        rng = Rng(seed, stream=10)
        k, d = spec.n_classes, spec.bottleneck_dim
        for i, d_in in enumerate(spec.input_dims):
            widths = (d_in, *spec.encoder_widths)
            for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                self._add(f"view{i}.enc{layer}", rng, a, b)
            h = widths[-1]
            self._add(f"view{i}.obs_head", rng, h, k)
            self._add(f"view{i}.ib0", rng, h, spec.bottleneck_hidden)
            self._add(f"view{i}.ib_out", rng, spec.bottleneck_hidden, 2 * d)
            self.params[f"view{i}.ib_out.b"].value[d:] = spec.init_log_var
            self._add(f"view{i}.rep_head", rng, d, k)
        if spec.n_views > 1:
            self._add("joint_head", rng, spec.n_views * d, k)
            for i in range(spec.n_views):
                self._add(f"loo{i}_head", rng, spec.n_views * d, k)

    def _add(self, name: str, rng: Rng, fan_in: int, fan_out: int):
        self.params[f"{name}.W"] = ad.parameter(_dense(rng, fan_in, fan_out), f"{name}.W")
        self.params[f"{name}.b"] = ad.parameter(np.zeros(fan_out), f"{name}.b")

    def _linear(self, name: str, x: Node) -> Node:
        return ad.add(ad.matmul(x, self.params[f"{name}.W"]), self.params[f"{name}.b"])

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        if set(arrays) != set(self.params):
            raise ValueError("parameter names do not match the model spec")
        for name, value in arrays.items():
            if value.shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            self.params[name].value = np.array(value, dtype=np.float64)

    def encode_view(self, i: int, x: np.ndarray) -> tuple[Node, Node, Node]:
        """(observation feature, bottleneck mean, bottleneck log-variance)."""
        h = ad.constant(x)
        for layer in range(len(self.spec.encoder_widths)):
            h = ad.relu(self._linear(f"view{i}.enc{layer}", h))
        hidden = ad.relu(self._linear(f"view{i}.ib0", h))
        out = self._linear(f"view{i}.ib_out", hidden)
        d = self.spec.bottleneck_dim
        mean, log_var = _split(out, d)
        return h, mean, log_var


def _split(x: Node, d: int) -> tuple[Node, Node]:
    """Column split of the bottleneck output into (mean, log-variance)."""
    def back_a(g):
        full = np.zeros_like(x.value)
        full[:, :d] = g
        x._accumulate(full)

    def back_b(g):
        full = np.zeros_like(x.value)
        full[:, d:] = g
        x._accumulate(full)

    return Node(x.value[:, :d], (x,), back_a), Node(x.value[:, d:], (x,), back_b)


@dataclass
class ForwardResult:
    bundle: PredictionBundle
    means: list[np.ndarray]
    samples: list[np.ndarray]


def forward(model: Model, batch: MultiViewBatch, rng: Optional[Rng] = None, sample: bool = True) -> ForwardResult:
    """Run every head. Samples the bottleneck once when the model is stochastic,
    ``sample`` is true and an rng is given; otherwise uses the mean."""
    spec = model.spec
    if batch.n_views != spec.n_views:
        raise ValueError(f"batch has {batch.n_views} views, model expects {spec.n_views}")
    for i, (x, d_in) in enumerate(zip(batch.views, spec.input_dims)):
        if x.ndim != 2 or x.shape[1] != d_in:
            raise ValueError(f"view {i} has shape {x.shape}, expected (*, {d_in})")
    obs, rep, zs, means = [], [], [], []
    for i, x in enumerate(batch.views):
        h, mean, log_var = model.encode_view(i, x)
        if spec.stochastic and sample and rng is not None:
            z = ad.gaussian_reparameterize(mean, log_var, rng)
        else:
            z = mean
        obs.append(ad.softmax(model._linear(f"view{i}.obs_head", h)))
        rep.append(ad.softmax(model._linear(f"view{i}.rep_head", z)))
        zs.append(z)
        means.append(mean.value)
    if spec.n_views == 1:
        bundle = PredictionBundle(obs, rep, rep[0], [])
    else:
        joint = ad.softmax(model._linear("joint_head", ad.concat(zs)))
        loo = []
        for i in range(spec.n_views):
            masked = [ad.constant(np.zeros_like(z.value)) if j == i else z for j, z in enumerate(zs)]
            loo.append(ad.softmax(model._linear(f"loo{i}_head", ad.concat(masked))))
        bundle = PredictionBundle(obs, rep, joint, loo)
    return ForwardResult(bundle, means, [z.value for z in zs])


EVAL_MODES = ("all-views", "leave-one-out", "single-view")


@dataclass
class EvalResult:
    accuracy: float
    per_head: dict[str, float] = field(default_factory=dict)


def evaluate(model: Model, batch: MultiViewBatch, mode: str = "all-views", view: Optional[int] = None) -> EvalResult:
    """Accuracy of the head selected by ``mode``; the bottleneck mean is used."""
    n = model.spec.n_views
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown eval mode {mode!r}")
    if mode != "all-views" and (view is None or not 0 <= view < n):
        raise IndexError(f"view index {view} invalid for {n} views")
    if mode == "leave-one-out" and n == 1:
        raise ValueError("leave-one-out needs at least two views")
    b = forward(model, batch, sample=False).bundle
    y = batch.labels

    def acc(p: Node) -> float:
        return float(np.mean(np.argmax(p.value, axis=1) == y))

    per_head = {}
    for i in range(n):
        per_head[f"obs{i + 1}"] = acc(b.obs[i])
        per_head[f"rep{i + 1}"] = acc(b.rep[i])
    per_head["joint"] = acc(b.joint)
    for i, p in enumerate(b.loo):
        per_head[f"loo{i + 1}"] = acc(p)
    if mode == "all-views":
        value = per_head["joint"]
    elif mode == "leave-one-out":
        value = per_head[f"loo{view + 1}"]
    else:
        value = per_head[f"rep{view + 1}"]
    return EvalResult(value, per_head)


def representations(model: Model, batch: MultiViewBatch) -> list[np.ndarray]:
    """Bottleneck means per view (the deterministic representation)."""
    return forward(model, batch, sample=False).means
