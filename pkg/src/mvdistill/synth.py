"""Synthetic multi-view data with tunable shared, private and nuisance content.

Two forms: a continuous Gaussian family for training, and a discrete family
whose joint table is exact so the oracle can measure it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .oracle import JointPMF, VariableSpec, attach_channel

SPLIT_FRACTIONS = (0.7, 0.2, 0.1)
MAX_DISCRETE_CELLS = 10**6


def _per_view(value, n_views: int) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        if len(value) != n_views:
            raise ValueError(f"expected {n_views} per-view values, got {value}")
        return tuple(int(v) for v in value)
    return (int(value),) * n_views


@dataclass(frozen=True)
class GeneratorSpec:
    n_views: int = 3
    n_classes: int = 3
    shared_dim: int = 2
    private_dim: int | tuple[int, ...] = 2
    nuisance_dim: int | tuple[int, ...] = 2
    shared_snr: float = 4.0
    private_snr: float = 4.0
    private_label_leak: float = 0.5
    nuisance_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "private_dim", _per_view(self.private_dim, self.n_views))
        object.__setattr__(self, "nuisance_dim", _per_view(self.nuisance_dim, self.n_views))
        if self.n_views < 1 or self.n_classes < 2:
            raise ValueError("need n_views >= 1 and n_classes >= 2")
        if self.shared_dim < 0 or min(self.private_dim) < 0 or min(self.nuisance_dim) < 0:
            raise ValueError("dimensions must be >= 0")
        if self.shared_dim == 0 and min(self.private_dim) == 0:
            raise ValueError("every view needs shared_dim > 0 or private_dim > 0")
        if not (self.shared_snr > 0 and self.private_snr > 0):
            raise ValueError("snr values must be positive")
        if not 0.0 <= self.private_label_leak <= 1.0:
            raise ValueError("private_label_leak must lie in [0, 1]")
        if self.nuisance_scale < 0:
            raise ValueError("nuisance_scale must be >= 0")

    def view_dims(self) -> list[int]:
        return [self.shared_dim + p + q for p, q in zip(self.private_dim, self.nuisance_dim)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["private_dim"] = list(self.private_dim)
        d["nuisance_dim"] = list(self.nuisance_dim)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        for key in ("private_dim", "nuisance_dim"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class MultiViewBatch:
    views: list[np.ndarray]
    labels: np.ndarray
    nuisance: Optional[list[np.ndarray]] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        if any(v.shape[0] != n for v in self.views):
            raise ValueError("all views need the same batch size as labels")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def n_views(self) -> int:
        return len(self.views)

    def subset(self, idx) -> "MultiViewBatch":
        nuis = None if self.nuisance is None else [m[idx] for m in self.nuisance]
        return MultiViewBatch([v[idx] for v in self.views], self.labels[idx], nuis)


@dataclass
class Dataset:
    spec: GeneratorSpec
    train: MultiViewBatch
    val: MultiViewBatch
    test: MultiViewBatch
    indices: dict[str, np.ndarray] = field(default_factory=dict)

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    if d == 0:
        return np.zeros((0, 0))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _geometry(spec: GeneratorSpec):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 1])))
    shared_means = rng.standard_normal((spec.n_classes, spec.shared_dim))
    private_means = [rng.standard_normal((spec.n_classes, p)) for p in spec.private_dim]
    mixers = [_orthogonal(rng, d) for d in spec.view_dims()]
    return shared_means, private_means, mixers


def split_indices(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    perm = rng.permutation(n)
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def sample_continuous(spec: GeneratorSpec, n_samples: int, stream: int = 2) -> MultiViewBatch:
    """Draw ``n_samples`` labelled multi-view samples (no split)."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    shared_means, private_means, mixers = _geometry(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, stream])))
    k = spec.n_classes
    labels = rng.permutation(np.arange(n_samples) % k)
    leak = spec.private_label_leak
    shared_gain = np.sqrt(spec.shared_snr * (1.0 - leak))
    private_gain = np.sqrt(spec.private_snr * leak)
    shared = shared_gain * shared_means[labels] + rng.standard_normal((n_samples, spec.shared_dim))
    views, nuisance = [], []
    for i in range(spec.n_views):
        private = private_gain * private_means[i][labels] + rng.standard_normal((n_samples, spec.private_dim[i]))
        nuis = spec.nuisance_scale * rng.standard_normal((n_samples, spec.nuisance_dim[i]))
        latent = np.concatenate([shared, private, nuis], axis=1)
        views.append(latent @ mixers[i].T)
        nuisance.append(nuis)
    return MultiViewBatch(views, labels, nuisance)


def generate_continuous(spec: GeneratorSpec, n_samples: int) -> Dataset:
    """Sample and split 70/20/10 into train/val/test; deterministic in ``spec.seed``."""
    full = sample_continuous(spec, n_samples)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 3])))
    idx = split_indices(n_samples, rng)
    return Dataset(spec, full.subset(idx["train"]), full.subset(idx["val"]), full.subset(idx["test"]), idx)


def export_dataset(ds: Dataset, out_dir: str | Path, config_echo: Optional[dict] = None) -> list[Path]:
    """One CSV per split; the first line echoes the generator spec, an optional
    second comment line the full run config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, batch in ds.splits().items():
        cols = ["label"] + [f"v{i + 1}_{j}" for i, v in enumerate(batch.views) for j in range(v.shape[1])]
        path = out_dir / f"{name}.csv"
        with open(path, "w") as fh:
            fh.write("# spec: " + json.dumps(ds.spec.to_dict(), sort_keys=True) + "\n")
            if config_echo is not None:
                fh.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
            fh.write(",".join(cols) + "\n")
            data = np.concatenate(batch.views, axis=1) if batch.views else np.zeros((len(batch), 0))
            for y, row in zip(batch.labels, data):
                fh.write(",".join([str(int(y))] + [format(x, ".17g") for x in row]) + "\n")
        paths.append(path)
    return paths


def read_split(path: str | Path) -> tuple[GeneratorSpec, MultiViewBatch]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# spec: "):
            raise ValueError(f"{path} has no spec header")
        spec = GeneratorSpec.from_dict(json.loads(first[len("# spec: "):]))
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    labels = data[:, 0].astype(np.int64)
    bounds = np.cumsum([1] + spec.view_dims())
    views = [data[:, bounds[i]:bounds[i + 1]] for i in range(spec.n_views)]
    return spec, MultiViewBatch(views, labels)


@dataclass(frozen=True)
class DiscreteSpec:
    """Discrete world: one latent route per sample.

    With probability ``1 - private_leak`` the label reaches every view through
    a shared channel; otherwise it reaches exactly one view (chosen uniformly)
    through that view's private channel. Each view observes the pair
    (shared symbol, private symbol), with an erasure symbol where the route is
    closed. Channels keep the label with probability ``1 - noise`` and replace
    it by a uniform symbol otherwise. Views in ``noise_views`` are replaced by
    independent uniform noise.
    """

    n_views: int = 2
    n_classes: int = 2
    private_leak: float = 0.0
    shared_noise: float = 0.0
    private_noise: float = 0.0
    noise_views: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_views < 1 or self.n_classes < 2:
            raise ValueError("need n_views >= 1 and n_classes >= 2")
        for name in ("private_leak", "shared_noise", "private_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def view_cardinality(self) -> int:
        return (self.n_classes + 1) ** 2


@dataclass
class DiscreteWorld:
    spec: DiscreteSpec
    pmf: JointPMF
    channels: dict

    @property
    def label(self) -> str:
        return "y"

    @property
    def views(self) -> list[str]:
        return [f"v{i + 1}" for i in range(self.spec.n_views)]


def symmetric_channel(k: int, noise: float) -> np.ndarray:
    return (1.0 - noise) * np.eye(k) + noise / k


def generate_discrete(spec: DiscreteSpec) -> DiscreteWorld:
    k, n = spec.n_classes, spec.n_views
    card = spec.view_cardinality
    cells = k * card**n
    if cells > MAX_DISCRETE_CELLS:
        raise ValueError(f"discrete world needs {cells} cells, cap is {MAX_DISCRETE_CELLS}")
    erased = k
    shared_ch = symmetric_channel(k, spec.shared_noise)
    private_ch = symmetric_channel(k, spec.private_noise)
    route = np.array([1.0 - spec.private_leak] + [spec.private_leak / n] * n)
    table = np.zeros((k,) + (card,) * n)
    for y in range(k):
        for r, pr in enumerate(route):
            if pr == 0:
                continue
            ch = shared_ch if r == 0 else private_ch
            for sym in range(k):
                w = pr * ch[y, sym] / k
                if w == 0:
                    continue
                idx = [y]
                for i in range(n):
                    s = sym if r == 0 else erased
                    u = sym if r == i + 1 else erased
                    idx.append(s * (k + 1) + u)
                table[tuple(idx)] += w
    for i in spec.noise_views:
        # replace view i by independent uniform noise
        table = table.sum(axis=i + 1, keepdims=True) * np.full(card, 1.0 / card).reshape(
            [1] * (i + 1) + [card] + [1] * (n - i - 1)
        )
    variables = [VariableSpec("y", k)] + [VariableSpec(f"v{i + 1}", card) for i in range(n)]
    channels = {"route": route, "shared": shared_ch, "private": private_ch, "noise_views": tuple(spec.noise_views)}
    return DiscreteWorld(spec, JointPMF.normalized(variables, table), channels)


def decode_view_symbol(code: int, k: int) -> tuple[int, int]:
    """(shared symbol, private symbol); ``k`` marks an erasure."""
    return divmod(int(code), k + 1)


def private_eraser(k: int, alpha: float) -> np.ndarray:
    """Encoder channel that keeps a view's symbol but erases its private part w.p. alpha."""
    card = (k + 1) ** 2
    ch = np.zeros((card, card))
    for code in range(card):
        s, u = decode_view_symbol(code, k)
        ch[code, code] += 1.0 - alpha
        ch[code, s * (k + 1) + k] += alpha
    return ch


def encode_world(world: DiscreteWorld, channels: Sequence[np.ndarray], prefix: str = "z") -> JointPMF:
    """Attach one encoder channel per view; returns pmf over (y, v_*, z_*)."""
    pmf = world.pmf
    for i, ch in enumerate(channels):
        pmf = attach_channel(pmf, f"{prefix}{i + 1}", ch.shape[-1], f"v{i + 1}", ch)
    return pmf
