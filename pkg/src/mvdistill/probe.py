"""Plug-in information estimates and linear probes on learned representations."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import oracle
from .oracle import JointPMF, VariableSpec

DEFAULT_BINS = 3
MIN_SAMPLES_PER_CELL = 50


class UndersampledError(ValueError):
    pass


def discretize(representations: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-frequency binning of every column into codes 0..bins-1.

    Ranks are taken with a stable sort, so ties split deterministically and
    bin counts differ by at most one. A constant column maps to code 0.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    codes = np.zeros(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        col = x[:, j]
        if np.all(col == col[0]):
            warnings.warn(f"column {j} is constant; binned to a single code", RuntimeWarning)
            continue
        ranks = np.empty(n, dtype=np.int64)
        ranks[np.argsort(col, kind="stable")] = np.arange(n)
        codes[:, j] = ranks * bins // n
    return codes


def joint_code(codes: np.ndarray, bins: int) -> np.ndarray:
    """Collapse a (n, d) code matrix to one symbol per row in [0, bins**d)."""
    codes = np.asarray(codes)
    if codes.ndim == 1:
        return codes.astype(np.int64)
    out = np.zeros(codes.shape[0], dtype=np.int64)
    for j in range(codes.shape[1]):
        out = out * bins + codes[:, j]
    return out


def empirical_pmf(columns: Mapping[str, np.ndarray], cardinalities: Optional[Mapping[str, int]] = None) -> JointPMF:
    names = list(columns)
    data = [np.asarray(columns[n], dtype=np.int64) for n in names]
    n = data[0].shape[0]
    if any(d.shape != (n,) for d in data):
        raise ValueError("all columns must be 1-d with equal length")
    if n == 0:
        raise ValueError("no samples")
    cards = []
    for name, d in zip(names, data):
        c = (cardinalities or {}).get(name, int(d.max()) + 1)
        if d.min() < 0 or d.max() >= c:
            raise ValueError(f"codes of {name} outside [0, {c})")
        cards.append(int(c))
    flat = np.ravel_multi_index(data, cards)
    counts = np.bincount(flat, minlength=int(np.prod(cards))).astype(np.float64)
    return JointPMF([VariableSpec(nm, c) for nm, c in zip(names, cards)], counts / n)


def plugin_info(columns: Mapping[str, np.ndarray], a, b, given=(), *,
                cardinalities: Optional[Mapping[str, int]] = None,
                min_per_cell: int = MIN_SAMPLES_PER_CELL) -> float:
    """Plug-in I(a; b | given) in nats from integer-coded samples.

    Refuses tables with fewer than ``min_per_cell`` samples per cell, counted
    over the variables the query touches.
    """
    a, b, given = oracle._names(a), oracle._names(b), oracle._names(given)
    used = {k: columns[k] for k in (*a, *b, *given)}
    pmf = empirical_pmf(used, cardinalities)
    cells = int(np.prod(pmf.shape))
    n = len(next(iter(used.values())))
    if n < min_per_cell * cells:
        raise UndersampledError(f"{n} samples for {cells} cells; need {min_per_cell * cells}")
    if given:
        return oracle.conditional_mutual_info(pmf, a, b, given)
    return oracle.mutual_info(pmf, a, b)


def principal_projection(x: np.ndarray, dims: int = 1) -> np.ndarray:
    """Scores on the top ``dims`` principal components (sign fixed by the loading)."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:dims]
    signs = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    return xc @ (comps * signs[:, None]).T


def canonical_pair(a: np.ndarray, b: np.ndarray, ridge: float = 1e-8) -> tuple[np.ndarray, np.ndarray, float]:
    """First canonical variates of (a, b) and their correlation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    n = a.shape[0]

    def whitener(m):
        c = m.T @ m / n + ridge * np.eye(m.shape[1])
        w, v = np.linalg.eigh(c)
        return v @ np.diag(1.0 / np.sqrt(np.maximum(w, ridge))) @ v.T

    wa, wb = whitener(a), whitener(b)
    u, s, vt = np.linalg.svd(wa @ (a.T @ b / n) @ wb)
    return a @ (wa @ u[:, 0]), b @ (wb @ vt[0]), float(s[0])


def nuisance_info(z: np.ndarray, nuisance: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Plug-in I(z; nuisance) on the first canonical pair, each binned."""
    if nuisance.shape[1] == 0:
        return 0.0
    cz, cn, _ = canonical_pair(z, nuisance)
    return plugin_info(
        {"z": discretize(cz, bins)[:, 0], "n": discretize(cn, bins)[:, 0]}, "z", "n",
        cardinalities={"z": bins, "n": bins},
    )


def representation_codes(reps: Sequence[np.ndarray], bins: int = DEFAULT_BINS, dims: int = 1) -> list[np.ndarray]:
    """One symbol per sample per view: top principal scores, equal-frequency binned."""
    return [joint_code(discretize(principal_projection(z, dims), bins), bins) for z in reps]


def view_specific_plugin(reps: Sequence[np.ndarray], labels: np.ndarray, bins: int = DEFAULT_BINS,
                         dims: int = 1, min_per_cell: int = MIN_SAMPLES_PER_CELL) -> list[float]:
    """Plug-in I(y; z_i | z_rest) for every view."""
    codes = representation_codes(reps, bins, dims)
    card = bins**dims
    n = len(codes)
    cols = {"y": np.asarray(labels)}
    cards = {"y": int(np.max(labels)) + 1}
    for i, c in enumerate(codes):
        cols[f"z{i}"] = c
        cards[f"z{i}"] = card
    out = []
    for i in range(n):
        rest = [f"z{j}" for j in range(n) if j != i]
        out.append(plugin_info(cols, "y", f"z{i}", rest, cardinalities=cards, min_per_cell=min_per_cell))
    return out


PROBE_MODES = ("single-view", "leave-one-out", "all-views")


def probe_accuracy(reps: Sequence[np.ndarray], labels, mode: str = "all-views", view: Optional[int] = None,
                   seed: int = 0, test_fraction: float = 0.3) -> float:
    """Held-out accuracy of a multinomial logistic probe on the selected views."""
    from sklearn.linear_model import LogisticRegression

    labels = np.asarray(labels, dtype=np.int64)
    n_views = len(reps)
    if mode == "all-views":
        feats = list(reps)
    elif mode == "single-view":
        feats = [reps[view]]
    elif mode == "leave-one-out":
        if n_views < 2:
            raise ValueError("leave-one-out needs two or more views")
        feats = [r for j, r in enumerate(reps) if j != view]
    else:
        raise ValueError(f"unknown probe mode {mode!r}")
    x = np.concatenate(feats, axis=1)
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < 20:
        raise ValueError("probe needs at least 20 samples per class")
    rng = np.random.Generator(np.random.PCG64(seed))
    test = np.zeros(len(labels), dtype=bool)
    for c in classes:
        idx = np.flatnonzero(labels == c)
        test[rng.choice(idx, size=int(round(test_fraction * len(idx))), replace=False)] = True
    train = ~test
    if set(np.unique(labels[train])) != set(classes):
        raise ValueError("a class is absent from the probe training split")
    mu, sd = x[train].mean(axis=0), x[train].std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    clf = LogisticRegression(max_iter=5000, tol=1e-8)
    clf.fit(xs[train], labels[train])
    return float(np.mean(clf.predict(xs[test]) == labels[test]))


@dataclass
class ViewProbe:
    plugin_label: float
    plugin_nuisance: float
    plugin_view_specific: float
    acc_single: float
    acc_leave_one_out: Optional[float]


@dataclass
class ProbeReport:
    views: list[ViewProbe] = field(default_factory=list)
    acc_all_views: float = float("nan")

    def to_dict(self) -> dict:
        out = {"acc_all_views": self.acc_all_views}
        for i, v in enumerate(self.views):
            for key, value in asdict(v).items():
                out[f"view{i + 1}.{key}"] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_header(self) -> list[str]:
        return list(self.to_dict())

    def csv_row(self) -> list[str]:
        return ["" if v is None else repr(float(v)) for v in self.to_dict().values()]


def probe_report(reps: Sequence[np.ndarray], labels, nuisance: Optional[Sequence[np.ndarray]] = None,
                 bins: int = DEFAULT_BINS, seed: int = 0) -> ProbeReport:
    labels = np.asarray(labels)
    n = len(reps)
    k = int(labels.max()) + 1
    codes = representation_codes(reps, bins)
    specific = view_specific_plugin(reps, labels, bins) if n > 1 else [float("nan")]
    report = ProbeReport(acc_all_views=probe_accuracy(reps, labels, "all-views", seed=seed))
    for i in range(n):
        label_mi = plugin_info({"y": labels, "z": codes[i]}, "y", "z", cardinalities={"y": k, "z": bins})
        nuis = nuisance_info(reps[i], nuisance[i], bins) if nuisance is not None else float("nan")
        report.views.append(ViewProbe(
            plugin_label=label_mi,
            plugin_nuisance=nuis,
            plugin_view_specific=specific[i] if n > 1 else label_mi,
            acc_single=probe_accuracy(reps, labels, "single-view", i, seed),
            acc_leave_one_out=probe_accuracy(reps, labels, "leave-one-out", i, seed) if n > 1 else None,
        ))
    return report
