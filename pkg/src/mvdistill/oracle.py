"""Exact information measures on small discrete joint distributions.

Everything is in nats. Tables are dense numpy arrays, one axis per variable,
so every quantity reduces to marginal sums over a handful of axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_CELLS = 10**7
SUM_TOL = 1e-12
CLAMP_TOL = 1e-12
TEXT_SUM_TOL = 1e-9


class OracleError(ValueError):
    """Bad query or malformed distribution."""


class InformationConsistencyError(ArithmeticError):
    """A quantity that must be nonnegative came out clearly negative."""


@dataclass(frozen=True)
class VariableSpec:
    name: str
    cardinality: int

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise OracleError(f"invalid variable name {self.name!r}")
        if int(self.cardinality) < 1:
            raise OracleError(f"cardinality of {self.name} must be >= 1")


class JointPMF:
    """Immutable probability table over an ordered tuple of finite variables."""

    __slots__ = ("variables", "probabilities", "_axis")

    def __init__(self, variables: Sequence[VariableSpec | tuple[str, int]], probabilities):
        specs = tuple(v if isinstance(v, VariableSpec) else VariableSpec(*v) for v in variables)
        names = [v.name for v in specs]
        if len(set(names)) != len(names):
            raise OracleError(f"duplicate variable names in {names}")
        shape = tuple(int(v.cardinality) for v in specs)
        cells = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if cells > MAX_CELLS:
            raise OracleError(f"table of {cells} cells exceeds the {MAX_CELLS} cell cap")
        table = np.array(probabilities, dtype=np.float64)
        if table.size != cells:
            raise OracleError(f"table has {table.size} entries, expected {cells}")
        table = table.reshape(shape)
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise OracleError("probabilities must be finite and nonnegative")
        total = table.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise OracleError(f"probabilities sum to {total!r}, not 1")
        table.setflags(write=False)
        object.__setattr__(self, "variables", specs)
        object.__setattr__(self, "probabilities", table)
        object.__setattr__(self, "_axis", {n: i for i, n in enumerate(names)})

    def __setattr__(self, key, value):
        raise AttributeError("JointPMF is immutable")

    def __repr__(self):
        spec = ", ".join(f"{v.name}:{v.cardinality}" for v in self.variables)
        return f"JointPMF({spec})"

    @classmethod
    def normalized(cls, variables, weights) -> "JointPMF":
        w = np.asarray(weights, dtype=np.float64)
        s = w.sum()
        if not s > 0:
            raise OracleError("weights must have positive total mass")
        return cls(variables, w / s)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.probabilities.shape

    def cardinality(self, name: str) -> int:
        return self.shape[self.axis(name)]

    def axis(self, name: str) -> int:
        try:
            return self._axis[name]
        except KeyError:
            raise OracleError(f"unknown variable {name!r}") from None

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        """Marginal table with axes in the order of ``names``."""
        names = list(names)
        if len(set(names)) != len(names):
            raise OracleError(f"repeated names in {names}")
        axes = [self.axis(n) for n in names]
        drop = tuple(i for i in range(len(self.variables)) if i not in axes)
        m = self.probabilities.sum(axis=drop) if drop else self.probabilities
        kept = sorted(axes)
        return np.transpose(m, [kept.index(a) for a in axes])

    def marginal_pmf(self, names: Sequence[str]) -> "JointPMF":
        m = self.marginal(names)
        return JointPMF([self.variables[self.axis(n)] for n in names], m / m.sum())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` outcome tuples; returns an (n, n_vars) integer array."""
        flat = self.probabilities.ravel()
        idx = rng.choice(flat.size, size=n, p=flat / flat.sum())
        return np.stack(np.unravel_index(idx, self.shape), axis=1)


def _names(x) -> list[str]:
    if isinstance(x, str):
        return [x]
    return list(x)


def _disjoint(*groups: Iterable[str]):
    seen: set[str] = set()
    for g in groups:
        g = set(g)
        if seen & g:
            raise OracleError(f"overlapping variable sets: {sorted(seen & g)}")
        seen |= g


def _clamp(value: float, what: str) -> float:
    if value < 0:
        if value >= -CLAMP_TOL:
            return 0.0
        raise InformationConsistencyError(f"{what} = {value!r} is negative beyond tolerance")
    return float(value)


def _plogp_sum(table: np.ndarray) -> float:
    p = table[table > 0]
    return float(-(p * np.log(p)).sum())


def entropy(pmf: JointPMF, vars) -> float:
    vars = _names(vars)
    if not vars:
        raise OracleError("entropy needs at least one variable")
    return _clamp(_plogp_sum(pmf.marginal(vars)), f"H({vars})")


def _joint_entropy(pmf: JointPMF, vars: list[str]) -> float:
    # H of the empty set is 0; used internally by the conditional forms
    return entropy(pmf, vars) if vars else 0.0


def conditional_entropy(pmf: JointPMF, targets, given) -> float:
    targets, given = _names(targets), _names(given)
    if not targets:
        raise OracleError("conditional_entropy needs nonempty targets")
    _disjoint(targets, given)
    h = _joint_entropy(pmf, targets + given) - _joint_entropy(pmf, given)
    return _clamp(h, f"H({targets}|{given})")


def mutual_info(pmf: JointPMF, a, b) -> float:
    a, b = _names(a), _names(b)
    if not a or not b:
        raise OracleError("mutual_info needs nonempty variable sets")
    _disjoint(a, b)
    i = entropy(pmf, a) + entropy(pmf, b) - entropy(pmf, a + b)
    return _clamp(i, f"I({a};{b})")


def conditional_mutual_info(pmf: JointPMF, a, b, given) -> float:
    a, b, given = _names(a), _names(b), _names(given)
    if not a or not b:
        raise OracleError("conditional_mutual_info needs nonempty variable sets")
    _disjoint(a, b, given)
    hg = _joint_entropy(pmf, given)
    i = (
        _joint_entropy(pmf, a + given)
        + _joint_entropy(pmf, b + given)
        - _joint_entropy(pmf, a + b + given)
        - hg
    )
    return _clamp(i, f"I({a};{b}|{given})")


def interaction_info(pmf: JointPMF, a, b, c) -> float:
    """I(A;B;C) = I(A;B) - I(A;B|C). Negative under synergy."""
    a, b, c = _names(a), _names(b), _names(c)
    _disjoint(a, b, c)
    return mutual_info(pmf, a, b) - conditional_mutual_info(pmf, a, b, c)


def posterior(pmf: JointPMF, target, given: Mapping[str, int]) -> np.ndarray:
    """Conditional distribution of ``target`` (flattened row-major) given an assignment."""
    target = _names(target)
    if not target:
        raise OracleError("posterior needs a nonempty target")
    cond = list(given)
    _disjoint(target, cond)
    m = pmf.marginal(target + cond)
    index = []
    for name in cond:
        o = int(given[name])
        if not 0 <= o < pmf.cardinality(name):
            raise OracleError(f"outcome {o} out of range for {name}")
        index.append(o)
    row = m[(Ellipsis, *index)] if index else m
    mass = row.sum()
    if mass <= 0:
        raise OracleError(f"conditioning event {dict(given)} has zero probability")
    return (row / mass).ravel()


def expected_posterior_kl(pmf: JointPMF, target, full_given, reduced_given) -> float:
    """E over the full conditioner of KL(p(target|full) || p(target|reduced))."""
    target, full, reduced = _names(target), _names(full_given), _names(reduced_given)
    if not target:
        raise OracleError("expected_posterior_kl needs a nonempty target")
    if not set(reduced) <= set(full):
        raise OracleError(f"{reduced} is not a subset of {full}")
    _disjoint(target, full)
    extra = [n for n in full if n not in reduced]
    nt, nr = len(target), len(reduced)
    m = pmf.marginal(target + reduced + extra)
    t_axes = tuple(range(nt))
    e_axes = tuple(range(nt + nr, m.ndim))
    with np.errstate(divide="ignore", invalid="ignore"):
        p_t_full = m / m.sum(axis=t_axes, keepdims=True)
        m_tr = m.sum(axis=e_axes, keepdims=True)
        p_t_red = m_tr / m_tr.sum(axis=t_axes, keepdims=True)
        mask = m > 0
        terms = np.where(mask, m * np.log(np.where(mask, p_t_full / p_t_red, 1.0)), 0.0)
    return _clamp(float(terms.sum()), "expected posterior KL")


@dataclass(frozen=True)
class InfoQuery:
    """H(targets | conditioners) style query against a named distribution."""

    targets: tuple[str, ...]
    conditioners: tuple[str, ...] = ()

    def validate(self, pmf: JointPMF):
        if not self.targets:
            raise OracleError("query targets must be nonempty")
        _disjoint(self.targets, self.conditioners)
        for n in (*self.targets, *self.conditioners):
            pmf.axis(n)

    def entropy(self, pmf: JointPMF) -> float:
        self.validate(pmf)
        return conditional_entropy(pmf, list(self.targets), list(self.conditioners))


def attach_channel(pmf: JointPMF, name: str, cardinality: int, parents, channel) -> JointPMF:
    """Extend ``pmf`` with a new variable drawn from p(name | parents).

    ``channel`` has shape (*parent cardinalities, cardinality) with rows summing
    to 1. The new variable is conditionally independent of everything else
    given its parents, which is how encoders are modelled.
    """
    parents = _names(parents)
    ch = np.asarray(channel, dtype=np.float64)
    expected = tuple(pmf.cardinality(p) for p in parents) + (cardinality,)
    if ch.shape != expected:
        raise OracleError(f"channel shape {ch.shape} != {expected}")
    if np.any(ch < 0) or not np.allclose(ch.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
        raise OracleError("channel rows must be distributions")
    # broadcast the channel against the full table
    shape = [1] * len(pmf.variables) + [cardinality]
    order = [pmf.axis(p) for p in parents]
    ch_t = np.transpose(ch, list(np.argsort(order)) + [len(parents)])
    for ax in sorted(order):
        shape[ax] = pmf.shape[ax]
    table = pmf.probabilities[..., None] * ch_t.reshape(shape)
    return JointPMF([*pmf.variables, VariableSpec(name, cardinality)], table)


def deterministic_channel(parent_cards: Sequence[int], cardinality: int, fn) -> np.ndarray:
    """Channel table for ``child = fn(*parent_outcomes)``."""
    ch = np.zeros((*parent_cards, cardinality))
    for idx in np.ndindex(*parent_cards):
        ch[(*idx, int(fn(*idx)))] = 1.0
    return ch


def random_pmf(rng: np.random.Generator, cards: Sequence[int], names=None, sparsity: float = 0.0) -> JointPMF:
    """Dirichlet-ish random table; ``sparsity`` zeroes that fraction of cells."""
    names = names or [f"x{i}" for i in range(len(cards))]
    w = rng.exponential(size=tuple(cards))
    if sparsity > 0:
        w[rng.random(w.shape) < sparsity] = 0.0
        if w.sum() == 0:
            w.flat[0] = 1.0
    return JointPMF.normalized(list(zip(names, cards)), w)


def dumps(pmf: JointPMF) -> str:
    lines = [" ".join(f"{v.name}:{v.cardinality}" for v in pmf.variables)]
    for idx in np.ndindex(*pmf.shape):
        lines.append(" ".join(str(i) for i in idx) + f" {float(pmf.probabilities[idx])!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> JointPMF:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise OracleError("empty pmf text")
    specs = []
    for tok in lines[0].split():
        name, sep, card = tok.rpartition(":")
        if not sep:
            raise OracleError(f"bad header token {tok!r}")
        specs.append(VariableSpec(name, int(card)))
    shape = tuple(s.cardinality for s in specs)
    cells = int(np.prod(shape, dtype=np.int64))
    if cells > MAX_CELLS:
        raise OracleError(f"table of {cells} cells exceeds the {MAX_CELLS} cell cap")
    body = lines[1:]
    if len(body) != cells:
        raise OracleError(f"expected {cells} cell lines, found {len(body)}")
    table = np.empty(cells)
    for k, (line, idx) in enumerate(zip(body, np.ndindex(*shape))):
        parts = line.split()
        if len(parts) != len(specs) + 1 or tuple(int(p) for p in parts[:-1]) != idx:
            raise OracleError(f"cell line {k + 2} out of row-major order: {line!r}")
        try:
            table[k] = float(parts[-1])
        except ValueError:
            raise OracleError(f"bad probability on line {k + 2}: {parts[-1]!r}") from None
    total = table.sum()
    if abs(total - 1.0) > TEXT_SUM_TOL:
        raise OracleError(f"probabilities sum to {total!r}")
    if np.any(table < 0):
        raise OracleError("negative probability")
    return JointPMF(specs, table / total)
