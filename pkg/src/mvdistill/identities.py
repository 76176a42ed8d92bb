"""Randomized identity checks run by ``mvdistill verify``.

Each check draws random discrete systems (at most five variables, each of
cardinality at most four) and returns the largest absolute residual seen.
The registry is a plain dict so callers can add or replace checks.
"""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import oracle
from .losses import PredictionBundle, mv2d_loss, vsd_loss
from .oracle import attach_channel, random_pmf
from .venn import ViewSystem, consistent_info, decompose, verify_corollary2

TOLERANCE = 1e-10
MAX_CARD = 4
MAX_VARS = 5


def _cards(rng, k):
    return [int(c) for c in rng.integers(2, MAX_CARD + 1, size=k)]


def random_view_system(rng: np.random.Generator, n: int) -> ViewSystem:
    """y, v_1..v_n from a random table, then z_i drawn through a channel of v_i."""
    if 1 + 2 * n > MAX_VARS:
        raise ValueError(f"{n} views need {1 + 2 * n} variables, cap is {MAX_VARS}")
    names = ["y"] + [f"v{i + 1}" for i in range(n)]
    cards = _cards(rng, n + 1)
    pmf = random_pmf(rng, cards, names, sparsity=float(rng.choice([0.0, 0.3])))
    for i in range(n):
        kz = int(rng.integers(2, MAX_CARD + 1))
        if rng.random() < 0.3:
            f = rng.integers(0, kz, cards[i + 1])
            ch = oracle.deterministic_channel([cards[i + 1]], kz, lambda a: f[a])
        else:
            ch = rng.dirichlet(np.ones(kz), size=cards[i + 1])
        pmf = attach_channel(pmf, f"z{i + 1}", kz, f"v{i + 1}", ch)
    return ViewSystem(pmf, "y", names[1:], [f"z{i + 1}" for i in range(n)])


def _random_table(rng):
    k = int(rng.integers(3, MAX_VARS + 1))
    return random_pmf(rng, _cards(rng, k), sparsity=float(rng.choice([0.0, 0.4])))


def chain_rule(rng, count):
    """H(A,B) = H(A) + H(B|A) and I(A; B,C) = I(A;C) + I(A;B|C)."""
    worst = 0.0
    for _ in range(count):
        pmf = _random_table(rng)
        a, b, c, *rest = pmf.names
        h = oracle.entropy(pmf, [a, b]) - oracle.entropy(pmf, a) - oracle.conditional_entropy(pmf, b, a)
        i = (oracle.mutual_info(pmf, a, [b, c]) - oracle.mutual_info(pmf, a, c)
             - oracle.conditional_mutual_info(pmf, a, b, c))
        worst = max(worst, abs(h), abs(i))
    return worst


def markov_split(rng, count):
    """I(v_i;z_i) = I(y;z_i) + I(v_i;z_i|y) when z_i depends on y only through v_i."""
    worst = 0.0
    for _ in range(count):
        sys = random_view_system(rng, int(rng.integers(1, 3)))
        for i, t in enumerate(decompose(sys).views):
            whole = oracle.mutual_info(sys.pmf, sys.observations[i], sys.representations[i])
            worst = max(worst, abs(whole - t.predictive - t.superfluous))
    return worst


def predictive_split(rng, count):
    """I(y;z_i) = I(y;z_i|z_j) + I^c_i, with the consistent part computed the
    other way round as I(z_i;z_j) - I(z_i;z_j|y)."""
    worst = 0.0
    for _ in range(count):
        sys = random_view_system(rng, 2)
        for i, t in enumerate(decompose(sys).views):
            z, other = sys.representations[i], sys.rest(i)
            shared = (oracle.mutual_info(sys.pmf, z, other)
                      - oracle.conditional_mutual_info(sys.pmf, z, other, sys.label))
            worst = max(worst, abs(t.predictive - t.view_specific - shared),
                        abs(consistent_info(sys, i) - shared))
    return worst


def posterior_kl(rng, count):
    """I(A;B|C) = E KL(p(A|B,C) || p(A|C))."""
    worst = 0.0
    for _ in range(count):
        pmf = _random_table(rng)
        a, b, c, *rest = pmf.names
        given = [c, *rest[:1]]
        cmi = oracle.conditional_mutual_info(pmf, a, b, given)
        worst = max(worst, abs(cmi - oracle.expected_posterior_kl(pmf, a, [b, *given], given)))
    return worst


def corollary2(n):
    def check(rng, count):
        worst = 0.0
        for _ in range(count):
            worst = max(worst, *verify_corollary2(random_view_system(rng, n)).residuals.values())
        return worst

    check.__doc__ = f"verify_corollary2 residuals on random {n}-view systems"
    return check


def single_view_mv2d(rng, count):
    """mv2d_loss reduces to vsd_loss with one view."""
    worst = 0.0
    for _ in range(count):
        b, k = int(rng.integers(1, 8)), int(rng.integers(2, 6))
        obs = ad.softmax(ad.constant(rng.standard_normal((b, k)) * 3))
        rep = ad.softmax(ad.constant(rng.standard_normal((b, k)) * 3))
        bundle = PredictionBundle([obs], [rep], rep, [])
        worst = max(worst, abs(float(mv2d_loss(bundle).value) - float(vsd_loss(bundle, 0).value)))
    return worst


IDENTITIES: dict[str, Callable[[np.random.Generator, int], float]] = {
    "chain-rule": chain_rule,
    "markov-split": markov_split,
    "predictive-split": predictive_split,
    "posterior-kl": posterior_kl,
    "corollary2-n1": corollary2(1),
    "corollary2-n2": corollary2(2),
    "mv2d-single-view": single_view_mv2d,
}


def run_identities(count: int = 200, seed: int = 0, tol: float = TOLERANCE, names=None) -> dict:
    """Max residual per identity; each check gets its own stream keyed by name."""
    out = {}
    for name in names or list(IDENTITIES):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, zlib.crc32(name.encode())])))
        r = float(IDENTITIES[name](rng, count))
        out[name] = {"max_residual": r, "pass": bool(r < tol), "draws": count}
    return out
