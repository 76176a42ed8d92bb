"""Independent pure-python reference computations used as test oracles.

Works on dicts {outcome tuple: probability} and direct summation formulas,
sharing no code with the package under test.
"""

import itertools
import math
from collections import defaultdict


def to_dict(pmf):
    out = {}
    for idx in itertools.product(*(range(c) for c in pmf.shape)):
        p = float(pmf.probabilities[idx])
        if p > 0:
            out[idx] = p
    return out


def marg(d, axes):
    m = defaultdict(float)
    for k, p in d.items():
        m[tuple(k[a] for a in axes)] += p
    return m


def direct_cmi(d, a, b, g):
    """sum p(a,b,g) ln [p(a,b|g) / (p(a|g) p(b|g))] over axis tuples."""
    pabg, pag, pbg, pg = marg(d, a + b + g), marg(d, a + g), marg(d, b + g), marg(d, g)
    total = 0.0
    na, nb = len(a), len(b)
    for k, p in pabg.items():
        ka, kb, kg = k[:na], k[na:na + nb], k[na + nb:]
        total += p * math.log(p * pg[kg] / (pag[ka + kg] * pbg[kb + kg]))
    return total


def direct_mi(d, a, b):
    return direct_cmi(d, a, b, ())


def direct_entropy(d, axes):
    return -sum(p * math.log(p) for p in marg(d, axes).values())


def direct_posterior_kl(d, t, full, reduced):
    """E_full KL(p(t|full) || p(t|reduced)) by explicit loops."""
    ptf, pf = marg(d, t + full), marg(d, full)
    ptr, pr = marg(d, t + reduced), marg(d, reduced)
    pos = [full.index(r) for r in reduced]
    total = 0.0
    nt = len(t)
    for k, p in ptf.items():
        kt, kf = k[:nt], k[nt:]
        kr = tuple(kf[i] for i in pos)
        post_full = p / pf[kf]
        post_red = ptr[kt + kr] / pr[kr]
        total += p * math.log(post_full / post_red)
    return total


def kl_mean(p_rows, q_rows, eps=1e-12):
    total = 0.0
    for p, q in zip(p_rows, q_rows):
        for pi, qi in zip(p, q):
            if pi > 0:
                total += pi * (math.log(max(pi, eps)) - math.log(max(qi, eps)))
    return total / len(p_rows)


def ce_mean(rows, labels, eps=1e-12):
    return -sum(math.log(max(r[y], eps)) for r, y in zip(rows, labels)) / len(rows)
