"""Per-view decomposition of I(v_i; z_i) into predictive, superfluous,
view-specific and consistent parts, plus the n=1 / n=2 reduction checks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from . import oracle
from .oracle import JointPMF, OracleError

log = logging.getLogger(__name__)

MARKOV_TOL = 1e-10


@dataclass(frozen=True)
class ViewSystem:
    pmf: JointPMF
    label: str
    observations: tuple[str, ...]
    representations: tuple[str, ...]
    check_markov: bool = True

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "representations", tuple(self.representations))
        n = len(self.observations)
        if n < 1 or len(self.representations) != n:
            raise OracleError("need n >= 1 observations and as many representations")
        names = [self.label, *self.observations, *self.representations]
        if len(set(names)) != len(names):
            raise OracleError(f"names must be distinct: {names}")
        for name in names:
            self.pmf.axis(name)
        if self.check_markov:
            for v, z in zip(self.observations, self.representations):
                leak = oracle.conditional_mutual_info(self.pmf, z, self.label, v)
                if leak > MARKOV_TOL:
                    raise OracleError(f"{z} depends on {self.label} beyond {v} (I = {leak:.3g})")

    @property
    def n(self) -> int:
        return len(self.observations)

    def rest(self, i: int) -> list[str]:
        return [z for j, z in enumerate(self.representations) if j != i]

    def _check(self, i: int):
        if not 0 <= i < self.n:
            raise IndexError(f"view index {i} out of range for {self.n} views")


@dataclass
class ViewTerms:
    predictive: float
    superfluous: float
    view_specific: float
    consistent: float
    degenerate: bool = False


@dataclass
class InfoReport:
    views: list[ViewTerms] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {}
        for i, t in enumerate(self.views):
            for key in ("predictive", "superfluous", "view_specific", "consistent"):
                out[f"view{i + 1}.{key}"] = getattr(t, key)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_header(self) -> list[str]:
        return list(self.to_dict())

    def csv_row(self) -> list[str]:
        return [repr(v) for v in self.to_dict().values()]


def superfluous_info(sys: ViewSystem, i: int) -> float:
    sys._check(i)
    return oracle.conditional_mutual_info(
        sys.pmf, sys.observations[i], sys.representations[i], sys.label
    )


def view_specific_info(sys: ViewSystem, i: int) -> float:
    """I(y; z_i | z_rest). With a single view there is no rest and this is I(y; z_1)."""
    sys._check(i)
    z = sys.representations[i]
    if sys.n == 1:
        return oracle.mutual_info(sys.pmf, sys.label, z)
    return oracle.conditional_mutual_info(sys.pmf, sys.label, z, sys.rest(i))


def consistent_info(sys: ViewSystem, i: int) -> float:
    sys._check(i)
    z = sys.representations[i]
    predictive = oracle.mutual_info(sys.pmf, sys.label, z)
    if sys.n == 1:
        return predictive
    value = predictive - oracle.conditional_mutual_info(sys.pmf, sys.label, z, sys.rest(i))
    if value < 0:
        log.info("negative consistent information %.3g for view %d (synergy)", value, i + 1)
    return value


def decompose(sys: ViewSystem) -> InfoReport:
    report = InfoReport()
    for i in range(sys.n):
        report.views.append(
            ViewTerms(
                predictive=oracle.mutual_info(sys.pmf, sys.label, sys.representations[i]),
                superfluous=superfluous_info(sys, i),
                view_specific=0.0 if sys.n == 1 else view_specific_info(sys, i),
                consistent=consistent_info(sys, i),
                degenerate=sys.n == 1,
            )
        )
    return report


@dataclass
class Corollary2Result:
    ok: bool
    residuals: dict[str, float]


def verify_corollary2(sys: ViewSystem, tol: float = 1e-10) -> Corollary2Result:
    """Check that MV2D collapses onto VSD (n=1) or VCD/VMD (n=2).

    n=1: the consistent part equals the whole predictive part.
    n=2: I(v_1;z_1) expanded through z_2 and through y gives the same total,
    and the consistent part from both orders matches (for both views).
    """
    pmf, y = sys.pmf, sys.label
    residuals: dict[str, float] = {}
    if sys.n == 1:
        residuals["consistent-vs-predictive"] = abs(
            consistent_info(sys, 0) - oracle.mutual_info(pmf, y, sys.representations[0])
        )
    elif sys.n == 2:
        for i in range(2):
            v, z, other = sys.observations[i], sys.representations[i], sys.representations[1 - i]
            total = oracle.mutual_info(pmf, v, z)
            # order 1: I(v;z|z') + I(z';z) with I(z';z) = I(z';z|y) + I^c
            cons_a = oracle.mutual_info(pmf, other, z) - oracle.conditional_mutual_info(pmf, other, z, y)
            via_other = (
                oracle.conditional_mutual_info(pmf, v, z, other)
                + oracle.conditional_mutual_info(pmf, other, z, y)
                + cons_a
            )
            # order 2: I(v;z|y) + I(y;z) with I(y;z) = I(y;z|z') + I^c hat
            cons_b = oracle.mutual_info(pmf, y, z) - oracle.conditional_mutual_info(pmf, y, z, other)
            via_label = (
                oracle.conditional_mutual_info(pmf, v, z, y)
                + oracle.conditional_mutual_info(pmf, y, z, other)
                + cons_b
            )
            residuals[f"view{i + 1}.via-other"] = abs(via_other - total)
            residuals[f"view{i + 1}.via-label"] = abs(via_label - total)
            residuals[f"view{i + 1}.consistent"] = abs(cons_a - cons_b)
    else:
        raise ValueError(f"verify_corollary2 covers n in {{1, 2}}, got n={sys.n}")
    return Corollary2Result(all(r < tol for r in residuals.values()), residuals)
