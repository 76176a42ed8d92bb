"""Variational distillation losses over predicted class distributions.

Teachers (observation predictions and the joint prediction) enter every KL
through :func:`autodiff.stop_gradient`, so only the student side learns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node

ROW_TOL = 1e-6


@dataclass
class PredictionBundle:
    """All predicted distributions of one forward pass.

    ``joint`` is p(y | z_1..z_n); ``loo[i]`` is p(y | all z except z_i).
    With one view, ``joint`` is the single representation head and ``loo``
    is empty.
    """

    obs: list[Node]
    rep: list[Node]
    joint: Node
    loo: list[Node] = field(default_factory=list)

    @property
    def n_views(self) -> int:
        return len(self.obs)

    def members(self) -> list[Node]:
        return [*self.obs, *self.rep, self.joint, *self.loo]

    def validate(self, need_loo: bool = False):
        if len(self.rep) != len(self.obs) or not self.obs:
            raise ValueError("bundle needs one observation and one representation prediction per view")
        if need_loo and self.n_views > 1 and len(self.loo) != self.n_views:
            raise ValueError(f"expected {self.n_views} leave-one-out predictions, got {len(self.loo)}")
        shape = self.obs[0].shape
        for m in self.members():
            if m.shape != shape:
                raise ValueError(f"bundle member shape {m.shape} != {shape}")
            v = m.value
            if np.any(v < 0) or np.any(np.abs(v.sum(axis=1) - 1.0) > ROW_TOL):
                raise ValueError("bundle rows must be categorical distributions")


@dataclass(frozen=True)
class LossWeights:
    ce_weight: float = 1.0
    task_aux_weight: float = 1.0
    vd_weight: float = 2.0

    def __post_init__(self):
        for name in ("ce_weight", "task_aux_weight", "vd_weight"):
            w = getattr(self, name)
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {w}")


def _teacher(p: Node) -> Node:
    return ad.stop_gradient(p)


def vsd_loss(bundle: PredictionBundle, i: int) -> Node:
    """KL(P_v_i || P_z_i): self-distillation from observation to representation."""
    bundle.validate()
    return ad.kl_divergence(_teacher(bundle.obs[i]), bundle.rep[i])


def _require_two(bundle: PredictionBundle):
    bundle.validate()
    if bundle.n_views != 2:
        raise ValueError(f"needs exactly two views, got {bundle.n_views}")


def vmd_loss(bundle: PredictionBundle) -> Node:
    """Mutual distillation between the two representation heads, both directions.

    Both sides are students here; neither is detached.
    """
    _require_two(bundle)
    z1, z2 = bundle.rep
    return ad.kl_divergence(z1, z2) + ad.kl_divergence(z2, z1)


def vcd_loss(bundle: PredictionBundle) -> Node:
    """Cross distillation: KL(P_v2 || P_z1) + KL(P_v1 || P_z2)."""
    _require_two(bundle)
    v1, v2 = bundle.obs
    z1, z2 = bundle.rep
    return ad.kl_divergence(_teacher(v2), z1) + ad.kl_divergence(_teacher(v1), z2)


def sufficiency_term(bundle: PredictionBundle) -> Node:
    return ad.add_n([vsd_loss(bundle, i) for i in range(bundle.n_views)])


def consistency_term(bundle: PredictionBundle) -> Node:
    if bundle.n_views == 1:
        return ad.constant(0.0)
    teacher = _teacher(bundle.joint)
    return ad.add_n([ad.kl_divergence(teacher, q) for q in bundle.loo])


def mv2d_loss(bundle: PredictionBundle) -> Node:
    """Sum_i KL(P_v_i || P_z_i) + Sum_i KL(P_joint || P_loo_i).

    With one view the second sum is empty and this is exactly the VSD loss.
    """
    bundle.validate(need_loo=True)
    suff = sufficiency_term(bundle)
    if bundle.n_views == 1:
        return suff
    return suff + consistency_term(bundle)


def classification_term(bundle: PredictionBundle, labels) -> Node:
    heads = [*bundle.obs, *bundle.rep]
    if bundle.n_views > 1:
        heads.append(bundle.joint)
    return ad.add_n([ad.cross_entropy(h, labels) for h in heads])


def auxiliary_term(bundle: PredictionBundle, labels) -> Node:
    if not bundle.loo:
        return ad.constant(0.0)
    return ad.add_n([ad.cross_entropy(h, labels) for h in bundle.loo])


def total_objective(bundle: PredictionBundle, labels, weights: Optional[LossWeights] = None,
                    distillation: Optional[Node] = None) -> Node:
    """Weighted sum of head cross-entropies, leave-one-out CE and a distillation term.

    ``distillation`` defaults to :func:`mv2d_loss`; zero weights drop their
    term from the graph entirely.
    """
    weights = weights or LossWeights()
    parts = []
    if weights.ce_weight > 0:
        parts.append(weights.ce_weight * classification_term(bundle, labels))
    if weights.task_aux_weight > 0 and bundle.loo:
        parts.append(weights.task_aux_weight * auxiliary_term(bundle, labels))
    if weights.vd_weight > 0:
        d = mv2d_loss(bundle) if distillation is None else distillation
        parts.append(weights.vd_weight * d)
    if not parts:
        return ad.constant(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


LOSS_MODES = ("ce-only", "ce+vsd", "ce+vcd+vmd", "ce+mv2d")


def distillation_for_mode(bundle: PredictionBundle, mode: str) -> Optional[Node]:
    """Distillation term for a training mode, or None for ce-only."""
    if mode == "ce-only":
        return None
    if mode == "ce+vsd":
        return sufficiency_term(bundle)
    if mode == "ce+vcd+vmd":
        return vcd_loss(bundle) + vmd_loss(bundle)
    if mode == "ce+mv2d":
        return mv2d_loss(bundle)
    raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
