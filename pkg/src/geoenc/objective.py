"""Scores and losses for the chunk-aware ranking objective.

The component score weights per-category dot products by learnable scalars
(applied to both sides, hence squared). Training combines a listwise
cross-entropy over [CLS] scores with the same loss over component scores;
the attention scalars take optimizer steps scaled by a multiplier gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import ComponentMatrix
from .errors import ConfigurationError, ContractViolation, NumericError, ValidationError


@dataclass
class AttentionWeights:
    w: np.ndarray            # (M,) learnable per-category scalars
    gamma: float = 1.0
    frozen: bool = False
    init_value: float = 1.0

    @classmethod
    def initial(
        cls, M: int, init_value: float = 1.0, gamma: float = 1.0, frozen: bool = False
    ) -> "AttentionWeights":
        if gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        return cls(
            w=np.full(M, float(init_value), dtype=np.float64),
            gamma=float(gamma),
            frozen=frozen,
            init_value=float(init_value),
        )


@dataclass
class ScoreBreakdown:
    cls_score: float
    component_score: float
    per_category: np.ndarray  # (M,) contributions summing to component_score


def per_category_scores(
    Uq: ComponentMatrix, Uc: ComponentMatrix, w: AttentionWeights
) -> np.ndarray:
    """w_i^2 * <u_i^q, u_i^c> per category; exactly zero where either side is absent."""
    if Uq.rows.shape != Uc.rows.shape:
        raise ContractViolation(
            f"component shapes differ: {Uq.rows.shape} vs {Uc.rows.shape}"
        )
    if w.w.shape[0] != Uq.rows.shape[0]:
        raise ContractViolation("attention vector length != category count")
    return (w.w ** 2) * np.einsum("md,md->m", Uq.rows, Uc.rows)


def component_score(
    Uq: ComponentMatrix, Uc: ComponentMatrix, w: AttentionWeights
) -> float:
    return float(per_category_scores(Uq, Uc, w).sum())


def cls_score(q_cls: np.ndarray, c_cls: np.ndarray) -> float:
    """Unnormalized dot product of sentence vectors (no cosine)."""
    q = np.asarray(q_cls, dtype=np.float64)
    c = np.asarray(c_cls, dtype=np.float64)
    if q.shape != c.shape:
        raise ContractViolation(f"cls widths differ: {q.shape} vs {c.shape}")
    return float(q @ c)


def breakdown(
    q_cls: np.ndarray,
    c_cls: np.ndarray,
    Uq: ComponentMatrix,
    Uc: ComponentMatrix,
    w: AttentionWeights,
) -> ScoreBreakdown:
    per = per_category_scores(Uq, Uc, w)
    return ScoreBreakdown(
        cls_score=cls_score(q_cls, c_cls),
        component_score=float(per.sum()),
        per_category=per,
    )


def listwise_loss(scores: np.ndarray, gold_index: int) -> float:
    """Softmax cross-entropy over one candidate list with the gold as target."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 2:
        raise ContractViolation("need a flat score vector of length >= 2")
    if not 0 <= gold_index < s.shape[0]:
        raise ContractViolation(f"gold_index {gold_index} out of range")
    if np.isnan(s).any():
        raise NumericError("NaN in candidate scores")
    shifted = s - s.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[gold_index])


def joint_loss(l_cls: float, l_u: float) -> float:
    """Unit-weight sum of the sentence loss and the component loss."""
    if not (np.isfinite(l_cls) and np.isfinite(l_u)):
        raise NumericError(f"non-finite loss terms: {l_cls}, {l_u}")
    return float(l_cls) + float(l_u)


def async_update(
    w: AttentionWeights, grad: np.ndarray, base_lr: float
) -> AttentionWeights:
    """One plain-descent step on the attention scalars at rate base_lr * gamma."""
    if w.gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    if w.frozen:
        raise ContractViolation("cannot update frozen attention weights")
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != w.w.shape:
        raise ContractViolation("gradient shape does not match w")
    return AttentionWeights(
        w=w.w - base_lr * w.gamma * g,
        gamma=w.gamma,
        frozen=w.frozen,
        init_value=w.init_value,
    )


# --- fusion modes -------------------------------------------------------------

FUSION_MULTITASK = "multitask"
FUSION_FIXED = "fixed"
FUSION_CONCAT = "concat"
FUSION_NONE = "none"


@dataclass(frozen=True)
class FusionMode:
    kind: str
    fixed_value: float | None = None

    @property
    def uses_components(self) -> bool:
        return self.kind in (FUSION_MULTITASK, FUSION_FIXED, FUSION_CONCAT)

    @property
    def learns_attention(self) -> bool:
        return self.kind == FUSION_MULTITASK


def parse_fusion(spec: str) -> FusionMode:
    """Parse 'multitask' | 'fixed:<v>' | 'concat' | 'none'."""
    if spec in (FUSION_MULTITASK, FUSION_CONCAT, FUSION_NONE):
        return FusionMode(spec)
    if spec.startswith(FUSION_FIXED + ":"):
        try:
            value = float(spec.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad fixed attention value in {spec!r}")
        return FusionMode(FUSION_FIXED, value)
    raise ValidationError(
        f"unknown fusion mode {spec!r}; expected multitask|fixed:<v>|concat|none"
    )
