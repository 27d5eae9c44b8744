"""Ranking metrics, inference-time re-ranking, and attention analyses."""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch
from scipy import stats as scipy_stats

from .checkpoint import TrainedModel
from .corpus import RankingInstance
from .errors import ContractViolation, MetricError, ValidationError
from .encoder import pad_batch, tokenize
from .objective import FUSION_CONCAT, FUSION_NONE
from .taxonomy import ChunkTaxonomy, GENERAL, SPECIFIC


@dataclass
class EvalReport:
    hit1: float
    hit3: float
    ndcg1: float
    mrr3: float
    n_queries: int
    latency_ms_per_case: float

    def metrics_dict(self) -> dict:
        """Deterministic fields only; timing is reported separately."""
        return {
            "hit1": self.hit1,
            "hit3": self.hit3,
            "ndcg1": self.ndcg1,
            "mrr3": self.mrr3,
            "n_queries": self.n_queries,
        }


@dataclass
class AttentionReport:
    weights: dict[str, float]        # category name -> learned scalar
    general_mean: float
    specific_mean: float
    specific_above_general: bool


def hit_at_k(gold_position: int, k: int) -> int:
    """1 iff the gold candidate's 1-based rank is within the top k."""
    if gold_position < 1 or k < 1:
        raise ContractViolation("positions and k are 1-based and positive")
    return 1 if gold_position <= k else 0


def mrr_at_3(gold_position: int) -> float:
    if gold_position < 1:
        raise ContractViolation("gold position is 1-based")
    return 1.0 / gold_position if gold_position <= 3 else 0.0


def ndcg_at_1(ranked_grades: list[int], ideal_grades: list[int]) -> float:
    """Exponential-gain NDCG truncated at rank 1: (2^top - 1) / (2^max - 1)."""
    if not ranked_grades or not ideal_grades:
        raise ContractViolation("grade lists must be non-empty")
    if any(g < 0 for g in ranked_grades) or any(g < 0 for g in ideal_grades):
        raise ContractViolation("grades must be non-negative")
    best = max(ideal_grades)
    if best <= 0:
        raise MetricError("NDCG undefined when all grades are zero")
    return (2.0 ** ranked_grades[0] - 1.0) / (2.0 ** best - 1.0)


def rerank(
    query: str, candidates: list[str], trained: TrainedModel
) -> list[tuple[int, float]]:
    """Rank candidates by [CLS] dot product only; stable on ties."""
    if not candidates:
        raise ContractViolation("need at least one candidate")
    config = trained.encoder_config
    trained.model.eval()
    with torch.no_grad():
        tokenized = [tokenize(t, config) for t in [query] + candidates]
        ids, mask = pad_batch(tokenized, config)
        cls, _ = trained.model(ids, mask)
        scores = (cls[1:] @ cls[0]).numpy()
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return [(i, float(scores[i])) for i in order]


def evaluate(instances: list[RankingInstance], trained: TrainedModel) -> EvalReport:
    """Aggregate metrics over a test split via the pure bi-encoder path."""
    if not instances:
        raise ValidationError("cannot evaluate an empty split")
    hit1 = hit3 = mrr3 = ndcg1 = 0.0
    elapsed = 0.0
    for inst in instances:
        t0 = time.perf_counter()
        ranking = rerank(inst.query.source, [c.source for c in inst.candidates], trained)
        elapsed += time.perf_counter() - t0
        order = [i for i, _score in ranking]
        position = order.index(inst.gold_index) + 1
        hit1 += hit_at_k(position, 1)
        hit3 += hit_at_k(position, 3)
        mrr3 += mrr_at_3(position)
        if inst.relevance is not None:
            grades = inst.relevance
        else:
            grades = [1 if i == inst.gold_index else 0 for i in range(len(order))]
        ndcg1 += ndcg_at_1([grades[i] for i in order], grades)
    n = len(instances)
    return EvalReport(
        hit1=hit1 / n,
        hit3=hit3 / n,
        ndcg1=ndcg1 / n,
        mrr3=mrr3 / n,
        n_queries=n,
        latency_ms_per_case=1000.0 * elapsed / n,
    )


def entropy_by_category(
    instances: list[RankingInstance], taxonomy: ChunkTaxonomy
) -> dict[int, float]:
    """Shannon entropy (bits) of chunk surface strings per category.

    Counted over queries and candidates; never-observed categories are
    omitted from the map.
    """
    if not instances:
        raise ValidationError("entropy of an empty corpus is undefined")
    counts: dict[int, Counter] = {}
    for inst in instances:
        for text in [inst.query] + inst.candidates:
            for c in text.chunks:
                counts.setdefault(c.category_id, Counter())[c.text] += 1
    out = {}
    for cid, counter in counts.items():
        total = sum(counter.values())
        out[cid] = -sum(
            (n / total) * math.log2(n / total) for n in counter.values()
        )
    return out


def class_mean_entropy(
    entropy: dict[int, float], taxonomy: ChunkTaxonomy, cls: str
) -> float:
    values = [h for cid, h in entropy.items() if taxonomy.categories[cid].cls == cls]
    if not values:
        raise MetricError(f"no observed categories of class {cls!r}")
    return sum(values) / len(values)


def spearman(a, b) -> tuple[float, float]:
    """Spearman rank correlation with average ranks on ties, plus p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 3:
        raise ContractViolation("need two equal-length vectors of length >= 3")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise MetricError("Spearman correlation undefined for a constant vector")
    rho, p = scipy_stats.spearmanr(a, b)
    return float(rho), float(p)


def attention_report(trained: TrainedModel, taxonomy: ChunkTaxonomy) -> AttentionReport:
    """Per-category learned weights with general/specific class means.

    Class means cover only the categories observed during training.
    """
    if trained.fusion.kind in (FUSION_NONE, FUSION_CONCAT):
        raise ValidationError(
            f"checkpoint trained with fusion={trained.fusion.kind} carries no "
            "attention weights to report"
        )
    observed = set(trained.observed_categories)
    w = trained.attention.w
    weights = {taxonomy.name_of(cid): float(w[cid]) for cid in sorted(observed)}
    means = {}
    for cls in (GENERAL, SPECIFIC):
        ids = [cid for cid in observed if taxonomy.categories[cid].cls == cls]
        means[cls] = float(np.mean([w[cid] for cid in ids])) if ids else float("nan")
    return AttentionReport(
        weights=weights,
        general_mean=means[GENERAL],
        specific_mean=means[SPECIFIC],
        specific_above_general=bool(means[SPECIFIC] > means[GENERAL]),
    )
