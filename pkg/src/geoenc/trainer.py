"""Training loop: listwise batching, joint loss, grouped learning rates.

The attention scalars sit in their own optimizer group whose learning rate
is base_lr * gamma and whose weight decay is zero, so they can move faster
than the encoder parameters. Early stopping tracks validation Hit@1.
"""

from __future__ import annotations

import copy
import random
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import TrainedModel
from .corpus import RankingInstance
from .encoder import (
    EncoderConfig,
    SequenceEncoder,
    build_encoder,
    build_vocab,
    pad_batch,
    pooled_components,
    token_categories,
    tokenize,
)
from .errors import ConfigurationError, NumericError, ValidationError
from .objective import (
    FUSION_CONCAT,
    FUSION_FIXED,
    FUSION_MULTITASK,
    FUSION_NONE,
    AttentionWeights,
    FusionMode,
    parse_fusion,
)
from .taxonomy import ChunkedText, ChunkTaxonomy, coarse_chunk, coarse_taxonomy

GEO_SCHEME = "geo"
COARSE_SCHEME = "coarse"


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    gamma: float = 10.0
    batch_size: int = 32
    max_epochs: int = 10
    early_stop_patience: int = 3
    weight_decay: float = 0.02
    seed: int = 0
    fusion: str = FUSION_MULTITASK
    chunk_scheme: str = GEO_SCHEME
    attn_init: float = 1.0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigurationError("early_stop_patience must be >= 1")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if self.chunk_scheme not in (GEO_SCHEME, COARSE_SCHEME):
            raise ConfigurationError(f"unknown chunk scheme {self.chunk_scheme!r}")
        parse_fusion(self.fusion)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    loss_cls: float
    loss_u: float
    dev_hit1: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    wall_seconds: float = 0.0
    attention: list[float] = field(default_factory=list)

    def dev_curve(self) -> list[float]:
        return [e.dev_hit1 for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            "epochs": [e.__dict__ for e in self.epochs],
            "best_epoch": self.best_epoch,
            "wall_seconds": self.wall_seconds,
            "attention": self.attention,
        }


def _scheme_views(
    instances: list[RankingInstance], scheme: str
) -> list[tuple[list[ChunkedText], int]]:
    """Per-instance list of texts (query first) with the active chunk scheme."""
    views = []
    for inst in instances:
        texts = [inst.query] + inst.candidates
        if scheme == COARSE_SCHEME:
            texts = [coarse_chunk(t.source) for t in texts]
        views.append((texts, inst.gold_index))
    return views


def _batch_losses(
    model: SequenceEncoder,
    config: EncoderConfig,
    batch: list[tuple[list[ChunkedText], int]],
    w: torch.Tensor | None,
    fusion: FusionMode,
    M: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean (L_cls, L_u) over a batch of (texts, gold) instances.

    All texts in the batch go through one padded forward pass; listwise
    losses stay per query over that query's own candidate list.
    """
    flat_texts = [t for texts, _gold in batch for t in texts]
    tokenized = [tokenize(t.source, config) for t in flat_texts]
    ids, mask = pad_batch(tokenized, config)
    cls, tokens = model(ids, mask)

    if fusion.uses_components:
        width = tokens.shape[1]
        cats = torch.full((len(flat_texts), width), -1, dtype=torch.int64)
        for i, text in enumerate(flat_texts):
            row = token_categories(text, config.max_len - 1)
            cats[i, : len(row)] = torch.tensor(row, dtype=torch.int64)
        comp, _present = pooled_components(tokens, cats, M)

    l_cls_total = torch.zeros((), dtype=cls.dtype)
    l_u_total = torch.zeros((), dtype=cls.dtype)
    offset = 0
    for texts, gold in batch:
        n = len(texts)
        rows = slice(offset, offset + n)
        target = torch.tensor([gold])
        cls_scores = (cls[rows][1:] @ cls[rows][0]).unsqueeze(0)

        if fusion.uses_components:
            uq = comp[offset]
            ucs = comp[offset + 1 : offset + n]

        if fusion.kind == FUSION_CONCAT:
            comp_scores = torch.einsum("md,kmd->k", uq, ucs).unsqueeze(0)
            l_cls = torch.nn.functional.cross_entropy(cls_scores + comp_scores, target)
            l_u = torch.zeros((), dtype=cls.dtype)
        elif fusion.kind == FUSION_NONE:
            l_cls = torch.nn.functional.cross_entropy(cls_scores, target)
            l_u = torch.zeros((), dtype=cls.dtype)
        else:
            l_cls = torch.nn.functional.cross_entropy(cls_scores, target)
            weighted_q = uq * (w ** 2).unsqueeze(1)
            comp_scores = torch.einsum("md,kmd->k", weighted_q, ucs).unsqueeze(0)
            l_u = torch.nn.functional.cross_entropy(comp_scores, target)
        l_cls_total = l_cls_total + l_cls
        l_u_total = l_u_total + l_u
        offset += n
    return l_cls_total / len(batch), l_u_total / len(batch)


def _dev_hit1(
    model: SequenceEncoder, config: EncoderConfig, instances: list[RankingInstance]
) -> float:
    """Validation Hit@1 through the inference path ([CLS] dot products only)."""
    model.eval()
    hits = 0
    group = 16
    with torch.no_grad():
        for lo in range(0, len(instances), group):
            chunk = instances[lo : lo + group]
            texts = [t.source for inst in chunk for t in [inst.query] + inst.candidates]
            tokenized = [tokenize(t, config) for t in texts]
            ids, mask = pad_batch(tokenized, config)
            cls, _ = model(ids, mask)
            offset = 0
            for inst in chunk:
                n = 1 + len(inst.candidates)
                block = cls[offset : offset + n]
                scores = (block[1:] @ block[0]).numpy()
                hits += int(int(np.argmax(scores)) == inst.gold_index)
                offset += n
    model.train()
    return hits / len(instances)


def train(
    train_set: list[RankingInstance],
    dev_set: list[RankingInstance],
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    taxonomy: ChunkTaxonomy,
) -> tuple[TrainedModel, TrainReport]:
    train_config.validate()
    if not train_set or not dev_set:
        raise ValidationError("train and dev splits must be non-empty")
    start = time.perf_counter()
    torch.set_num_threads(1)

    fusion = parse_fusion(train_config.fusion)
    if train_config.chunk_scheme == COARSE_SCHEME:
        component_taxonomy = coarse_taxonomy()
    else:
        component_taxonomy = taxonomy
    M = component_taxonomy.M

    if len(encoder_config.vocab) <= 3:  # only the reserved tokens

        texts = []
        for inst in train_set + dev_set:
            texts.append(inst.query.source)
            texts.extend(c.source for c in inst.candidates)
        encoder_config.vocab = build_vocab(texts)

    model = build_encoder(encoder_config, train_config.seed)
    model.train()

    attn_init = train_config.attn_init
    if fusion.kind == FUSION_FIXED:
        attn_init = fusion.fixed_value
    w = torch.full((M,), float(attn_init), dtype=torch.float64)
    w.requires_grad_(fusion.learns_attention)

    groups = [
        {
            "params": list(model.parameters()),
            "lr": train_config.base_lr,
            "weight_decay": train_config.weight_decay,
        }
    ]
    if fusion.learns_attention:
        groups.append(
            {
                "params": [w],
                "lr": train_config.base_lr * train_config.gamma,
                "weight_decay": 0.0,
            }
        )
    optimizer = torch.optim.AdamW(groups, betas=(0.9, 0.999), eps=1e-8)

    views = _scheme_views(train_set, train_config.chunk_scheme)
    observed: set[int] = set()
    for texts, _gold in views:
        for t in texts:
            observed.update(t.category_ids())

    rng = random.Random(train_config.seed)
    report = TrainReport()
    best_hit1 = -1.0
    best_state = None
    best_w = None
    step = 0
    for epoch in range(train_config.max_epochs):
        order = list(range(len(views)))
        rng.shuffle(order)
        sum_cls = sum_u = 0.0
        for lo in range(0, len(order), train_config.batch_size):
            batch = [views[idx] for idx in order[lo : lo + train_config.batch_size]]
            optimizer.zero_grad()
            l_cls, l_u = _batch_losses(model, encoder_config, batch, w, fusion, M)
            loss = l_cls + l_u
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
            loss.backward()
            optimizer.step()
            sum_cls += float(l_cls.detach())
            sum_u += float(l_u.detach())
            step += 1
        n_batches = (len(order) + train_config.batch_size - 1) // train_config.batch_size
        hit1 = _dev_hit1(model, encoder_config, dev_set)
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                loss=(sum_cls + sum_u) / n_batches,
                loss_cls=sum_cls / n_batches,
                loss_u=sum_u / n_batches,
                dev_hit1=hit1,
            )
        )
        if hit1 > best_hit1:
            best_hit1 = hit1
            report.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            best_w = w.detach().clone()
        elif epoch - report.best_epoch >= train_config.early_stop_patience:
            break

    model.load_state_dict(best_state)
    model.eval()
    attention = AttentionWeights(
        w=best_w.numpy().copy(),
        gamma=train_config.gamma,
        frozen=not fusion.learns_attention,
        init_value=float(attn_init),
    )
    report.attention = [float(x) for x in attention.w]
    report.wall_seconds = time.perf_counter() - start
    trained = TrainedModel(
        model=model,
        encoder_config=encoder_config,
        taxonomy=component_taxonomy,
        attention=attention,
        fusion=fusion,
        observed_categories=sorted(observed),
    )
    return trained, report


def sweep_gamma(
    train_set: list[RankingInstance],
    dev_set: list[RankingInstance],
    gammas: list[float],
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    taxonomy: ChunkTaxonomy,
) -> list[dict]:
    """One full run per gamma with shared seeds; failures don't kill other arms."""
    if not gammas:
        raise ValidationError("need at least one gamma value")
    deduped = []
    for g in gammas:
        if g in deduped:
            warnings.warn(f"duplicate gamma {g} dropped from sweep")
        else:
            deduped.append(g)
    rows = []
    for g in deduped:
        cfg = TrainConfig.from_dict({**train_config.to_dict(), "gamma": g})
        enc_cfg = EncoderConfig.from_dict(encoder_config.to_dict())
        try:
            _trained, rep = train(train_set, dev_set, cfg, enc_cfg, taxonomy)
            rows.append(
                {
                    "gamma": g,
                    "best_dev_hit1": max(rep.dev_curve()),
                    "best_epoch": rep.best_epoch,
                    "error": "",
                }
            )
        except Exception as exc:  # keep remaining arms alive
            rows.append(
                {"gamma": g, "best_dev_hit1": float("nan"), "best_epoch": -1,
                 "error": str(exc)}
            )
    return rows
