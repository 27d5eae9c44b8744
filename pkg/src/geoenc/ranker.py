"""Estimator-style wrapper so the ranker composes with sklearn pipelines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import RankingInstance
from .encoder import EncoderConfig
from .errors import ValidationError
from .evaluator import evaluate, rerank
from .taxonomy import default_taxonomy
from .trainer import TrainConfig, train


class GeoEncoderRanker(BaseEstimator):
    """Chunk-aware bi-encoder re-ranker with a fit/predict surface.

    fit() trains the joint objective; predict() ranks through the pure
    [CLS] dot-product path.
    """

    def __init__(
        self,
        d_model=128,
        n_layers=2,
        n_heads=4,
        d_out=64,
        max_len=64,
        base_lr=5e-4,
        gamma=10.0,
        batch_size=32,
        max_epochs=10,
        early_stop_patience=3,
        weight_decay=0.02,
        seed=0,
        fusion="multitask",
        chunk_scheme="geo",
        attn_init=1.0,
        dev_fraction=0.1,
        taxonomy=None,
    ):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_out = d_out
        self.max_len = max_len
        self.base_lr = base_lr
        self.gamma = gamma
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.weight_decay = weight_decay
        self.seed = seed
        self.fusion = fusion
        self.chunk_scheme = chunk_scheme
        self.attn_init = attn_init
        self.dev_fraction = dev_fraction
        self.taxonomy = taxonomy

    def fit(self, X: list[RankingInstance], y=None, dev: list[RankingInstance] | None = None):
        if dev is None:
            n_dev = max(1, int(len(X) * self.dev_fraction))
            if len(X) - n_dev < 1:
                raise ValidationError("not enough instances to split off a dev set")
            X, dev = X[:-n_dev], X[-n_dev:]
        train_config = TrainConfig(
            base_lr=self.base_lr,
            gamma=self.gamma,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            weight_decay=self.weight_decay,
            seed=self.seed,
            fusion=self.fusion,
            chunk_scheme=self.chunk_scheme,
            attn_init=self.attn_init,
        )
        encoder_config = EncoderConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_out=self.d_out,
            max_len=self.max_len,
        )
        taxonomy = self.taxonomy if self.taxonomy is not None else default_taxonomy()
        self.trained_, self.report_ = train(X, dev, train_config, encoder_config, taxonomy)
        return self

    def rank(self, query: str, candidates: list[str]) -> list[tuple[int, float]]:
        self._check_fitted()
        return rerank(query, candidates, self.trained_)

    def predict(self, X: list[RankingInstance]) -> np.ndarray:
        """Index of the top-ranked candidate per instance."""
        self._check_fitted()
        return np.array(
            [self.rank(i.query.source, [c.source for c in i.candidates])[0][0] for i in X]
        )

    def score(self, X: list[RankingInstance], y=None) -> float:
        """Mean Hit@1 over instances."""
        self._check_fitted()
        return evaluate(X, self.trained_).hit1

    def _check_fitted(self) -> None:
        if not hasattr(self, "trained_"):
            raise ValidationError("estimator is not fitted; call fit() first")
