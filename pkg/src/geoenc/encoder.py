"""Character tokenizer and a small transformer sequence encoder.

The encoder emits a sentence vector from the reserved [CLS] position plus
one vector per input character, all projected to d_out. Component rows are
mean-pooled token vectors per chunk category; categories absent from the
text stay exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ContractViolation
from .taxonomy import ChunkedText, ChunkTaxonomy

CLS_TOKEN = "[CLS]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
RESERVED = [CLS_TOKEN, PAD_TOKEN, UNK_TOKEN]

DTYPE = torch.float64


@dataclass
class EncoderConfig:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_out: int = 64
    max_len: int = 64
    vocab: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.d_out > self.d_model:
            raise ConfigurationError("d_out must not exceed d_model")
        if self.max_len < 2:
            raise ConfigurationError("max_len must be at least 2")
        if not self.vocab:
            self.vocab = {tok: i for i, tok in enumerate(RESERVED)}
        for i, tok in enumerate(RESERVED):
            if self.vocab.get(tok) != i:
                raise ConfigurationError(f"vocab must map {tok} to id {i}")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_out": self.d_out,
            "max_len": self.max_len,
            "vocab": self.vocab,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def build_vocab(texts: list[str]) -> dict[str, int]:
    """Character vocabulary over texts, reserved tokens first, sorted chars."""
    chars = sorted({ch for text in texts for ch in text})
    vocab = {tok: i for i, tok in enumerate(RESERVED)}
    for ch in chars:
        vocab[ch] = len(vocab)
    return vocab


@dataclass
class TokenizedText:
    ids: list[int]
    truncated: bool = False


def tokenize(text: str, config: EncoderConfig) -> TokenizedText:
    """[CLS] followed by one id per character; overlength input truncates."""
    truncated = False
    if len(text) > config.max_len - 1:
        text = text[: config.max_len - 1]
        truncated = True
    unk = config.vocab[UNK_TOKEN]
    ids = [config.vocab[CLS_TOKEN]] + [config.vocab.get(ch, unk) for ch in text]
    return TokenizedText(ids, truncated)


@dataclass
class EncodedText:
    cls: np.ndarray          # (d_out,)
    tokens: np.ndarray       # (l, d_out), row c for character offset c
    token_index: dict[int, int]

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


@dataclass
class ComponentMatrix:
    rows: np.ndarray         # (M, d_out)
    present: np.ndarray      # (M,) bool

    def __post_init__(self):
        absent = ~self.present
        if absent.any() and np.any(self.rows[absent] != 0.0):
            raise ContractViolation("absent categories must have zero rows")


class SequenceEncoder(nn.Module):
    """Token + learned positional embedding, transformer blocks, projection."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.d_model, dtype=DTYPE)
        self.positions = nn.Embedding(config.max_len, config.d_model, dtype=DTYPE)
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=2 * config.d_model,
            dropout=0.0,
            batch_first=True,
            dtype=DTYPE,
        )
        self.blocks = nn.TransformerEncoder(
            layer, num_layers=config.n_layers, enable_nested_tensor=False
        )
        self.proj = nn.Linear(config.d_model, config.d_out, dtype=DTYPE)

    def forward(
        self, ids: torch.Tensor, pad_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """ids: (B, L) int64; pad_mask: (B, L) bool, True at padding.

        Returns cls (B, d_out) and token matrix (B, L-1, d_out); padded
        token rows are unspecified and must be masked by the caller.
        """
        pos = torch.arange(ids.shape[1], device=ids.device)
        h = self.embedding(ids) + self.positions(pos)[None, :, :]
        h = self.blocks(h, src_key_padding_mask=pad_mask)
        h = self.proj(h)
        return h[:, 0, :], h[:, 1:, :]


def build_encoder(config: EncoderConfig, seed: int) -> SequenceEncoder:
    torch.manual_seed(seed)
    return SequenceEncoder(config)


def pad_batch(
    tokenized: list[TokenizedText], config: EncoderConfig
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack tokenized texts into (ids, pad_mask) tensors."""
    width = max(len(t.ids) for t in tokenized)
    pad = config.vocab[PAD_TOKEN]
    ids = torch.full((len(tokenized), width), pad, dtype=torch.int64)
    mask = torch.ones((len(tokenized), width), dtype=torch.bool)
    for i, t in enumerate(tokenized):
        ids[i, : len(t.ids)] = torch.tensor(t.ids, dtype=torch.int64)
        mask[i, : len(t.ids)] = False
    return ids, mask


def encode(text: str, model: SequenceEncoder, config: EncoderConfig) -> EncodedText:
    """Deterministic evaluation-mode encoding of a single text."""
    tok = tokenize(text, config)
    model.eval()
    with torch.no_grad():
        ids, mask = pad_batch([tok], config)
        cls, tokens = model(ids, mask)
    length = len(tok.ids) - 1
    return EncodedText(
        cls=cls[0].numpy(),
        tokens=tokens[0, :length].numpy(),
        token_index={c: c for c in range(length)},
    )


def component_rows(
    tokens: torch.Tensor, chunked: ChunkedText, M: int, max_chars: int | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable per-category mean pooling over a (l, d_out) tensor.

    A category spread over several chunks pools over all its tokens jointly.
    Rows of categories with no chunk are exactly zero.
    """
    rows = torch.zeros((M, tokens.shape[1]), dtype=tokens.dtype)
    present = torch.zeros(M, dtype=torch.bool)
    limit = tokens.shape[0] if max_chars is None else min(tokens.shape[0], max_chars)
    offsets: dict[int, list[int]] = {}
    for c in chunked.chunks:
        span = [i for i in range(c.start, min(c.end, limit))]
        if span:
            offsets.setdefault(c.category_id, []).extend(span)
    for cid, idx in offsets.items():
        rows[cid] = tokens[idx].mean(dim=0)
        present[cid] = True
    return rows, present


def token_categories(chunked: ChunkedText, max_chars: int) -> list[int]:
    """Category id of each character (chunks cover the text exactly once)."""
    cats = [0] * min(len(chunked.source), max_chars)
    for c in chunked.chunks:
        for i in range(c.start, min(c.end, len(cats))):
            cats[i] = c.category_id
    return cats


def pooled_components(
    tokens: torch.Tensor, cats: torch.Tensor, M: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched per-category mean pooling via segment sums.

    tokens: (N, L, d); cats: (N, L) int64 with -1 at padding. Returns
    rows (N, M, d) and present (N, M); absent categories are exactly zero.
    """
    N, L, d = tokens.shape
    valid = cats >= 0
    idx = torch.arange(N).unsqueeze(1) * M + cats.clamp(min=0)
    scratch = N * M  # padding positions accumulate into a discarded row
    idx = torch.where(valid, idx, torch.full_like(idx, scratch)).reshape(-1)
    sums = torch.zeros((N * M + 1, d), dtype=tokens.dtype).index_add(
        0, idx, tokens.reshape(-1, d)
    )
    counts = torch.zeros(N * M + 1, dtype=tokens.dtype).index_add(
        0, idx, valid.reshape(-1).to(tokens.dtype)
    )
    counts = counts[:scratch].reshape(N, M)
    rows = sums[:scratch].reshape(N, M, d) / counts.clamp(min=1.0).unsqueeze(2)
    return rows, counts > 0


def extract_components(
    encoded: EncodedText, chunked: ChunkedText, taxonomy: ChunkTaxonomy
) -> ComponentMatrix:
    """Mean-pool token vectors per chunk category (numpy, evaluation path)."""
    if len(chunked.source) < encoded.length or (
        chunked.source and encoded.length == 0
    ):
        raise ContractViolation("chunked text does not match the encoded text")
    rows, present = component_rows(
        torch.from_numpy(np.ascontiguousarray(encoded.tokens)),
        chunked,
        taxonomy.M,
        max_chars=encoded.length,
    )
    return ComponentMatrix(rows=rows.numpy(), present=present.numpy())
