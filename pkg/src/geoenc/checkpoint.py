"""Self-describing single-file checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(config, vocab, taxonomy categories, fusion metadata, tensor table), then
raw little-endian float64 tensor bytes in table order. Writing the same
state twice produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .encoder import EncoderConfig, SequenceEncoder
from .errors import ConfigurationError
from .objective import AttentionWeights, FusionMode, parse_fusion
from .taxonomy import Category, ChunkTaxonomy

MAGIC = b"GEOENC01"


@dataclass
class TrainedModel:
    model: SequenceEncoder
    encoder_config: EncoderConfig
    taxonomy: ChunkTaxonomy
    attention: AttentionWeights
    fusion: FusionMode
    observed_categories: list[int]

    def fusion_tag(self) -> str:
        if self.fusion.kind == "fixed":
            return f"fixed:{self.fusion.fixed_value}"
        return self.fusion.kind


def save_checkpoint(path: str, trained: TrainedModel) -> None:
    state = trained.model.state_dict()
    tensors: list[tuple[str, np.ndarray]] = [
        (name, tensor.detach().cpu().numpy().astype("<f8"))
        for name, tensor in state.items()
    ]
    tensors.append(("attention_w", trained.attention.w.astype("<f8")))
    header = {
        "version": 1,
        "encoder_config": trained.encoder_config.to_dict(),
        "taxonomy": [[c.id, c.name, c.cls] for c in trained.taxonomy.categories],
        "fusion": trained.fusion_tag(),
        "gamma": trained.attention.gamma,
        "attn_init": trained.attention.init_value,
        "frozen": trained.attention.frozen,
        "observed_categories": sorted(trained.observed_categories),
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path: str) -> TrainedModel:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != 1:
            raise ConfigurationError(f"{path}: unsupported version {header.get('version')}")
        arrays: dict[str, np.ndarray] = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    config = EncoderConfig.from_dict(header["encoder_config"])
    model = SequenceEncoder(config)
    state = {
        name: torch.from_numpy(arrays[name])
        for name in model.state_dict()
    }
    model.load_state_dict(state)
    model.eval()
    taxonomy = ChunkTaxonomy(
        [Category(cid, name, cls) for cid, name, cls in header["taxonomy"]]
    )
    attention = AttentionWeights(
        w=arrays["attention_w"],
        gamma=header["gamma"],
        frozen=header["frozen"],
        init_value=header["attn_init"],
    )
    return TrainedModel(
        model=model,
        encoder_config=config,
        taxonomy=taxonomy,
        attention=attention,
        fusion=parse_fusion(header["fusion"]),
        observed_categories=list(header["observed_categories"]),
    )
