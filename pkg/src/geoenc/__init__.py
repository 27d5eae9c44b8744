"""Chunk-aware bi-encoder re-ranking for Chinese geographic addresses."""

__version__ = "0.1.0"

from .corpus import GeneratorConfig, RankingInstance, generate_corpus, load_jsonl, save_jsonl
from .encoder import EncoderConfig
from .evaluator import EvalReport, evaluate, rerank
from .ranker import GeoEncoderRanker
from .taxonomy import ChunkTaxonomy, chunk, coarse_chunk, default_taxonomy, load_taxonomy
from .trainer import TrainConfig, train

__all__ = [
    "ChunkTaxonomy",
    "EncoderConfig",
    "EvalReport",
    "GeneratorConfig",
    "GeoEncoderRanker",
    "RankingInstance",
    "TrainConfig",
    "chunk",
    "coarse_chunk",
    "default_taxonomy",
    "evaluate",
    "generate_corpus",
    "load_jsonl",
    "load_taxonomy",
    "rerank",
    "save_jsonl",
    "train",
]
