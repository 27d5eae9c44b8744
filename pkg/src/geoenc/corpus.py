"""Dataset model, JSONL I/O and the synthetic address generator.

The generator builds query/candidate sets from per-category vocabularies
whose sizes grow from general categories (few provinces) to specific ones
(many roads, numbers, POIs), reproducing the diversity gradient real
address corpora show.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .errors import GenerationError, ParseError, ValidationError
from .taxonomy import Chunk, ChunkedText, ChunkTaxonomy, chunk as geo_chunk


@dataclass
class RankingInstance:
    query: ChunkedText
    candidates: list[ChunkedText]
    gold_index: int
    relevance: list[int] | None = None

    def validate(self) -> None:
        if len(self.candidates) < 2:
            raise ValidationError("an instance needs at least 2 candidates")
        if not 0 <= self.gold_index < len(self.candidates):
            raise ValidationError(
                f"gold_index {self.gold_index} out of range for "
                f"{len(self.candidates)} candidates"
            )
        if self.relevance is not None:
            if len(self.relevance) != len(self.candidates):
                raise ValidationError("relevance length != candidate count")
            if any(r < 0 for r in self.relevance):
                raise ValidationError("relevance grades must be non-negative")
            top = max(self.relevance)
            if top <= 0 or self.relevance[self.gold_index] != top:
                raise ValidationError("gold candidate must carry the max positive grade")


@dataclass
class CorpusStats:
    n_queries: int
    n_tokens: int
    asl: float
    cands: int


def stats(instances: list[RankingInstance]) -> CorpusStats:
    if not instances:
        raise ValidationError("stats of an empty corpus is undefined")
    chars: set[str] = set()
    total_len = 0
    for inst in instances:
        total_len += len(inst.query.source)
        chars.update(inst.query.source)
        for cand in inst.candidates:
            chars.update(cand.source)
    return CorpusStats(
        n_queries=len(instances),
        n_tokens=len(chars),
        asl=total_len / len(instances),
        cands=len(instances[0].candidates),
    )


# --- synthetic generator ----------------------------------------------------

# Character pool for invented place-name stems.
_NAME_CHARS = (
    "安宝长春东风阜光海河湖华吉江金京兰梅南宁平青山泉沙胜天文武西溪兴"
    "雅延阳永玉云泽中州竹紫龙凤桂松柏杨柳桥塘湾坪岭坡岗"
)

# (category name, general?, surface builder suffix pool)
_SLOT_ORDER = ["PB", "PC", "PD", "RD", "No", "Ent"]
_GENERAL_SLOTS = {"PB", "PC", "PD"}
_SLOT_SUFFIXES = {
    "PB": ["省"],
    "PC": ["市"],
    "PD": ["区"],
    "RD": ["路", "街", "大道"],
    "Ent": ["大厦", "广场", "中心", "医院", "公园"],
}


@dataclass
class GeneratorConfig:
    seed: int = 42
    n_queries: int = 100
    n_candidates: int = 20
    vocab_sizes: dict[str, int] = field(
        default_factory=lambda: {
            "PB": 6, "PC": 12, "PD": 25, "RD": 150, "No": 200, "Ent": 300,
        }
    )
    perturbation_rates: dict[str, float] = field(
        default_factory=lambda: {
            "swap_specific": 0.9, "swap_general": 0.1, "drop_chunk": 0.5,
            "shuffle_chunks": 1.0,
        }
    )

    def validate(self) -> None:
        if self.n_queries < 1 or self.n_candidates < 2:
            raise ValidationError("need n_queries >= 1 and n_candidates >= 2")
        for name, size in self.vocab_sizes.items():
            if size < 1:
                raise ValidationError(f"vocab size for {name} must be positive")
        for name, p in self.perturbation_rates.items():
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"perturbation rate {name}={p} outside [0,1]")


def _build_vocab(rng: random.Random, config: GeneratorConfig) -> dict[str, list[str]]:
    vocab: dict[str, list[str]] = {}
    for slot in _SLOT_ORDER:
        size = config.vocab_sizes.get(slot, 1)
        entries: set[str] = set()
        if slot == "No":
            entries = {f"{i}号" for i in range(1, size + 1)}
        else:
            attempts = 0
            while len(entries) < size:
                stem_len = 2 if slot in _GENERAL_SLOTS else (2 + (len(entries) % 2))
                stem = "".join(rng.choice(_NAME_CHARS) for _ in range(stem_len))
                entries.add(stem + rng.choice(_SLOT_SUFFIXES[slot]))
                attempts += 1
                if attempts > 100 * size + 1000:
                    raise GenerationError(
                        f"cannot build {size} distinct surfaces for category {slot}"
                    )
        vocab[slot] = sorted(entries)
    return vocab


def _assemble(parts: list[tuple[str, str]], taxonomy: ChunkTaxonomy) -> ChunkedText:
    """Build a ChunkedText from (category name, surface) pairs."""
    chunks = []
    pos = 0
    for name, surface in parts:
        chunks.append(Chunk(pos, pos + len(surface), taxonomy.id_of(name), surface))
        pos += len(surface)
    text = "".join(s for _, s in parts)
    out = ChunkedText(text, chunks)
    out.validate()
    return out


def generate_corpus(
    config: GeneratorConfig, taxonomy: ChunkTaxonomy
) -> list[RankingInstance]:
    """Deterministically generate ranking instances for a fixed seed.

    The gold candidate keeps every specific chunk of the query (it may drop
    a general chunk); every negative differs from the query in at least one
    chunk, usually a specific one.
    """
    config.validate()
    rng = random.Random(config.seed)
    vocab = _build_vocab(rng, config)
    rates = config.perturbation_rates
    p_spec = rates.get("swap_specific", 0.65)
    p_gen = rates.get("swap_general", 0.35)
    if p_spec + p_gen <= 0:
        raise ValidationError("swap_specific + swap_general must be positive")
    p_spec = p_spec / (p_spec + p_gen)
    p_drop = rates.get("drop_chunk", 0.0)
    p_shuffle = rates.get("shuffle_chunks", 0.0)

    instances = []
    for _ in range(config.n_queries):
        query_parts = [(slot, rng.choice(vocab[slot])) for slot in _SLOT_ORDER]

        def benign_variation(parts: list[tuple[str, str]]) -> list[tuple[str, str]]:
            # applied to gold and negatives alike, so surface variation
            # carries no signal about which candidate is gold
            parts = list(parts)
            if rng.random() < p_drop:
                idx = rng.choice(
                    [i for i, (slot, _) in enumerate(parts) if slot in _GENERAL_SLOTS]
                )
                parts.pop(idx)
            if rng.random() < p_shuffle:
                rng.shuffle(parts)
            return parts

        gold_parts = benign_variation(query_parts)

        seen = {"".join(s for _, s in query_parts), "".join(s for _, s in gold_parts)}
        negatives: list[list[tuple[str, str]]] = []
        attempts = 0
        while len(negatives) < config.n_candidates - 1:
            attempts += 1
            if attempts > 200 * config.n_candidates:
                raise GenerationError(
                    f"vocab too small to produce {config.n_candidates - 1} "
                    "distinct negatives"
                )
            parts = list(query_parts)
            pool = _GENERAL_SLOTS if rng.random() >= p_spec else set(_SLOT_ORDER) - _GENERAL_SLOTS
            idx = rng.choice([i for i, (slot, _) in enumerate(parts) if slot in pool])
            slot, old = parts[idx]
            alternatives = [v for v in vocab[slot] if v != old]
            if not alternatives:
                continue
            parts[idx] = (slot, rng.choice(alternatives))
            parts = benign_variation(parts)
            text = "".join(s for _, s in parts)
            if text in seen:
                continue
            seen.add(text)
            negatives.append(parts)

        gold_index = rng.randrange(config.n_candidates)
        candidate_parts = list(negatives)
        candidate_parts.insert(gold_index, gold_parts)
        inst = RankingInstance(
            query=_assemble(query_parts, taxonomy),
            candidates=[_assemble(p, taxonomy) for p in candidate_parts],
            gold_index=gold_index,
        )
        inst.validate()
        instances.append(inst)
    return instances


# --- JSONL I/O ---------------------------------------------------------------


def _chunks_to_json(ct: ChunkedText, taxonomy: ChunkTaxonomy) -> list[list]:
    return [[c.start, c.end, taxonomy.name_of(c.category_id)] for c in ct.chunks]


def _chunks_from_json(
    text: str, spans, taxonomy: ChunkTaxonomy, line: int
) -> ChunkedText:
    if spans is None:
        return geo_chunk(text, taxonomy)
    chunks = []
    for span in spans:
        if len(span) != 3:
            raise ParseError(f"chunk span {span!r} must be [start, end, category]", line)
        start, end, name = span
        chunks.append(Chunk(start, end, taxonomy.id_of(name), text[start:end]))
    ct = ChunkedText(text, chunks)
    ct.validate()
    return ct


def save_jsonl(
    instances: list[RankingInstance], path: str, taxonomy: ChunkTaxonomy
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            record = {
                "query": inst.query.source,
                "query_chunks": _chunks_to_json(inst.query, taxonomy),
                "candidates": [
                    {"text": cand.source, "chunks": _chunks_to_json(cand, taxonomy)}
                    for cand in inst.candidates
                ],
                "gold_index": inst.gold_index,
            }
            if inst.relevance is not None:
                for cand_rec, rel in zip(record["candidates"], inst.relevance):
                    cand_rec["relevance"] = rel
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_jsonl(path: str, taxonomy: ChunkTaxonomy) -> list[RankingInstance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno)
            for key in ("query", "candidates", "gold_index"):
                if key not in record:
                    raise ParseError(f"missing field {key!r}", lineno)
            if len(record["candidates"]) < 2:
                raise ParseError("need at least 2 candidates", lineno)
            query = _chunks_from_json(
                record["query"], record.get("query_chunks"), taxonomy, lineno
            )
            candidates = []
            relevance = []
            has_rel = False
            for cand in record["candidates"]:
                if "text" not in cand:
                    raise ParseError("candidate missing 'text'", lineno)
                candidates.append(
                    _chunks_from_json(cand["text"], cand.get("chunks"), taxonomy, lineno)
                )
                if "relevance" in cand:
                    has_rel = True
                relevance.append(int(cand.get("relevance", 0)))
            inst = RankingInstance(
                query=query,
                candidates=candidates,
                gold_index=record["gold_index"],
                relevance=relevance if has_rel else None,
            )
            try:
                inst.validate()
            except ValidationError as exc:
                raise ParseError(str(exc), lineno)
            instances.append(inst)
    return instances
