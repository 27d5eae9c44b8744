"""Chunk category taxonomy and rule-based address chunking.

The taxonomy is a closed set of M categories, each flagged general or
specific. Chunking is deterministic: greedy left-to-right longest match
over the gazetteers, then maximal spans ending in a registered suffix,
with everything left over merged into unknown (ZZ) chunks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError, ValidationError

GENERAL = "general"
SPECIFIC = "specific"

UNKNOWN_NAME = "ZZ"


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    cls: str  # GENERAL or SPECIFIC


@dataclass(frozen=True)
class Chunk:
    start: int
    end: int
    category_id: int
    text: str


@dataclass
class ChunkedText:
    source: str
    chunks: list[Chunk]

    def validate(self) -> None:
        pos = 0
        for c in self.chunks:
            if c.start != pos or c.end <= c.start or c.end > len(self.source):
                raise ValidationError(
                    f"chunk [{c.start},{c.end}) breaks coverage at offset {pos}"
                )
            if self.source[c.start:c.end] != c.text:
                raise ValidationError("chunk text does not match source span")
            pos = c.end
        if pos != len(self.source):
            raise ValidationError(f"chunks cover only {pos}/{len(self.source)} chars")

    def category_ids(self) -> list[int]:
        return [c.category_id for c in self.chunks]


@dataclass
class ChunkTaxonomy:
    categories: list[Category]
    gazetteers: dict[int, set[str]] = field(default_factory=dict)
    suffix_rules: list[tuple[str, int]] = field(default_factory=list)
    aliases: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()
        self._by_name = {c.name: c.id for c in self.categories}
        self._gaz_surface: dict[str, int] = {}
        for cid in sorted(self.gazetteers):
            for surface in self.gazetteers[cid]:
                self._gaz_surface.setdefault(surface, cid)
        self._max_gaz_len = max((len(s) for s in self._gaz_surface), default=0)
        # longest suffix first so the most specific rule wins at a given end
        self._suffixes = sorted(self.suffix_rules, key=lambda r: -len(r[0]))

    @property
    def M(self) -> int:
        return len(self.categories)

    def validate(self) -> None:
        ids = [c.id for c in self.categories]
        if ids != list(range(len(ids))):
            raise ValidationError("category ids must be dense 0..M-1")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate category names: {dup}")
        for c in self.categories:
            if c.cls not in (GENERAL, SPECIFIC):
                raise ValidationError(f"category {c.name}: bad class {c.cls!r}")
        valid = set(range(len(self.categories)))
        for cid in self.gazetteers:
            if cid not in valid:
                raise ValidationError(f"gazetteer for unknown category id {cid}")
        for suffix, cid in self.suffix_rules:
            if cid not in valid:
                raise ValidationError(f"suffix rule {suffix!r} -> unknown id {cid}")
            if not suffix:
                raise ValidationError("empty suffix rule")

    def id_of(self, name: str) -> int:
        if name in self._by_name:
            return self._by_name[name]
        if name in self.aliases:
            return self.aliases[name]
        raise ValidationError(f"unknown category name {name!r}")

    def name_of(self, cid: int) -> str:
        return self.categories[cid].name

    def is_specific(self, cid: int) -> bool:
        return self.categories[cid].cls == SPECIFIC

    def class_ids(self, cls: str) -> list[int]:
        return [c.id for c in self.categories if c.cls == cls]

    @property
    def unknown_id(self) -> int:
        return self._by_name[UNKNOWN_NAME]

    # -- matching helpers used by chunk() --

    def gazetteer_match(self, text: str, pos: int) -> tuple[int, int] | None:
        """Longest gazetteer entry starting at pos -> (end, category_id)."""
        limit = min(len(text), pos + self._max_gaz_len)
        for end in range(limit, pos, -1):
            cid = self._gaz_surface.get(text[pos:end])
            if cid is not None:
                return end, cid
        return None

    def suffix_match(self, text: str, start: int, end: int) -> int | None:
        """Category of the longest suffix ending at `end` within [start, end)."""
        for suffix, cid in self._suffixes:
            if end - len(suffix) >= start and text.endswith(suffix, start, end):
                return cid
        return None


# --- default taxonomy -------------------------------------------------------
#
# 29 categories: 15 general, 14 specific. Codes follow common Chinese
# address-element tagging conventions; ZZ is the unknown/catch-all bucket.

_GENERAL_CATEGORIES = [
    ("PA", "country"),
    ("PB", "province"),
    ("PC", "city"),
    ("PD", "district"),
    ("PE", "township"),
    ("PF", "street"),
    ("PG", "village"),
    ("PH", "business district / development zone"),
    ("PS", "other administrative term"),
    ("UA", "door address: road number"),
    ("UB", "door address: area"),
    ("UC", "door address: building number"),
    ("UD", "door address: unit / extra description"),
    ("Pre", "prefix"),
    ("Con", "conjunction"),
]

_SPECIFIC_CATEGORIES = [
    ("BS", "bus / subway station"),
    ("BL", "bus / subway route"),
    ("RD", "road, highway, tunnel, bridge"),
    ("Entity", "generic point-of-interest name"),
    ("Brand", "well-known brand"),
    ("CatSuf", "category suffix word"),
    ("Ent", "point of interest"),
    ("Br", "brand"),
    ("No", "number"),
    ("UE", "door address: gate / entrance"),
    ("SA", "direction modifier"),
    ("Ye", "semantic connector"),
    ("Des", "descriptor"),
    (UNKNOWN_NAME, "unknown"),
]

# Alternate label vocabularies (dataset-style names) normalized into codes.
_DEFAULT_ALIASES = {
    "country": "PA",
    "prov": "PB",
    "province": "PB",
    "city": "PC",
    "district": "PD",
    "town": "PE",
    "township": "PE",
    "street": "PF",
    "village": "PG",
    "devzone": "PH",
    "houseno": "UC",
    "cellno": "UD",
    "road": "RD",
    "roadno": "No",
    "poi": "Ent",
    "subpoi": "Ent",
    "assist": "SA",
}

_DEFAULT_SUFFIXES = [
    ("省", "PB"),
    ("市", "PC"),
    ("区", "PD"),
    ("县", "PD"),
    ("镇", "PE"),
    ("乡", "PE"),
    ("街道", "PF"),
    ("村", "PG"),
    ("园", "PH"),
    ("园区", "PH"),
    ("科技园", "PH"),
    ("开发区", "PH"),
    ("新区", "PH"),
    ("路", "RD"),
    ("街", "RD"),
    ("巷", "RD"),
    ("大道", "RD"),
    ("高速", "RD"),
    ("号", "No"),
    ("号楼", "UC"),
    ("栋", "UC"),
    ("幢", "UC"),
    ("单元", "UD"),
    ("室", "UD"),
    ("层", "UD"),
    ("门", "UE"),
    ("口", "UE"),
    ("站", "BS"),
    ("号线", "BL"),
    ("中学", "Ent"),
    ("小学", "Ent"),
    ("大学", "Ent"),
    ("医院", "Ent"),
    ("广场", "Ent"),
    ("大厦", "Ent"),
    ("中心", "Ent"),
    ("公园", "Ent"),
    ("酒店", "Ent"),
    ("超市", "Ent"),
    ("银行", "Ent"),
    ("公司", "Ent"),
]

_DEFAULT_GAZETTEERS = {
    "PA": {"中国"},
    "PB": {"内蒙古", "西藏", "新疆", "宁夏", "广西"},
    "PC": {"北京", "上海", "天津", "重庆"},
    # single-char compass words are deliberately absent: they occur inside
    # road and POI names far more often than as standalone modifiers
    "SA": {"侧", "旁", "对面", "附近"},
    "Ye": {"交叉口"},
}


def default_taxonomy() -> ChunkTaxonomy:
    categories = []
    for name, _desc in _GENERAL_CATEGORIES:
        categories.append(Category(len(categories), name, GENERAL))
    for name, _desc in _SPECIFIC_CATEGORIES:
        categories.append(Category(len(categories), name, SPECIFIC))
    by_name = {c.name: c.id for c in categories}
    gazetteers = {
        by_name[name]: set(entries) for name, entries in _DEFAULT_GAZETTEERS.items()
    }
    suffix_rules = [(s, by_name[name]) for s, name in _DEFAULT_SUFFIXES]
    aliases = {alias: by_name[name] for alias, name in _DEFAULT_ALIASES.items()}
    return ChunkTaxonomy(categories, gazetteers, suffix_rules, aliases)


def load_taxonomy(path: str | None = None) -> ChunkTaxonomy:
    """Load a taxonomy file, or return the built-in default when path is None.

    Format: one `id<TAB>name<TAB>general|specific` record per category,
    then optional `@gazetteer <name>` / `@suffix <name>` blocks listing one
    entry per line.
    """
    if path is None:
        return default_taxonomy()
    categories: list[Category] = []
    gazetteers: dict[str, set[str]] = {}
    suffixes: list[tuple[str, str]] = []
    block: tuple[str, str] | None = None  # (kind, category name)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("@gazetteer ") or line.startswith("@suffix "):
                kind, _, name = line.partition(" ")
                block = (kind[1:], name.strip())
                continue
            if block is not None:
                kind, name = block
                if kind == "gazetteer":
                    gazetteers.setdefault(name, set()).add(line)
                else:
                    suffixes.append((line, name))
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'id<TAB>name<TAB>class', got {line!r}"
                )
            try:
                cid = int(parts[0])
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad id {parts[0]!r}")
            if parts[2] not in (GENERAL, SPECIFIC):
                raise ConfigurationError(f"{path}:{lineno}: bad class {parts[2]!r}")
            categories.append(Category(cid, parts[1], parts[2]))
    by_name = {c.name: c.id for c in categories}
    names = [c.name for c in categories]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValidationError(f"{path}: duplicate category names: {dup}")
    for name in list(gazetteers) + [n for _, n in suffixes]:
        if name not in by_name:
            raise ConfigurationError(f"{path}: block references unknown category {name!r}")
    return ChunkTaxonomy(
        categories,
        {by_name[n]: entries for n, entries in gazetteers.items()},
        [(s, by_name[n]) for s, n in suffixes],
    )


def chunk(text: str, taxonomy: ChunkTaxonomy) -> ChunkedText:
    """Segment text into labeled chunks; total and deterministic.

    Priority at each position: longest gazetteer entry, else the shortest
    span ending in a registered suffix (longest suffix wins at that end),
    else unknown characters merged up to the next gazetteer hit.
    """
    n = len(text)
    chunks: list[Chunk] = []
    unknown = taxonomy.unknown_id
    pos = 0
    while pos < n:
        gaz = taxonomy.gazetteer_match(text, pos)
        if gaz is not None:
            end, cid = gaz
            chunks.append(Chunk(pos, end, cid, text[pos:end]))
            pos = end
            continue
        # stop suffix spans before the next gazetteer entry so rare known
        # surfaces are never swallowed by a generic suffix span
        limit = n
        for q in range(pos + 1, n):
            if taxonomy.gazetteer_match(text, q) is not None:
                limit = q
                break
        emitted = False
        for end in range(pos + 1, limit + 1):
            cid = taxonomy.suffix_match(text, pos, end)
            if cid is not None:
                chunks.append(Chunk(pos, end, cid, text[pos:end]))
                pos = end
                emitted = True
                break
        if not emitted:
            chunks.append(Chunk(pos, limit, unknown, text[pos:limit]))
            pos = limit
    # merge adjacent unknown chunks into maximal spans
    merged: list[Chunk] = []
    for c in chunks:
        if merged and c.category_id == unknown and merged[-1].category_id == unknown:
            prev = merged.pop()
            merged.append(Chunk(prev.start, c.end, unknown, text[prev.start:c.end]))
        else:
            merged.append(c)
    out = ChunkedText(text, merged)
    out.validate()
    return out


_COARSE = ChunkTaxonomy(
    [Category(0, "even", GENERAL), Category(1, "odd", SPECIFIC)]
)


def coarse_taxonomy() -> ChunkTaxonomy:
    """Degenerate 2-category taxonomy used by the coarse chunk scheme."""
    return _COARSE


def coarse_chunk(text: str) -> ChunkedText:
    """Fixed-length bigram segmentation with alternating labels.

    Stands in for an unrelated segmentation scheme when comparing chunk
    sources; carries no geographic signal on purpose.
    """
    chunks = []
    for i, start in enumerate(range(0, len(text), 2)):
        end = min(start + 2, len(text))
        chunks.append(Chunk(start, end, i % 2, text[start:end]))
    out = ChunkedText(text, chunks)
    out.validate()
    return out
