"""Four-stage query pipeline: global filtering, optional global expansion,
local re-ranking, optional local expansion.

The global scan picks the top-M candidates; every later stage re-orders
that fixed candidate set and never changes its membership. Distances sort
ascending, similarity scores descending; ties are stable with respect to
the incoming order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ExpansionDepthExceedsList, LengthMismatch
from .featmap import FeatureMap
from .hashnet import HashCode, HashLayerParams, encode
from .index import HashIndex, IndexRecord, hamming, hamming_many, scan_global
from .pooling import roi_max_pool
from .regions import RegionBox, project_bbox

DEFAULT_TOP_M = 400
DEFAULT_EXPANSION_Q = 6


@dataclass(frozen=True)
class SearchConfig:
    m: int = DEFAULT_TOP_M
    q: int = DEFAULT_EXPANSION_Q
    use_gqe: bool = True
    use_lqe: bool = True

    def __post_init__(self):
        if self.m < 1 or self.q < 1:
            raise ValueError("m and q must be positive")
        if self.q > self.m:
            raise ValueError(f"expansion depth q={self.q} exceeds m={self.m}")


@dataclass
class RankedEntry:
    image_id: str
    score: float
    best_box: RegionBox | None = None


@dataclass
class RankedList:
    """Ordered candidates; order is 'asc' for distances, 'desc' for similarities."""

    entries: list[RankedEntry]
    order: str = "asc"

    def image_ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SearchResult:
    final: RankedList
    stages: dict[str, RankedList] = field(default_factory=dict)


def similarity(a: HashCode, b: HashCode) -> float:
    """Hamming similarity normalized to [0, 1]: 1 - distance / bits."""
    return 1.0 - hamming(a, b) / a.bits_len


def _stable_resort(entries: list[RankedEntry], descending: bool) -> list[RankedEntry]:
    # sorted() is stable, so ties keep the incoming order.
    return sorted(entries, key=lambda e: -e.score if descending else e.score)


def gdrh(index: HashIndex, q_code: HashCode, cfg: SearchConfig) -> RankedList:
    """Global filtering: top-M images by whole-image code distance."""
    ranked = scan_global(index, q_code, cfg.m)
    return RankedList([RankedEntry(image_id, float(d)) for image_id, d in ranked], "asc")


def gqe(index: HashIndex, first_list: RankedList, cfg: SearchConfig) -> RankedList:
    """Global query expansion.

    Each candidate is re-scored by its best similarity to the global codes
    of the current top-q candidates, then the list re-sorts descending.
    """
    if cfg.q > len(first_list):
        raise ExpansionDepthExceedsList(f"q={cfg.q} > {len(first_list)} candidates")
    expansion = [
        index.record(e.image_id).global_code for e in first_list.entries[: cfg.q]
    ]
    rescored = []
    for entry in first_list.entries:
        code = index.record(entry.image_id).global_code
        score = max(similarity(exp, code) for exp in expansion)
        rescored.append(RankedEntry(entry.image_id, score, entry.best_box))
    return RankedList(_stable_resort(rescored, descending=True), "desc")


def _best_local(record: IndexRecord, q_words: np.ndarray) -> tuple[int, RegionBox | None]:
    """Min local distance and its box; falls back to the global code."""
    if record.local_words.shape[0] == 0:
        dist = hamming_many(record.global_code.words[None, :], q_words)[0]
        return int(dist), None
    dists = hamming_many(record.local_words, q_words)
    best = int(np.argmin(dists))  # argmin takes the first minimum: stable
    return int(dists[best]), record.locals[best][0]


def ldrh(index: HashIndex, candidate_list: RankedList, q_code: HashCode) -> RankedList:
    """Local re-ranking by minimum Hamming distance over each image's regions."""
    if q_code.bits_len != index.bits_len:
        raise LengthMismatch(f"query is {q_code.bits_len}-bit, index is {index.bits_len}-bit")
    rescored = []
    for entry in candidate_list.entries:
        dist, box = _best_local(index.record(entry.image_id), q_code.words)
        rescored.append(RankedEntry(entry.image_id, float(dist), box))
    return RankedList(_stable_resort(rescored, descending=False), "asc")


def _matched_code(record: IndexRecord, box: RegionBox | None) -> HashCode:
    if box is None:
        return record.global_code
    for local_box, code in record.locals:
        if local_box == box:
            return code
    raise LengthMismatch(f"{record.image_id!r}: box {box} not present in record")


def lqe(index: HashIndex, reranked: RankedList, cfg: SearchConfig) -> RankedList:
    """Local query expansion.

    The expansion set is the best-matched region code of each of the top-q
    images; every candidate is re-scored by the maximum similarity between
    any expansion code and any of its own region codes.
    """
    if cfg.q > len(reranked):
        raise ExpansionDepthExceedsList(f"q={cfg.q} > {len(reranked)} candidates")
    expansion = [
        _matched_code(index.record(e.image_id), e.best_box)
        for e in reranked.entries[: cfg.q]
    ]
    rescored = []
    for entry in reranked.entries:
        record = index.record(entry.image_id)
        targets = record.local_words
        if targets.shape[0] == 0:
            targets = record.global_code.words[None, :]
        best = min(int(hamming_many(targets, exp.words).min()) for exp in expansion)
        rescored.append(
            RankedEntry(entry.image_id, 1.0 - best / index.bits_len, entry.best_box)
        )
    return RankedList(_stable_resort(rescored, descending=True), "desc")


def query_code(
    query_fm: FeatureMap, bbox_px: tuple[float, float, float, float], params: HashLayerParams
) -> HashCode:
    """Hash code of the query patch: project, pool, encode."""
    box = project_bbox(bbox_px, query_fm)
    return encode(params, roi_max_pool(query_fm, box))


def search(
    index: HashIndex,
    query: tuple[FeatureMap, tuple[float, float, float, float]],
    params: HashLayerParams,
    cfg: SearchConfig,
) -> SearchResult:
    """Run the full pipeline; stage flags pick gdrh [gqe] ldrh [lqe]."""
    query_fm, bbox_px = query
    q_code = query_code(query_fm, bbox_px, params)

    stages: dict[str, RankedList] = {}
    current = gdrh(index, q_code, cfg)
    stages["gdrh"] = current
    if cfg.use_gqe:
        current = gqe(index, current, cfg)
        stages["gqe"] = current
    current = ldrh(index, current, q_code)
    stages["ldrh"] = current
    if cfg.use_lqe:
        current = lqe(index, current, cfg)
        stages["lqe"] = current
    return SearchResult(current, stages)
