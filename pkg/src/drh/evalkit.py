"""Mean-average-precision evaluation against Oxford/Paris-style ground truth.

Ground-truth directories follow the <name>_query.txt / _good.txt / _ok.txt /
_junk.txt convention. Positives are good + ok; junk images are excised from
rankings before scoring, counting neither for nor against.
"""

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyPositives, MalformedQueryFile, MissingQueryResult

# Oxford query stems carry a dataset tag like "oxc1_"; Paris stems do not.
_QUERY_TAG = re.compile(r"^[a-z]+\d+_")


@dataclass
class QueryGroundTruth:
    query_id: str
    query_image_id: str
    bbox_px: tuple[float, float, float, float]
    positives: set[str] = field(default_factory=set)
    junk: set[str] = field(default_factory=set)

    def __post_init__(self):
        overlap = self.positives & self.junk
        if overlap:
            raise MalformedQueryFile(
                f"{self.query_id}: images {sorted(overlap)[:3]} are both positive and junk"
            )


def average_precision(ranked: list[str], gt: QueryGroundTruth) -> float:
    """Average precision with junk entries removed from the ranking.

    AP is the mean over recall points of the precision at each retrieved
    positive; positives never retrieved contribute zero.
    """
    if not gt.positives:
        raise EmptyPositives(f"{gt.query_id}: no positive images")
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranking contains duplicates")
    hits = 0
    seen = 0
    total = 0.0
    for image_id in ranked:
        if image_id in gt.junk:
            continue
        seen += 1
        if image_id in gt.positives:
            hits += 1
            total += hits / seen
    return total / len(gt.positives)


def mean_average_precision(
    results: dict[str, list[str]], gts: list[QueryGroundTruth]
) -> float:
    """Arithmetic mean of per-query AP over all ground-truth queries."""
    if not gts:
        raise MissingQueryResult("no ground-truth queries")
    aps = []
    for gt in gts:
        if gt.query_id not in results:
            raise MissingQueryResult(gt.query_id)
        aps.append(average_precision(results[gt.query_id], gt))
    return sum(aps) / len(aps)


def _read_id_list(path: Path) -> set[str]:
    if not path.exists():
        return set()
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def parse_ground_truth(gt_dir) -> list[QueryGroundTruth]:
    """Load every <name>_query.txt in a directory, with its good/ok/junk lists.

    A query line holds the image stem and the box corners x1 y1 x2 y2; the
    stem's leading dataset tag (e.g. "oxc1_") is stripped and the box is
    converted to (x, y, w, h).
    """
    gt_dir = Path(gt_dir)
    queries = []
    for query_file in sorted(gt_dir.glob("*_query.txt")):
        name = query_file.name[: -len("_query.txt")]
        text = query_file.read_text().strip()
        parts = text.split()
        if len(parts) != 5:
            raise MalformedQueryFile(f"{query_file}: expected 5 fields, got {len(parts)}")
        stem = _QUERY_TAG.sub("", parts[0])
        try:
            x1, y1, x2, y2 = (float(v) for v in parts[1:])
        except ValueError as exc:
            raise MalformedQueryFile(f"{query_file}: non-numeric bbox") from exc
        if x2 <= x1 or y2 <= y1:
            raise MalformedQueryFile(f"{query_file}: empty bbox")
        positives = _read_id_list(gt_dir / f"{name}_good.txt") | _read_id_list(
            gt_dir / f"{name}_ok.txt"
        )
        junk = _read_id_list(gt_dir / f"{name}_junk.txt")
        queries.append(
            QueryGroundTruth(name, stem, (x1, y1, x2 - x1, y2 - y1), positives, junk)
        )
    if not queries:
        raise MalformedQueryFile(f"no *_query.txt files under {os.fspath(gt_dir)}")
    return queries
