"""Text and detection metrics: edit-distance similarity, word accuracy, IoU, AP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


@dataclass(frozen=True)
class Transcription:
    """One annotated region's ground-truth string paired with an OCR prediction."""

    truth: str
    predicted: str


@dataclass(frozen=True)
class Detection:
    category: str
    bbox: tuple[float, float, float, float]
    confidence: float


def levenshtein(s1: str, s2: str) -> int:
    """Codepoint-level edit distance (insert/delete/substitute, unit costs)."""
    if len(s1) < len(s2):
        s1, s2 = s2, s1
    prev = list(range(len(s2) + 1))
    for i, a in enumerate(s1, start=1):
        cur = [i]
        for j, b in enumerate(s2, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b)))
        prev = cur
    return prev[-1]


def ned(s1: str, s2: str) -> float:
    """Edit-distance similarity in [0, 1]: 1 - levenshtein / max length.

    Two empty strings compare as identical (1.0). Normalisation is by the
    longer string, the common OCR convention.
    """
    if not s1 and not s2:
        return 1.0
    return 1.0 - levenshtein(s1, s2) / max(len(s1), len(s2))


def ocr_word_accuracy(transcriptions: Sequence[Transcription]) -> float:
    """Fraction of regions whose prediction equals the truth exactly.

    Comparison is case-sensitive after trimming surrounding whitespace.
    """
    if not transcriptions:
        raise ValueError("no regions")
    hits = sum(1 for t in transcriptions if t.predicted.strip() == t.truth.strip())
    return hits / len(transcriptions)


def iou(b1: Sequence[float], b2: Sequence[float]) -> float:
    """Intersection-over-union of two (x0, y0, x1, y1) boxes."""
    ix0 = max(b1[0], b2[0])
    iy0 = max(b1[1], b2[1])
    ix1 = min(b1[2], b2[2])
    iy1 = min(b1[3], b2[3])
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter == 0.0:
        return 0.0
    area1 = (b1[2] - b1[0]) * (b1[3] - b1[1])
    area2 = (b2[2] - b2[0]) * (b2[3] - b2[1])
    return inter / (area1 + area2 - inter)


@dataclass
class MatchResult:
    """Greedy confidence-ordered matching of one category's detections to GT."""

    # (confidence, is_true_positive) per detection, sorted by confidence desc
    flags: list[tuple[float, bool]] = field(default_factory=list)
    num_gt: int = 0


def match_detections(
    dets: Sequence[Detection],
    gt_boxes: Sequence[Sequence[float]],
    iou_thresh: float,
) -> MatchResult:
    """Match detections of a single category against its ground-truth boxes.

    Detections are visited in descending confidence (stable on ties); each
    claims the unmatched GT box of highest IoU provided IoU >= iou_thresh.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gt_boxes)
    flags: list[tuple[float, bool]] = []
    for i in order:
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gt_boxes):
            if taken[j]:
                continue
            v = iou(dets[i].bbox, g)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_thresh:
            taken[best_j] = True
            flags.append((dets[i].confidence, True))
        else:
            flags.append((dets[i].confidence, False))
    return MatchResult(flags=flags, num_gt=len(gt_boxes))


def ap_from_matches(result: MatchResult) -> float:
    """Area under the interpolated precision-recall curve (all-point rule)."""
    if result.num_gt == 0:
        raise ValueError("undefined AP")
    tp = 0
    precisions: list[float] = []
    recalls: list[float] = []
    for rank, (_, hit) in enumerate(result.flags, start=1):
        tp += hit
        precisions.append(tp / rank)
        recalls.append(tp / result.num_gt)
    # Interpolated precision: running max from the right.
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    ap = 0.0
    prev_r = 0.0
    for p, r in zip(precisions, recalls):
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[tuple[str, Sequence[float]]],
    iou_thresh: float = 0.5,
) -> float:
    """Mean AP over the categories present in ground truth.

    `gts` are (category, bbox) pairs. Detections of categories absent from GT
    contribute nothing; unmatched detections count as false positives within
    their category.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError("iou_thresh must lie in (0, 1)")
    if not gts:
        raise ValueError("undefined AP")
    categories = sorted({c for c, _ in gts})
    total = 0.0
    for cat in categories:
        cat_dets = [d for d in dets if d.category == cat]
        cat_boxes = [b for c, b in gts if c == cat]
        total += ap_from_matches(match_detections(cat_dets, cat_boxes, iou_thresh))
    return total / len(categories)
