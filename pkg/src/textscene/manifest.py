"""Dataset record model: samples, text regions, object boxes, and the
line-oriented JSON manifest they serialize to, plus the placement-rule
validator applied to every record the synthesis pipeline emits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

REGION_COUNT_MAX = 8
LINE_COUNT_MAX = 8
MIN_EXTENT_FRAC = 0.02   # per-region: quad extent vs each image dimension
MIN_TOTAL_AREA_FRAC = 0.05  # summed quad area vs image area


class ManifestError(ValueError):
    """Manifest validation failure with a stable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class TextRegion:
    text: str
    quad: tuple[float, ...]  # 8 pixel coords, clockwise from top-left
    font_px: int
    rotation_deg: float
    lines: int
    bold: bool
    border: bool

    def __post_init__(self):
        if len(self.quad) != 8:
            raise ManifestError("bad-quad", f"quad needs 8 coords, got {len(self.quad)}")
        if self.lines < 1:
            raise ManifestError("bad-lines", f"lines must be >= 1, got {self.lines}")
        if not quad_is_simple(self.quad):
            raise ManifestError("degenerate-quad", "quad is self-intersecting or collapsed")

    def bbox(self) -> tuple[float, float, float, float]:
        xs = self.quad[0::2]
        ys = self.quad[1::2]
        return (min(xs), min(ys), max(xs), max(ys))

    def area(self) -> float:
        return quad_area(self.quad)


@dataclass(frozen=True)
class ObjectBox:
    category: str
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ManifestError("degenerate-bbox", f"bbox {self.bbox} has non-positive extent")


@dataclass(frozen=True)
class Sample:
    image_ref: str
    depth_ref: str
    caption: str
    text_regions: tuple[TextRegion, ...]
    objects: tuple[ObjectBox, ...]

    def check_bounds(self, image_dims: tuple[int, int]) -> None:
        """Raise unless every quad and bbox lies inside [0, W) x [0, H)."""
        w, h = image_dims
        for i, r in enumerate(self.text_regions):
            x0, y0, x1, y1 = r.bbox()
            if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h:
                raise ManifestError("out-of-bounds", f"text_regions[{i}] quad exceeds {w}x{h}")
        for i, o in enumerate(self.objects):
            x0, y0, x1, y1 = o.bbox
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                raise ManifestError("out-of-bounds", f"objects[{i}] bbox exceeds {w}x{h}")


@dataclass(frozen=True)
class GlyphImage:
    """Single-channel 8-bit canvas; text coverage is 255 on a 0 background."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise ValueError("glyph canvas must be 2-D uint8")


def quad_area(quad: Sequence[float]) -> float:
    """Shoelace area of a 4-gon given as flat (x0,y0,...,x3,y3)."""
    xs = quad[0::2]
    ys = quad[1::2]
    acc = 0.0
    for i in range(4):
        j = (i + 1) % 4
        acc += xs[i] * ys[j] - xs[j] * ys[i]
    return abs(acc) / 2.0


def quad_is_simple(quad: Sequence[float]) -> bool:
    """True when the quad's opposite edges do not cross and area is nonzero."""
    if quad_area(quad) <= 0.0:
        return False
    pts = [(quad[2 * i], quad[2 * i + 1]) for i in range(4)]
    edges = [(pts[i], pts[(i + 1) % 4]) for i in range(4)]
    return not (_segments_cross(*edges[0], *edges[2]) or _segments_cross(*edges[1], *edges[3]))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    return (
        orient(p1, p2, q1) != orient(p1, p2, q2)
        and orient(q1, q2, p1) != orient(q1, q2, p2)
    )


# --- serialization ----------------------------------------------------------

_REGION_FIELDS = ("text", "quad", "font_px", "rotation_deg", "lines", "bold", "border")
_OBJECT_FIELDS = ("category", "bbox")
_SAMPLE_FIELDS = ("image", "depth", "caption", "text_regions", "objects")


def serialize_sample(sample: Sample) -> bytes:
    """Encode one sample as a single UTF-8 JSON line (no trailing newline)."""
    rec = {
        "image": sample.image_ref,
        "depth": sample.depth_ref,
        "caption": sample.caption,
        "text_regions": [
            {
                "text": r.text,
                "quad": list(r.quad),
                "font_px": r.font_px,
                "rotation_deg": r.rotation_deg,
                "lines": r.lines,
                "bold": r.bold,
                "border": r.border,
            }
            for r in sample.text_regions
        ],
        "objects": [{"category": o.category, "bbox": list(o.bbox)} for o in sample.objects],
    }
    return json.dumps(rec, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_sample(record: bytes, image_dims: tuple[int, int] | None = None) -> Sample:
    """Decode one manifest line back into a Sample.

    Structural invariants (field presence, quad shape, bbox orientation) are
    always enforced; coordinate upper bounds require `image_dims` since the
    record stores pixel coordinates and not the image size.
    """
    try:
        obj = json.loads(record.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError("malformed-syntax", str(exc)) from exc
    if not isinstance(obj, dict):
        raise ManifestError("malformed-syntax", "record is not an object")
    for name in _SAMPLE_FIELDS:
        if name not in obj:
            raise ManifestError("missing-field", name)
    regions = []
    for i, r in enumerate(obj["text_regions"]):
        for name in _REGION_FIELDS:
            if name not in r:
                raise ManifestError("missing-field", f"text_regions[{i}].{name}")
        regions.append(
            TextRegion(
                text=str(r["text"]),
                quad=tuple(float(v) for v in r["quad"]),
                font_px=int(r["font_px"]),
                rotation_deg=float(r["rotation_deg"]),
                lines=int(r["lines"]),
                bold=bool(r["bold"]),
                border=bool(r["border"]),
            )
        )
    objects = []
    for i, o in enumerate(obj["objects"]):
        for name in _OBJECT_FIELDS:
            if name not in o:
                raise ManifestError("missing-field", f"objects[{i}].{name}")
        if len(o["bbox"]) != 4:
            raise ManifestError("degenerate-bbox", f"objects[{i}] bbox needs 4 numbers")
        objects.append(ObjectBox(category=str(o["category"]), bbox=tuple(float(v) for v in o["bbox"])))
    sample = Sample(
        image_ref=str(obj["image"]),
        depth_ref=str(obj["depth"]),
        caption=str(obj["caption"]),
        text_regions=tuple(regions),
        objects=tuple(objects),
    )
    for r in sample.text_regions:
        if min(r.quad) < 0:
            raise ManifestError("out-of-bounds", "negative quad coordinate")
    for o in sample.objects:
        if min(o.bbox) < 0:
            raise ManifestError("out-of-bounds", "negative bbox coordinate")
    if image_dims is not None:
        sample.check_bounds(image_dims)
    return sample


def write_manifest(samples: Iterable[Sample], path) -> None:
    with open(path, "wb") as fh:
        for s in samples:
            fh.write(serialize_sample(s))
            fh.write(b"\n")


def read_manifest(path, image_dims: tuple[int, int] | None = None) -> Iterator[Sample]:
    with open(path, "rb") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield parse_sample(line, image_dims)


# --- placement rules --------------------------------------------------------

@dataclass(frozen=True)
class RuleViolation:
    rule: int
    detail: str


@dataclass(frozen=True)
class RuleReport:
    passed: bool
    violations: tuple[RuleViolation, ...] = field(default=())

    def violated_rules(self) -> set[int]:
        return {v.rule for v in self.violations}


def validate_filtering_rules(sample: Sample, image_dims: tuple[int, int]) -> RuleReport:
    """Check a sample against the placement rules used during synthesis.

    Rule 1: between 1 and 8 text regions. Rule 2: 1 to 8 lines per region.
    Rule 4: each region's axis-aligned extent reaches 2% of the matching
    image dimension, and the regions' summed quad area reaches 5% of the
    image. (Rules 3 and 5 describe how layouts are drawn, not predicates on
    the result, so they have no check here.)
    """
    w, h = image_dims
    violations: list[RuleViolation] = []
    m = len(sample.text_regions)
    if not 1 <= m <= REGION_COUNT_MAX:
        violations.append(RuleViolation(1, f"region count {m} outside [1, {REGION_COUNT_MAX}]"))
    total_area = 0.0
    for i, r in enumerate(sample.text_regions):
        if not 1 <= r.lines <= LINE_COUNT_MAX:
            violations.append(RuleViolation(2, f"region {i} has {r.lines} lines"))
        x0, y0, x1, y1 = r.bbox()
        if (x1 - x0) < MIN_EXTENT_FRAC * w or (y1 - y0) < MIN_EXTENT_FRAC * h:
            violations.append(
                RuleViolation(4, f"region {i} extent {x1 - x0:.1f}x{y1 - y0:.1f} under 2% of {w}x{h}")
            )
        total_area += r.area()
    if total_area < MIN_TOTAL_AREA_FRAC * w * h:
        violations.append(
            RuleViolation(4, f"summed region area {total_area:.0f} under 5% of image ({w * h})")
        )
    return RuleReport(passed=not violations, violations=tuple(violations))
