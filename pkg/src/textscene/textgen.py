"""Text layout and glyph rasterization: draw a rule-conformant layout over
candidate regions, pick legible colors, and render styled (rotated, twisted,
bolded, bordered) word stacks as coverage masks with exact placement quads."""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from .images import contrast_ratio
from .regions import CandidateRegion

LINE_COUNT_MAX = 8
REGION_COUNT_MAX = 8
FONT_PX_MIN = 6

# permanently-unassigned codepoint; rendering it yields the font's tofu box
_NOTDEF_PROBE = "͸"


def default_font_path() -> str:
    return str(resources.files("textscene").joinpath("data/fonts/DejaVuSans.ttf"))


@lru_cache(maxsize=512)
def load_font(path: str | None, px: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(path or default_font_path(), px)


@lru_cache(maxsize=4096)
def _is_covered(path: str | None, ch: str) -> bool:
    if ch.isspace():
        return True
    font = load_font(path, 32)
    probe = font.getmask(_NOTDEF_PROBE)
    mask = font.getmask(ch)
    if mask.size != probe.size:
        return True
    return bytes(mask) != bytes(probe)


def uncovered_codepoints(text: str, font_path: str | None = None) -> list[str]:
    """Characters the font cannot draw (they would render as tofu boxes)."""
    return sorted({ch for ch in text if not _is_covered(font_path, ch)})


@dataclass(frozen=True)
class TextStyle:
    font_px: int
    rotation_deg: float
    twist_amp: float          # px of sinusoidal baseline displacement
    bold: bool
    border: bool
    color: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.font_px < FONT_PX_MIN:
            raise ValueError(f"font_px must be >= {FONT_PX_MIN}")
        if abs(self.twist_amp) > 0.25 * self.font_px + 1e-9:
            raise ValueError("twist amplitude above a quarter of the font size")


@dataclass(frozen=True)
class BlockGeometry:
    """Exact pre-rotation geometry of a rendered word stack, derived purely
    from font metrics so layout fitting and rasterization agree."""

    canvas_w: int
    canvas_h: int
    draw_positions: tuple[tuple[int, int], ...]  # per-line PIL text origin
    pad: int          # bold/border headroom on every side
    twist_pad: int    # vertical headroom for the sinusoidal shift

    @property
    def rotated_size(self) -> tuple[int, int]:
        return self.canvas_w, self.canvas_h


@lru_cache(maxsize=65536)
def _line_box(path: str | None, px: int, line: str) -> tuple[int, int, int, int]:
    return load_font(path, px).getbbox(line)


@lru_cache(maxsize=2048)
def _font_metrics(path: str | None, px: int) -> tuple[int, int]:
    return load_font(path, px).getmetrics()


def _line_boxes(lines: Sequence[str], font_path: str | None, px: int):
    return [_line_box(font_path, px, line) for line in lines]


def block_geometry(text: str, style: TextStyle, font_path: str | None = None) -> BlockGeometry:
    """Layout of the (possibly multi-line) text at the style's font size.

    Lines are centered on the widest line and stacked at the font's natural
    advance; the canvas is the tight ink box plus twist and stroke headroom.
    """
    lines = text.split("\n")
    boxes = _line_boxes(lines, font_path, style.font_px)
    widths = [b[2] - b[0] for b in boxes]
    if min(widths) <= 0:
        raise ValueError("empty line in text block")
    ascent, descent = _font_metrics(font_path, style.font_px)
    advance = ascent + descent
    block_w = max(widths)
    ink_top = boxes[0][1]
    ink_bottom = (len(lines) - 1) * advance + boxes[-1][3]
    block_h = ink_bottom - ink_top
    if block_h <= 0:
        raise ValueError("text block has no ink height")
    pad = int(style.bold) + int(style.border)
    twist_pad = int(math.ceil(abs(style.twist_amp)))
    positions = []
    for k, (bx0, by0, bx1, by1) in enumerate(boxes):
        x = pad + (block_w - (bx1 - bx0)) // 2 - bx0
        y = pad + twist_pad + k * advance - ink_top
        positions.append((x, y))
    return BlockGeometry(
        canvas_w=block_w + 2 * pad,
        canvas_h=block_h + 2 * pad + 2 * twist_pad,
        draw_positions=tuple(positions),
        pad=pad,
        twist_pad=twist_pad,
    )


def rotated_canvas_size(w: int, h: int, angle_deg: float) -> tuple[int, int]:
    """Output size of a rotated patch, replicating PIL's expand arithmetic:
    corners go through the center-relative rotation before ceil/floor, and
    exact multiples of 90 degrees short-circuit to transposes."""
    angle = angle_deg % 360.0
    if angle == 0.0 or angle == 180.0:
        return w, h
    if angle == 90.0 or angle == 270.0:
        return h, w
    a = -math.radians(angle)
    cos_a = round(math.cos(a), 15)
    sin_a = round(math.sin(a), 15)
    cx, cy = w / 2.0, h / 2.0
    tx = cos_a * -cx + sin_a * -cy + cx
    ty = -sin_a * -cx + cos_a * -cy + cy
    xx, yy = [], []
    for x, y in ((0, 0), (w, 0), (w, h), (0, h)):
        xx.append(cos_a * x + sin_a * y + tx)
        yy.append(-sin_a * x + cos_a * y + ty)
    return (
        int(math.ceil(max(xx)) - math.floor(min(xx))),
        int(math.ceil(max(yy)) - math.floor(min(yy))),
    )


def rotate_points(points: np.ndarray, angle_deg: float, in_size: tuple[int, int]) -> np.ndarray:
    """Forward map of patch coordinates under PIL's rotate(angle, expand)."""
    w, h = in_size
    nw, nh = rotated_canvas_size(w, h, angle_deg)
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    dx = points[:, 0] - w / 2.0
    dy = points[:, 1] - h / 2.0
    return np.column_stack([c * dx + s * dy + nw / 2.0, -s * dx + c * dy + nh / 2.0])


@dataclass(frozen=True)
class GlyphPatch:
    """A rendered text patch with its placement on the image canvas."""

    pixels: np.ndarray                  # (h, w) uint8 coverage
    origin: tuple[int, int]             # top-left of the patch in image coords
    quad: tuple[float, ...]             # effective (rotated) bounding quad, image coords
    ring: np.ndarray | None = None      # border-outline coverage, subset of pixels

    def bbox(self) -> tuple[int, int, int, int]:
        x0, y0 = self.origin
        h, w = self.pixels.shape
        return (x0, y0, x0 + w, y0 + h)


def effective_quad(text: str, style: TextStyle, quad: Sequence[float], font_path: str | None = None) -> tuple[float, ...]:
    """The rotated tight bounding quad the rasterizer will report, computed
    from font metrics alone (no pixels touched). `quad` is the placement
    rectangle; the block is centered inside it."""
    geom = block_geometry(text, style, font_path)
    w, h = geom.canvas_w, geom.canvas_h
    nw, nh = rotated_canvas_size(w, h, style.rotation_deg)
    xs = quad[0::2]
    ys = quad[1::2]
    qx0, qy0, qx1, qy1 = min(xs), min(ys), max(xs), max(ys)
    if nw > qx1 - qx0 + 1e-6 or nh > qy1 - qy0 + 1e-6:
        raise ValueError("text does not fit")
    ox = int(round((qx0 + qx1) / 2.0 - nw / 2.0))
    oy = int(round((qy0 + qy1) / 2.0 - nh / 2.0))
    corners = np.array([(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)])
    rot = rotate_points(corners, style.rotation_deg, (w, h))
    rot[:, 0] += ox
    rot[:, 1] += oy
    return tuple(float(v) for v in rot.reshape(-1))


def _apply_twist(canvas: np.ndarray, amp: float, wavelength: float) -> np.ndarray:
    if amp == 0.0:
        return canvas
    h, w = canvas.shape
    out = np.zeros_like(canvas)
    cols = np.arange(w)
    shifts = np.round(amp * np.sin(2.0 * math.pi * cols / wavelength)).astype(int)
    for s in np.unique(shifts):
        sel = shifts == s
        if s >= 0:
            out[s:, sel] = canvas[: h - s, sel]
        else:
            out[:h + s, sel] = canvas[-s:, sel]
    return out


def rasterize_glyph(
    text: str,
    style: TextStyle,
    quad: Sequence[float],
    font_path: str | None = None,
) -> GlyphPatch:
    """Render the styled text centered in the placement quad.

    Returns the anti-aliased coverage mask (border ring included when the
    style asks for one) and the effective rotated bounding quad; all ink is
    guaranteed to lie inside that quad within 1 px of anti-aliasing.
    """
    missing = uncovered_codepoints(text, font_path)
    if missing:
        raise ValueError(f"uncovered codepoint: {missing}")
    geom = block_geometry(text, style, font_path)
    quad_out = effective_quad(text, style, quad, font_path)  # also checks fit

    font = load_font(font_path, style.font_px)
    img = Image.new("L", (geom.canvas_w, geom.canvas_h), 0)
    draw = ImageDraw.Draw(img)
    for line, pos in zip(text.split("\n"), geom.draw_positions):
        draw.text(pos, line, font=font, fill=255)
    core = np.asarray(img, dtype=np.uint8)

    if style.bold:
        core = ndimage.grey_dilation(core, size=(3, 3))
    ring = None
    if style.border:
        solid = core > 0
        ring_mask = ndimage.binary_dilation(solid, np.ones((3, 3), bool)) & ~solid
        ring = np.where(ring_mask, 255, 0).astype(np.uint8)
        core = np.maximum(core, ring)

    core = _apply_twist(core, style.twist_amp, 4.0 * style.font_px)
    if ring is not None:
        ring = _apply_twist(ring, style.twist_amp, 4.0 * style.font_px)

    if style.rotation_deg != 0.0:
        pil = Image.fromarray(core, "L").rotate(style.rotation_deg, expand=True, resample=Image.BILINEAR)
        core = np.asarray(pil, dtype=np.uint8)
        if ring is not None:
            ring = np.asarray(
                Image.fromarray(ring, "L").rotate(style.rotation_deg, expand=True, resample=Image.BILINEAR),
                dtype=np.uint8,
            )
    nw, nh = rotated_canvas_size(geom.canvas_w, geom.canvas_h, style.rotation_deg)
    if core.shape != (nh, nw):  # PIL and the analytic size must agree
        raise AssertionError(f"rotated size mismatch: {core.shape} vs {(nh, nw)}")

    xs = quad[0::2]
    ys = quad[1::2]
    ox = int(round((min(xs) + max(xs)) / 2.0 - nw / 2.0))
    oy = int(round((min(ys) + max(ys)) / 2.0 - nh / 2.0))
    return GlyphPatch(pixels=core, origin=(ox, oy), quad=quad_out, ring=ring)


def compose_glyph_image(patches: Sequence[GlyphPatch], dims: tuple[int, int]) -> np.ndarray:
    """Max-composite patches onto a zero canvas of (W, H) dims.

    Regions must be disjoint; any overlapping ink raises a collision error.
    """
    w, h = dims
    canvas = np.zeros((h, w), dtype=np.uint8)
    for patch in patches:
        x0, y0, x1, y1 = patch.bbox()
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            raise ValueError(f"patch bbox {patch.bbox()} outside {w}x{h} canvas")
        window = canvas[y0:y1, x0:x1]
        if ((window > 0) & (patch.pixels > 0)).any():
            raise ValueError("glyph collision")
        np.maximum(window, patch.pixels, out=window)
    return canvas


# --- color choice -------------------------------------------------------------


def choose_text_color(image: np.ndarray, region_mask: np.ndarray) -> tuple[int, int, int]:
    """A text color keeping the region's hue family but pushed light or dark
    until WCAG contrast against the region's mean color reaches 4.5:1,
    whichever side gets there first."""
    mask = np.asarray(region_mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty region mask")
    mean = image[mask].reshape(-1, image.shape[-1]).mean(axis=0)
    base = tuple(int(round(v)) for v in mean[:3])
    hue, light, sat = colorsys.rgb_to_hls(base[0] / 255.0, base[1] / 255.0, base[2] / 255.0)

    def candidate(lightness: float) -> tuple[int, int, int]:
        r, g, b = colorsys.hls_to_rgb(hue, min(1.0, max(0.0, lightness)), sat)
        return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))

    step = 0.02
    for k in range(1, int(1.0 / step) + 2):
        up = candidate(light + k * step)
        down = candidate(light - k * step)
        c_up = contrast_ratio(up, base)
        c_down = contrast_ratio(down, base)
        if c_up >= 4.5 and c_up >= c_down:
            return up
        if c_down >= 4.5:
            return down
    raise AssertionError("no color reached 4.5:1 contrast")  # unreachable: white or black always does


def contrasting_outline_color(text_color: tuple[int, int, int]) -> tuple[int, int, int]:
    black = (0, 0, 0)
    white = (255, 255, 255)
    return black if contrast_ratio(text_color, black) >= contrast_ratio(text_color, white) else white


# --- layout sampling ----------------------------------------------------------


@dataclass(frozen=True)
class LayoutConfig:
    area_target_frac: float = 0.055   # summed-quad-area target, above the 5% rule
    extent_frac: float = 0.022        # per-region AABB extent target, above the 2% rule
    rotation_range_deg: float = 45.0
    full_rotation_prob: float = 0.1
    twist_prob: float = 0.5
    bold_prob: float = 0.3
    border_prob: float = 0.3
    font_px_cap: int = 256
    shrink_max: float = 0.35          # how far below the max-fit font to sample


@dataclass(frozen=True)
class RegionDraw:
    candidate: CandidateRegion
    words: tuple[str, ...]
    lines: int
    style: TextStyle
    placement: tuple[float, float, float, float]  # sub-rect of the candidate

    @property
    def text(self) -> str:
        return "\n".join(self.words)

    def placement_quad(self) -> tuple[float, ...]:
        x0, y0, x1, y1 = self.placement
        return (x0, y0, x1, y0, x1, y1, x0, y1)


@dataclass(frozen=True)
class LayoutDraw:
    region_count: int
    regions: tuple[RegionDraw, ...]


class LayoutError(ValueError):
    pass


def _style_draw(rng: np.random.Generator, config: LayoutConfig):
    if rng.uniform() < config.full_rotation_prob:
        rotation = float(rng.uniform(-180.0, 180.0))
    else:
        rotation = float(rng.uniform(-config.rotation_range_deg, config.rotation_range_deg))
    twist_frac = float(rng.uniform(0.05, 0.25)) if rng.uniform() < config.twist_prob else 0.0
    bold = bool(rng.uniform() < config.bold_prob)
    border = bool(rng.uniform() < config.border_prob)
    return rotation, twist_frac, bold, border


def _geometry_at(words, font_px, rotation, twist_frac, bold, border, font_path):
    style = TextStyle(
        font_px=font_px,
        rotation_deg=rotation,
        twist_amp=twist_frac * font_px,
        bold=bold,
        border=border,
    )
    geom = block_geometry("\n".join(words), style, font_path)
    nw, nh = rotated_canvas_size(geom.canvas_w, geom.canvas_h, rotation)
    area = float(geom.canvas_w * geom.canvas_h)
    return style, (nw, nh), area


def _max_fitting_font(words, rotation, twist_frac, bold, border, avail, font_path, cap):
    """Largest font whose rotated block fits in avail = (w, h), or None."""

    def fits(px: int) -> bool:
        try:
            _, (nw, nh), _ = _geometry_at(words, px, rotation, twist_frac, bold, border, font_path)
        except ValueError:
            return False
        return nw <= avail[0] and nh <= avail[1]

    if not fits(FONT_PX_MIN):
        return None
    lo = FONT_PX_MIN  # invariant: fits(lo)
    while lo < cap and fits(min(cap, lo * 2)):
        lo = min(cap, lo * 2)
    hi = min(cap, lo * 2)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def _min_satisfying_font(words, rotation, twist_frac, bold, border, f_max, needs, font_path):
    """Smallest font in [FONT_PX_MIN, f_max] meeting the area and extent
    minima; metric hinting is not perfectly monotone, so the bisection result
    is nudged upward until it verifies."""
    area_min, ext_x, ext_y = needs

    def ok(px: int) -> bool:
        try:
            _, (nw, nh), area = _geometry_at(words, px, rotation, twist_frac, bold, border, font_path)
        except ValueError:
            return False
        return area >= area_min and nw >= ext_x and nh >= ext_y

    if not ok(f_max):
        return None
    lo, hi = FONT_PX_MIN, f_max
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    for px in range(lo, f_max + 1):
        if ok(px):
            return px
    return None


def sample_layout(
    candidates: Sequence[CandidateRegion],
    lexicon: Sequence[str],
    rng_seed,
    image_dims: tuple[int, int],
    font_path: str | None = None,
    config: LayoutConfig = LayoutConfig(),
) -> LayoutDraw:
    """Draw a placement-rule-conformant layout over the candidate regions.

    Region count is uniform over [1, min(8, #candidates)]; regions are taken
    without replacement; per-region line counts are uniform over the values
    that fit their region while leaving the layout able to satisfy the
    minimum-extent and summed-area placement rules.
    """
    if not candidates:
        raise LayoutError("no candidates")
    if not lexicon:
        raise ValueError("empty lexicon")
    rng = np.random.default_rng(rng_seed)
    w_img, h_img = image_dims
    n_max = min(REGION_COUNT_MAX, len(candidates))
    region_count = int(rng.integers(1, n_max + 1))
    order = [int(i) for i in rng.permutation(len(candidates))]
    ext_x = config.extent_frac * w_img
    ext_y = config.extent_frac * h_img

    for count in range(region_count, 0, -1):
        area_each = config.area_target_frac * w_img * h_img / count
        draws: list[RegionDraw] = []
        for idx in order:
            if len(draws) == count:
                break
            cand = candidates[idx]
            x0, y0, x1, y1 = cand.rect()
            avail = (x1 - x0 - 2.0, y1 - y0 - 2.0)
            if avail[0] < 4 or avail[1] < 4:
                continue
            rotation, twist_frac, bold, border = _style_draw(rng, config)
            words8 = tuple(str(lexicon[int(i)]) for i in rng.integers(0, len(lexicon), LINE_COUNT_MAX))
            feasible: list[tuple[int, int, int]] = []
            for lines in range(1, LINE_COUNT_MAX + 1):
                words = words8[:lines]
                f_max = _max_fitting_font(
                    words, rotation, twist_frac, bold, border, avail, font_path, config.font_px_cap
                )
                if f_max is None:
                    continue
                f_lo = _min_satisfying_font(
                    words, rotation, twist_frac, bold, border, f_max, (area_each, ext_x, ext_y), font_path
                )
                if f_lo is not None:
                    feasible.append((lines, f_lo, f_max))
            if not feasible:
                continue
            lines, f_lo, f_max = feasible[int(rng.integers(0, len(feasible)))]
            font_px = int(round(f_max - rng.uniform(0.0, config.shrink_max) * (f_max - f_lo)))
            font_px = min(max(font_px, f_lo), f_max)
            words = words8[:lines]
            style, (nw, nh), _ = _geometry_at(words, font_px, rotation, twist_frac, bold, border, font_path)
            slack_x = int(avail[0] - nw)
            slack_y = int(avail[1] - nh)
            px0 = x0 + 1 + int(rng.integers(0, slack_x + 1))
            py0 = y0 + 1 + int(rng.integers(0, slack_y + 1))
            draws.append(
                RegionDraw(
                    candidate=cand,
                    words=words,
                    lines=lines,
                    style=style,
                    placement=(float(px0), float(py0), float(px0 + nw), float(py0 + nh)),
                )
            )
        if len(draws) == count:
            return LayoutDraw(region_count=count, regions=tuple(draws))
    raise LayoutError("no feasible layout")
