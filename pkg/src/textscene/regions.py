"""Candidate text-placement regions: texture-based segmentation, per-segment
depth-plane fits, and the largest inscribed rectangle of each acceptable
segment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .images import luminance_u8

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray  # (H, W), arbitrary positive units, larger = farther

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.isfinite(v).all() or (v <= 0).any():
            raise ValueError("depth values must be finite and positive")


@dataclass(frozen=True)
class PlaneFit:
    """Least-squares plane z = a*x + b*y + c over masked depth values."""

    a: float
    b: float
    c: float

    def unit_normal(self) -> np.ndarray:
        n = np.array([self.a, self.b, -1.0])
        return n / np.linalg.norm(n)

    def offset(self) -> float:
        """d in n.(x, y, z) + d = 0 with n the unit normal."""
        return self.c / float(np.linalg.norm([self.a, self.b, -1.0]))

    def evaluate(self, x, y):
        return self.a * x + self.b * y + self.c


@dataclass(frozen=True)
class CandidateRegion:
    mask: np.ndarray            # (H, W) bool, 4-connected
    quad: tuple[float, ...]     # inscribed axis-aligned rect, clockwise from top-left
    plane: PlaneFit
    texture_score: float        # mean luminance-gradient magnitude, lower = smoother
    planarity_rmse: float

    def rect(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of the inscribed rectangle, exclusive right/bottom."""
        xs = self.quad[0::2]
        ys = self.quad[1::2]
        return int(min(xs)), int(min(ys)), int(max(xs)), int(max(ys))

    def area(self) -> float:
        x0, y0, x1, y1 = self.rect()
        return float((x1 - x0) * (y1 - y0))


@dataclass(frozen=True)
class RegionConfig:
    cell_px: int = 16
    color_tol: float = 12.0        # 8-bit mean-color distance for cell merging
    texture_max: float = 8.0       # 8-bit luminance gradient units
    planarity_frac: float = 0.02   # rmse budget as fraction of median segment depth
    min_extent_frac: float = 0.02  # inscribed rect extent vs each image dim
    border_margin_frac: float = 0.02


@dataclass(frozen=True)
class Segmentation:
    labels: np.ndarray          # (H, W) int, a full partition of the pixels
    texture_scores: np.ndarray  # (num_segments,) mean gradient magnitude

    @property
    def count(self) -> int:
        return self.texture_scores.size


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude of the luminance channel."""
    lum = luminance_u8(image)
    gy, gx = np.gradient(lum)
    return np.hypot(gx, gy)


def segment_texture(image: np.ndarray, config: RegionConfig = RegionConfig()) -> Segmentation:
    """Partition the image into smooth-ish segments on a coarse cell grid.

    Cells (config.cell_px square, last row/col absorbing the remainder) are
    seeded in order of increasing gradient and greedily merged with
    4-neighbor cells whose mean color stays within color_tol of the running
    segment mean. Scores are recomputed per segment over actual pixels.
    """
    h, w = image.shape[:2]
    cell = config.cell_px
    if h < 2 * cell or w < 2 * cell:
        raise ValueError("image too small")
    grad = gradient_magnitude(image)

    gh, gw = h // cell, w // cell
    edges_y = [i * cell for i in range(gh)] + [h]
    edges_x = [j * cell for j in range(gw)] + [w]

    mean_color = np.zeros((gh, gw, 3))
    mean_grad = np.zeros((gh, gw))
    img_f = np.asarray(image, dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            sl = (slice(edges_y[i], edges_y[i + 1]), slice(edges_x[j], edges_x[j + 1]))
            mean_color[i, j] = img_f[sl].mean(axis=(0, 1))
            mean_grad[i, j] = grad[sl].mean()

    cell_label = np.full((gh, gw), -1, dtype=np.int64)
    order = sorted(((mean_grad[i, j], i, j) for i in range(gh) for j in range(gw)))
    next_label = 0
    for _, si, sj in order:
        if cell_label[si, sj] >= 0:
            continue
        label = next_label
        next_label += 1
        cell_label[si, sj] = label
        seg_sum = mean_color[si, sj].copy()
        seg_n = 1
        queue = [(si, sj)]
        while queue:
            ci, cj = queue.pop(0)
            for ni, nj in ((ci - 1, cj), (ci + 1, cj), (ci, cj - 1), (ci, cj + 1)):
                if not (0 <= ni < gh and 0 <= nj < gw) or cell_label[ni, nj] >= 0:
                    continue
                if np.linalg.norm(mean_color[ni, nj] - seg_sum / seg_n) < config.color_tol:
                    cell_label[ni, nj] = label
                    seg_sum += mean_color[ni, nj]
                    seg_n += 1
                    queue.append((ni, nj))

    labels = np.zeros((h, w), dtype=np.int64)
    for i in range(gh):
        for j in range(gw):
            labels[edges_y[i] : edges_y[i + 1], edges_x[j] : edges_x[j + 1]] = cell_label[i, j]
    scores = ndimage.mean(grad, labels=labels, index=np.arange(next_label))
    return Segmentation(labels=labels, texture_scores=np.asarray(scores))


def fit_depth_plane(depth: DepthMap, mask: np.ndarray) -> tuple[PlaneFit, float]:
    """Ordinary least-squares plane over the masked depth pixels."""
    mask = np.asarray(mask, dtype=bool)
    ii, jj = np.nonzero(mask)
    if ii.size < 16:
        raise ValueError(f"mask has {ii.size} pixels, need at least 16")
    design = np.column_stack([jj.astype(np.float64), ii.astype(np.float64), np.ones(ii.size)])
    z = depth.values[ii, jj]
    coeffs, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
    if rank < 3:
        raise ValueError("degenerate plane")
    residuals = z - design @ coeffs
    rmse = float(np.sqrt(np.mean(residuals**2)))
    return PlaneFit(a=float(coeffs[0]), b=float(coeffs[1]), c=float(coeffs[2])), rmse


def largest_inscribed_rect(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Largest-area axis-aligned rectangle of True cells, as (x0, y0, x1, y1)
    with exclusive right/bottom edges. Standard histogram-stack sweep,
    restricted to the mask's bounding box."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return (0, 0, 0, 0)
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    oy, ox = int(rows[0]), int(cols[0])
    sub = mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    h, w = sub.shape
    heights = [0] * w
    best = (0, (0, 0, 0, 0))
    for i in range(h):
        row = sub[i]
        heights = [heights[j] + 1 if row[j] else 0 for j in range(w)]
        stack: list[int] = []
        j = 0
        while j <= w:
            cur = heights[j] if j < w else 0
            if not stack or cur >= heights[stack[-1]]:
                stack.append(j)
                j += 1
            else:
                top = stack.pop()
                left = stack[-1] + 1 if stack else 0
                area = heights[top] * (j - left)
                if area > best[0]:
                    best = (area, (left, i + 1 - heights[top], j, i + 1))
    x0, y0, x1, y1 = best[1]
    return (x0 + ox, y0 + oy, x1 + ox, y1 + oy)


def rect_to_quad(rect: tuple[int, int, int, int]) -> tuple[float, ...]:
    x0, y0, x1, y1 = rect
    return (float(x0), float(y0), float(x1), float(y0), float(x1), float(y1), float(x0), float(y1))


def propose_text_regions(
    image: np.ndarray,
    depth: DepthMap,
    config: RegionConfig = RegionConfig(),
) -> list[CandidateRegion]:
    """Smooth, planar, large-enough regions for text placement, sorted by
    inscribed-rectangle area descending. Returned regions are pairwise
    disjoint (they come from a segmentation partition) and keep clear of the
    image border by the configured margin."""
    h, w = image.shape[:2]
    if depth.values.shape != (h, w):
        raise ValueError("depth dims do not match image")
    seg = segment_texture(image, config)

    margin_x = max(1, round(config.border_margin_frac * w))
    margin_y = max(1, round(config.border_margin_frac * h))
    inset = np.zeros((h, w), dtype=bool)
    inset[margin_y : h - margin_y, margin_x : w - margin_x] = True

    out: list[CandidateRegion] = []
    for label in range(seg.count):
        if seg.texture_scores[label] > config.texture_max:
            continue
        mask = (seg.labels == label) & inset
        if mask.sum() < 16:
            continue
        components, n_comp = ndimage.label(mask, structure=FOUR_CONNECTED)
        if n_comp > 1:
            sizes = ndimage.sum(mask, components, index=np.arange(1, n_comp + 1))
            mask = components == (int(np.argmax(sizes)) + 1)
            if mask.sum() < 16:
                continue
        try:
            plane, rmse = fit_depth_plane(depth, mask)
        except ValueError:
            continue
        if rmse > config.planarity_frac * float(np.median(depth.values[mask])):
            continue
        x0, y0, x1, y1 = largest_inscribed_rect(mask)
        if (x1 - x0) < config.min_extent_frac * w or (y1 - y0) < config.min_extent_frac * h:
            continue
        out.append(
            CandidateRegion(
                mask=mask,
                quad=rect_to_quad((x0, y0, x1, y1)),
                plane=plane,
                texture_score=float(seg.texture_scores[label]),
                planarity_rmse=rmse,
            )
        )
    out.sort(key=lambda r: (-r.area(), r.rect()[1], r.rect()[0]))
    return out
