"""Procedural fixture corpus: ten flat-panel scenes with planar depth,
bracketed-entity captions, and box annotations, generated deterministically
so tests and demos never need external downloads."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .images import save_depth_pfm, save_depth_png, save_image

LEXICON_WORDS = [
    "OPEN", "CLOSED", "SALE", "EXIT", "ENTRY", "MENU", "FRESH", "LOCAL",
    "market", "coffee", "hotel", "beach", "north", "south", "plaza", "metro",
    "books", "bakery", "garage", "tickets", "museum", "harbor", "station", "garden",
    "42", "1908", "24h", "No7", "Route66", "B12", "late", "daily",
    "corner", "old", "town", "river", "bridge", "summit", "valley", "pier",
]

_PANEL_HUES = ["red", "green", "blue", "amber", "violet", "teal", "gray", "orange", "indigo"]
_CATEGORIES = ["scene", "other", "vehicles"]


def _grid_edges(size: int, cells: int, cell_px: int = 16) -> list[int]:
    """Cell-aligned partition so segmentation cells never straddle a seam."""
    step = (size // cells) // cell_px * cell_px
    return [i * step for i in range(cells)] + [size]


def build_fixture_corpus(root, n_images: int = 10, size: int = 512, seed: int = 20240901) -> Path:
    """Write images/, depths/, Sentences/, Annotations/, and lexicon.txt.

    Each scene is a 3x3 grid of smooth colored panels (every panel is a
    viable text region) over a gently sloped planar depth field; two of the
    depth maps use the float-map format, the rest 16-bit rasters.
    """
    root = Path(root)
    for sub in ("images", "depths", "Sentences", "Annotations"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    edges = _grid_edges(size, 3)

    for i in range(n_images):
        name = f"scene_{i:03d}"
        img = np.zeros((size, size, 3), dtype=np.uint8)
        hues = rng.permutation(len(_PANEL_HUES))
        base_colors = rng.integers(40, 216, size=(9, 3))
        # keep neighboring panels far apart in color so they stay separate segments
        k = 0
        cells = []
        for r in range(3):
            for c in range(3):
                y0, y1 = edges[r], edges[r + 1]
                x0, x1 = edges[c], edges[c + 1]
                color = base_colors[k]
                ramp = np.linspace(-6, 6, x1 - x0)[None, :, None]
                panel = np.clip(color[None, None, :] + ramp, 0, 255).astype(np.uint8)
                img[y0:y1, x0:x1] = panel
                cells.append((x0, y0, x1, y1, _PANEL_HUES[hues[k % len(hues)]]))
                k += 1
        save_image(img, root / "images" / f"{name}.png")

        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        a = float(rng.uniform(-8e-4, 8e-4))
        b = float(rng.uniform(-8e-4, 8e-4))
        c0 = float(rng.uniform(2.5, 4.5))
        depth = a * xx + b * yy + c0
        depth += rng.normal(0.0, 0.002, depth.shape)
        depth = np.clip(depth, 0.5, 6.0)
        if i >= n_images - 2:
            save_depth_pfm(depth, root / "depths" / f"{name}.pfm")
        else:
            save_depth_png(depth, root / "depths" / f"{name}.png", depth_scale=1e-4)

        picks = rng.choice(9, size=2, replace=False)
        spans = []
        boxes = []
        for j, cell_idx in enumerate(picks):
            x0, y0, x1, y1, hue = cells[int(cell_idx)]
            inset = 8
            box = (x0 + inset, y0 + inset, x1 - inset, y1 - inset)
            entity_id = i * 10 + j + 1
            category = _CATEGORIES[int(rng.integers(0, len(_CATEGORIES)))]
            spans.append(f"[/EN#{entity_id}/{category} a {hue} panel]")
            boxes.append((entity_id, box))
        sentence = f"{spans[0]} mounted beside {spans[1]} on a flat wall"
        (root / "Sentences" / f"{name}.txt").write_text(sentence + "\n", encoding="utf-8")

        objs = []
        for entity_id, (bx0, by0, bx1, by1) in boxes:
            objs.append(
                "  <object>\n"
                f"    <name>EN#{entity_id}</name>\n"
                "    <bndbox>\n"
                f"      <xmin>{bx0}</xmin><ymin>{by0}</ymin>"
                f"<xmax>{bx1}</xmax><ymax>{by1}</ymax>\n"
                "    </bndbox>\n"
                "  </object>\n"
            )
        xml = (
            "<annotation>\n"
            f"  <filename>{name}.png</filename>\n"
            f"  <size><width>{size}</width><height>{size}</height><depth>3</depth></size>\n"
            + "".join(objs)
            + "</annotation>\n"
        )
        (root / "Annotations" / f"{name}.xml").write_text(xml, encoding="utf-8")

    (root / "lexicon.txt").write_text("\n".join(LEXICON_WORDS) + "\n", encoding="utf-8")
    return root
