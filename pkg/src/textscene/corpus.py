"""Source-corpus ingestion: images, depth maps, captions with bracketed
entity spans, and per-image box annotation files."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

from .manifest import ManifestError, ObjectBox

_ENTITY_SPAN = re.compile(r"\[/EN#(\d+)((?:/[A-Za-z]+)+)\s([^\]]*)\]")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class CorpusEntry:
    entry_id: str
    image_path: Path
    depth_path: Path
    caption: str
    objects: tuple[ObjectBox, ...]


def parse_entity_sentence(line: str) -> tuple[str, list[tuple[str, str]]]:
    """Split one bracketed-entity caption into plain text and entity spans.

    Returns (caption, [(entity_id, category), ...]); the category is the
    first type tag of each span.
    """
    entities: list[tuple[str, str]] = []

    def strip(match: re.Match) -> str:
        entity_id = match.group(1)
        category = match.group(2).strip("/").split("/")[0]
        entities.append((entity_id, category))
        return match.group(3)

    caption = _ENTITY_SPAN.sub(strip, line).strip()
    return " ".join(caption.split()), entities


def load_annotation_boxes(path: Path) -> dict[str, list[tuple[float, float, float, float]]]:
    """Entity-id -> bounding boxes from a per-image XML annotation file."""
    boxes: dict[str, list[tuple[float, float, float, float]]] = {}
    root = ET.parse(path).getroot()
    for obj in root.iter("object"):
        names = [n.text.strip() for n in obj.findall("name") if n.text]
        bnd = obj.find("bndbox")
        if bnd is None or not names:
            continue
        box = tuple(
            float(bnd.findtext(k, default="nan")) for k in ("xmin", "ymin", "xmax", "ymax")
        )
        for name in names:
            boxes.setdefault(name.removeprefix("EN#"), []).append(box)
    return boxes


def _caption_file_for(stem: str, captions: Path) -> str | None:
    """First caption line for `stem`: per-image file in a directory, or a
    TSV row in a single file."""
    if captions.is_dir():
        f = captions / f"{stem}.txt"
        if not f.exists():
            return None
        for line in f.read_text(encoding="utf-8").splitlines():
            if line.strip():
                return line
        return None
    for line in captions.read_text(encoding="utf-8").splitlines():
        name, _, text = line.partition("\t")
        if name.strip() == stem and text.strip():
            return text
    return None


def _depth_file_for(stem: str, depths_dir: Path) -> Path | None:
    for suffix in (".png", ".pfm"):
        p = depths_dir / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def load_corpus(images_dir, depths_dir, captions, entities) -> list[CorpusEntry]:
    """Join images with their depth maps, captions, and object boxes.

    Entries are ordered by image filename; images missing any counterpart
    are a data error since the pipeline draws from the corpus uniformly.
    """
    images_dir = Path(images_dir)
    depths_dir = Path(depths_dir)
    captions = Path(captions)
    entities = Path(entities)
    image_files = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not image_files:
        raise ManifestError("empty-corpus", f"no images under {images_dir}")
    out: list[CorpusEntry] = []
    for img in image_files:
        stem = img.stem
        depth = _depth_file_for(stem, depths_dir)
        if depth is None:
            raise ManifestError("missing-depth", f"no depth map for {stem}")
        line = _caption_file_for(stem, captions)
        if line is None:
            raise ManifestError("missing-caption", f"no caption for {stem}")
        caption, spans = parse_entity_sentence(line)
        ann = entities / f"{stem}.xml"
        boxes = load_annotation_boxes(ann) if ann.exists() else {}
        objects = []
        for entity_id, category in spans:
            for box in boxes.get(entity_id, []):
                objects.append(ObjectBox(category=category, bbox=box))
        out.append(
            CorpusEntry(
                entry_id=stem,
                image_path=img,
                depth_path=depth,
                caption=caption,
                objects=tuple(objects),
            )
        )
    return out


def load_lexicon(path) -> list[str]:
    words = [w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines()]
    words = [w for w in words if w]
    if not words:
        raise ManifestError("empty-lexicon", f"no words in {path}")
    return words
