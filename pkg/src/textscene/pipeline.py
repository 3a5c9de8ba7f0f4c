"""End-to-end dataset synthesis and evaluation: per-sample work units keyed
by (dataset_seed, index) for order-independent parallelism, a resumable
journal, OCR-based filtering, and manifest-vs-manifest scoring."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import blend, corpus, images, metrics, textgen
from .manifest import (
    ManifestError,
    ObjectBox,
    Sample,
    TextRegion,
    parse_sample,
    serialize_sample,
    validate_filtering_rules,
)
from .regions import DepthMap, RegionConfig, propose_text_regions
from .textgen import LayoutConfig, LayoutError

log = logging.getLogger("textscene")


@dataclass(frozen=True)
class PipelineConfig:
    images_dir: str
    depths_dir: str
    captions: str
    entities: str
    lexicon: str
    out_dir: str
    font: str | None = None
    dataset_seed: int = 0
    count: int = 10
    workers: int = 1
    blend_mode: str = "mixed"
    solver_tol: float = 1e-6
    ocr_filter_threshold: float = 0.8
    region: RegionConfig = field(default_factory=RegionConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        for name in ("images_dir", "depths_dir", "captions", "entities", "lexicon"):
            if not Path(getattr(self, name)).exists():
                raise FileNotFoundError(f"{name}: {getattr(self, name)} does not exist")

    def fingerprint(self) -> str:
        """Hash of everything that shapes output bytes; worker count and the
        output location deliberately excluded."""
        payload = {
            "images_dir": str(Path(self.images_dir).resolve()),
            "depths_dir": str(Path(self.depths_dir).resolve()),
            "captions": str(Path(self.captions).resolve()),
            "entities": str(Path(self.entities).resolve()),
            "lexicon": str(Path(self.lexicon).resolve()),
            "font": self.font,
            "dataset_seed": self.dataset_seed,
            "count": self.count,
            "blend_mode": self.blend_mode,
            "solver_tol": self.solver_tol,
            "region": vars(self.region),
            "layout": vars(self.layout),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


_CONFIG_FIELD_TYPES = {
    "images_dir": str, "depths_dir": str, "captions": str, "entities": str,
    "lexicon": str, "out_dir": str, "font": str, "dataset_seed": int,
    "count": int, "workers": int, "blend_mode": str, "solver_tol": float,
    "ocr_filter_threshold": float,
}
_REGION_KEYS = {f: t for f, t in (
    ("cell_px", int), ("color_tol", float), ("texture_max", float),
    ("planarity_frac", float), ("min_extent_frac", float), ("border_margin_frac", float),
)}
_LAYOUT_KEYS = {f: t for f, t in (
    ("area_target_frac", float), ("extent_frac", float), ("rotation_range_deg", float),
    ("full_rotation_prob", float), ("twist_prob", float), ("bold_prob", float),
    ("border_prob", float), ("font_px_cap", int), ("shrink_max", float),
)}


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read a `key = value` config file (hash comments allowed), apply
    overrides, and build the pipeline configuration."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError("bad-config", f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    base = Path(path).resolve().parent

    main: dict = {}
    region: dict = {}
    layout: dict = {}
    for key, value in raw.items():
        if key in _CONFIG_FIELD_TYPES:
            typ = _CONFIG_FIELD_TYPES[key]
            if key in ("images_dir", "depths_dir", "captions", "entities", "lexicon", "out_dir", "font"):
                main[key] = str((base / value).resolve()) if not os.path.isabs(value) else value
            else:
                main[key] = typ(value)
        elif key in _REGION_KEYS:
            region[key] = _REGION_KEYS[key](value)
        elif key in _LAYOUT_KEYS:
            layout[key] = _LAYOUT_KEYS[key](value)
        else:
            raise ManifestError("bad-config", f"unknown config key {key!r}")
    return PipelineConfig(
        region=RegionConfig(**region),
        layout=LayoutConfig(**layout),
        **main,
    )


# --- per-sample synthesis -----------------------------------------------------


@dataclass
class SampleResult:
    index: int
    status: str                      # "ok" or "skip"
    reason: str = ""
    record: bytes = b""
    image_png: bytes = b""
    glyph_png: bytes = b""
    depth_src: str = ""              # corpus depth file to copy alongside


class _WorkerState:
    """Per-process caches: corpus entries, decoded images, and proposals."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.entries = corpus.load_corpus(
            config.images_dir, config.depths_dir, config.captions, config.entities
        )
        self.lexicon = corpus.load_lexicon(config.lexicon)
        self._cache: dict[str, tuple] = {}

    def scene(self, entry: corpus.CorpusEntry):
        key = str(entry.image_path)
        if key not in self._cache:
            image = images.load_image(entry.image_path)
            depth = DepthMap(images.load_depth(entry.depth_path))
            cands = propose_text_regions(image, depth, self.config.region)
            self._cache[key] = (image, depth, cands)
        return self._cache[key]


_STATE: _WorkerState | None = None


def _init_worker(config: PipelineConfig) -> None:
    global _STATE
    _STATE = _WorkerState(config)


def _png_bytes(array: np.ndarray, mode: str) -> bytes:
    buf = BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def synthesize_sample(state: _WorkerState, index: int, render: bool = True) -> SampleResult:
    """One work unit: pick a corpus scene, draw a layout, rasterize, blend,
    validate, and encode. Failures downgrade to a counted skip."""
    config = state.config
    rng = np.random.default_rng(np.random.SeedSequence((config.dataset_seed, index)))
    entry = state.entries[int(rng.integers(0, len(state.entries)))]
    image, depth, cands = state.scene(entry)
    h, w = image.shape[:2]
    if not cands:
        return SampleResult(index, "skip", reason="no candidates")
    try:
        draw = textgen.sample_layout(
            cands, state.lexicon, rng, (w, h), font_path=config.font, config=config.layout
        )
    except LayoutError as exc:
        return SampleResult(index, "skip", reason=str(exc))

    regions: list[TextRegion] = []
    patches: list[textgen.GlyphPatch] = []
    colors: list[tuple[int, int, int]] = []
    composite = image
    try:
        for rd in draw.regions:
            color = textgen.choose_text_color(image, rd.candidate.mask)
            colors.append(color)
            style = replace(rd.style, color=color)
            if render:
                patch = textgen.rasterize_glyph(rd.text, style, rd.placement_quad(), config.font)
                patches.append(patch)
                quad = patch.quad
            else:
                quad = textgen.effective_quad(rd.text, style, rd.placement_quad(), config.font)
            regions.append(
                TextRegion(
                    text=rd.text,
                    quad=quad,
                    font_px=style.font_px,
                    rotation_deg=style.rotation_deg,
                    lines=rd.lines,
                    bold=style.bold,
                    border=style.border,
                )
            )
        if render:
            composite = _blend_patches(image, patches, colors, config)
    except (ValueError, blend.NoConvergence) as exc:
        return SampleResult(index, "skip", reason=str(exc))

    sample = Sample(
        image_ref=f"images/sample_{index:06d}.png",
        depth_ref=f"depths/sample_{index:06d}{Path(entry.depth_path).suffix}",
        caption=entry.caption,
        text_regions=tuple(regions),
        objects=entry.objects,
    )
    report = validate_filtering_rules(sample, (w, h))
    if not report.passed:
        return SampleResult(index, "skip", reason=f"rule-invalid: {report.violations[0].detail}")
    sample.check_bounds((w, h))

    result = SampleResult(index, "ok", record=serialize_sample(sample), depth_src=str(entry.depth_path))
    if render:
        glyph = textgen.compose_glyph_image(patches, (w, h))
        result.image_png = _png_bytes(composite, "RGB")
        result.glyph_png = _png_bytes(glyph, "L")
    return result


def _blend_patches(image, patches, colors, config: PipelineConfig):
    """Paint each patch in its chosen color and gradient-blend it in."""
    out = image.copy()
    for patch, text_color in zip(patches, colors):
        x0, y0, x1, y1 = patch.bbox()
        color = np.array(text_color, dtype=np.float64)
        source = out.copy()
        window = source[y0:y1, x0:x1].astype(np.float64)
        alpha = (patch.pixels / 255.0)[..., None]
        window = (1.0 - alpha) * window + alpha * color[None, None, :]
        if patch.ring is not None:
            ring_color = np.array(textgen.contrasting_outline_color(text_color), dtype=np.float64)
            ring_alpha = (patch.ring / 255.0)[..., None]
            window = (1.0 - ring_alpha) * window + ring_alpha * ring_color[None, None, :]
        source[y0:y1, x0:x1] = np.clip(np.round(window), 0, 255).astype(np.uint8)
        mask = np.zeros(image.shape[:2], dtype=bool)
        mask[y0:y1, x0:x1] = patch.pixels > 0
        mask = ndimage.binary_dilation(mask, np.ones((3, 3), bool), iterations=2)
        mask[0, :] = mask[-1, :] = False
        mask[:, 0] = mask[:, -1] = False
        out = blend.seamless_clone(out, source, mask, mode=config.blend_mode, tol=config.solver_tol)
    return out


# --- run orchestration ---------------------------------------------------------


def _worker_task(index: int) -> SampleResult:
    assert _STATE is not None
    return synthesize_sample(_STATE, index)


def run_synth(config: PipelineConfig, fresh: bool = False) -> dict:
    """Synthesize config.count samples into config.out_dir.

    Every sample is journaled as it completes (atomic rename), so an
    interrupted run resumes where it stopped and converges to the identical
    dataset. Returns the summary dict that is also written to summary.json.
    """
    out = Path(config.out_dir)
    journal = out / "journal"
    for sub in ("images", "glyphs", "depths", "journal"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    fp_file = journal / "config.json"
    fingerprint = config.fingerprint()
    if fp_file.exists() and not fresh:
        recorded = json.loads(fp_file.read_text())["fingerprint"]
        if recorded != fingerprint:
            raise ManifestError(
                "stale-journal",
                f"{journal} was written by a different config; rerun with fresh=True",
            )
    else:
        for old in journal.glob("sample_*.json"):
            old.unlink()
        _atomic_write(fp_file, json.dumps({"fingerprint": fingerprint}).encode())

    pending = [
        i for i in range(config.count) if not (journal / f"sample_{i:06d}.json").exists()
    ]
    log.info("synthesizing %d samples (%d already journaled)", len(pending), config.count - len(pending))

    if pending:
        if config.workers > 1:
            with ProcessPoolExecutor(
                max_workers=config.workers, initializer=_init_worker, initargs=(config,)
            ) as pool:
                for result in pool.map(_worker_task, pending, chunksize=4):
                    _commit_result(out, result)
        else:
            state = _WorkerState(config)
            for index in pending:
                _commit_result(out, synthesize_sample(state, index))

    # assemble the manifest in index order from the journal
    records: list[bytes] = []
    reasons: Counter[str] = Counter()
    for i in range(config.count):
        entry = json.loads((journal / f"sample_{i:06d}.json").read_text(encoding="utf-8"))
        if entry["status"] == "ok":
            records.append(entry["record"].encode("utf-8"))
        else:
            reasons[entry["reason"]] += 1
    _atomic_write(out / "manifest.jsonl", b"".join(r + b"\n" for r in records))
    summary = {
        "requested": config.count,
        "emitted": len(records),
        "skipped": config.count - len(records),
        "skip_reasons": dict(sorted(reasons.items())),
        "manifest": "manifest.jsonl",
    }
    _atomic_write(out / "summary.json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    if not records:
        raise ManifestError("empty-dataset", f"zero samples produced: {dict(reasons)}")
    return summary


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _commit_result(out: Path, result: SampleResult) -> None:
    name = f"sample_{result.index:06d}"
    if result.status == "ok":
        _atomic_write(out / "images" / f"{name}.png", result.image_png)
        _atomic_write(out / "glyphs" / f"{name}.png", result.glyph_png)
        src = Path(result.depth_src)
        _atomic_write(out / "depths" / f"{name}{src.suffix}", src.read_bytes())
        if src.suffix == ".png":
            sidecar = src.with_suffix(".json")
            _atomic_write(out / "depths" / f"{name}.json", sidecar.read_bytes())
    payload = {"status": result.status, "reason": result.reason, "record": result.record.decode("utf-8")}
    _atomic_write(out / "journal" / f"{name}.json", json.dumps(payload).encode("utf-8"))


# --- prediction manifests and filtering ----------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    sample: Sample
    pred_texts: tuple[str, ...]
    confidences: tuple[float, ...]


def parse_prediction(record: bytes) -> PredictionRecord:
    """A prediction record mirrors a dataset record plus `pred_text` per
    region and `confidence` per object; both default to the ground-truth
    reading so a dataset manifest scores perfectly against itself."""
    sample = parse_sample(record)
    obj = json.loads(record.decode("utf-8"))
    pred_texts = tuple(
        str(r.get("pred_text", r["text"])) for r in obj.get("text_regions", [])
    )
    confidences = tuple(float(o.get("confidence", 1.0)) for o in obj.get("objects", []))
    return PredictionRecord(sample=sample, pred_texts=pred_texts, confidences=confidences)


def read_prediction_manifest(path) -> dict[str, PredictionRecord]:
    out: dict[str, PredictionRecord] = {}
    with open(path, "rb") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = parse_prediction(line)
                out[rec.sample.image_ref] = rec
    return out


def ocr_filter(dataset_path, transcription_path, threshold: float, out_path) -> dict:
    """Keep samples whose mean per-region edit similarity meets `threshold`.

    Transcriptions must cover every region of every sample; a gap is a data
    error naming the offending sample.
    """
    preds = read_prediction_manifest(transcription_path)
    kept: list[bytes] = []
    dropped = 0
    with open(dataset_path, "rb") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    for line in lines:
        sample = parse_sample(line)
        rec = preds.get(sample.image_ref)
        if rec is None or len(rec.pred_texts) != len(sample.text_regions):
            raise ManifestError("coverage-gap", f"no full transcription for {sample.image_ref}")
        if sample.text_regions:
            mean_sim = float(
                np.mean([metrics.ned(r.text, p) for r, p in zip(sample.text_regions, rec.pred_texts)])
            )
        else:
            mean_sim = 1.0
        if mean_sim >= threshold:
            kept.append(line)
        else:
            dropped += 1
    Path(out_path).write_bytes(b"".join(line + b"\n" for line in kept))
    return {"kept": len(kept), "dropped": dropped, "threshold": threshold}


# --- evaluation -----------------------------------------------------------------


def evaluate(pred_path, gt_path, selectors=("ocr", "ned", "ap"), iou_thresh: float = 0.5) -> dict:
    """Score a prediction manifest against ground truth, aligned by image id."""
    preds = read_prediction_manifest(pred_path)
    per_sample = []
    transcriptions: list[metrics.Transcription] = []
    ap_pairs: list[tuple[list[metrics.Detection], list[tuple[str, tuple]]]] = []
    with open(gt_path, "rb") as fh:
        gt_lines = [line.strip() for line in fh if line.strip()]
    for line in gt_lines:
        gt = parse_sample(line)
        rec = preds.get(gt.image_ref)
        if rec is None:
            raise ManifestError("id-mismatch", f"prediction manifest lacks {gt.image_ref}")
        row: dict = {"image": gt.image_ref}
        if len(rec.pred_texts) != len(gt.text_regions):
            raise ManifestError("id-mismatch", f"region count differs for {gt.image_ref}")
        sample_tr = [
            metrics.Transcription(truth=r.text, predicted=p)
            for r, p in zip(gt.text_regions, rec.pred_texts)
        ]
        transcriptions.extend(sample_tr)
        if "ocr" in selectors and sample_tr:
            row["ocr_accuracy"] = metrics.ocr_word_accuracy(sample_tr)
        if "ned" in selectors and sample_tr:
            row["ned"] = float(np.mean([metrics.ned(t.truth, t.predicted) for t in sample_tr]))
        if "ap" in selectors:
            dets = [
                metrics.Detection(category=o.category, bbox=o.bbox, confidence=c)
                for o, c in zip(rec.sample.objects, rec.confidences)
            ]
            gts = [(o.category, o.bbox) for o in gt.objects]
            ap_pairs.append((dets, gts))
        per_sample.append(row)

    aggregate: dict = {"samples": len(per_sample)}
    if "ocr" in selectors and transcriptions:
        aggregate["ocr_accuracy"] = metrics.ocr_word_accuracy(transcriptions)
    if "ned" in selectors and transcriptions:
        aggregate["ned"] = float(np.mean([metrics.ned(t.truth, t.predicted) for t in transcriptions]))
    if "ap" in selectors:
        aggregate["average_precision"] = dataset_average_precision(ap_pairs, iou_thresh)
    return {"aggregate": aggregate, "per_sample": per_sample}


def dataset_average_precision(pairs, iou_thresh: float = 0.5) -> float:
    """AP pooled across scenes: per-scene greedy matching, dataset-wide
    precision-recall integration, mean over categories present in GT."""
    categories = sorted({c for _, gts in pairs for c, _ in gts})
    if not categories:
        raise ValueError("undefined AP")
    total = 0.0
    for cat in categories:
        flags: list[tuple[float, bool]] = []
        num_gt = 0
        for dets, gts in pairs:
            cat_dets = [d for d in dets if d.category == cat]
            cat_boxes = [b for c, b in gts if c == cat]
            res = metrics.match_detections(cat_dets, cat_boxes, iou_thresh)
            flags.extend(res.flags)
            num_gt += res.num_gt
        flags.sort(key=lambda fb: -fb[0])
        total += metrics.ap_from_matches(metrics.MatchResult(flags=flags, num_gt=num_gt))
    return total / len(categories)
