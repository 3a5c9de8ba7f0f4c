"""Desk-scale workbench for layout-controlled scene-text synthesis.

Pieces: a line-oriented dataset manifest with placement-rule validation,
texture/depth region proposal, styled glyph layout and rasterization,
gradient-domain (Poisson) compositing, attention-fusion math with verified
analytic gradients, and OCR/detection evaluation metrics.
"""

from .manifest import (
    GlyphImage,
    ManifestError,
    ObjectBox,
    RuleReport,
    Sample,
    TextRegion,
    parse_sample,
    serialize_sample,
    validate_filtering_rules,
)
from .regions import CandidateRegion, DepthMap, RegionConfig, fit_depth_plane, propose_text_regions, segment_texture
from .textgen import (
    GlyphPatch,
    LayoutConfig,
    LayoutDraw,
    TextStyle,
    choose_text_color,
    compose_glyph_image,
    rasterize_glyph,
    sample_layout,
)
from .blend import GuidanceField, LinearSystem, NoConvergence, build_system, seamless_clone, solve_poisson
from .metrics import Detection, Transcription, average_precision, iou, ned, ocr_word_accuracy

__version__ = "0.1.0"
