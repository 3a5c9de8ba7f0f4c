"""Glyph layout, rasterization, color choice, and layout sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image, ImageDraw
from scipy.stats import chisquare

from textscene.images import contrast_ratio, relative_luminance
from textscene.manifest import Sample, TextRegion, validate_filtering_rules
from textscene.regions import CandidateRegion, DepthMap, PlaneFit, propose_text_regions, rect_to_quad
from textscene.textgen import (
    GlyphPatch,
    LayoutError,
    TextStyle,
    choose_text_color,
    compose_glyph_image,
    effective_quad,
    load_font,
    rasterize_glyph,
    sample_layout,
    uncovered_codepoints,
)

WIDE_QUAD = (50.0, 50.0, 450.0, 50.0, 450.0, 250.0, 50.0, 250.0)


def plain_style(px=40, **kw):
    defaults = dict(font_px=px, rotation_deg=0.0, twist_amp=0.0, bold=False, border=False)
    defaults.update(kw)
    return TextStyle(**defaults)


def fake_candidate(x0, y0, x1, y1, dims=(512, 512)):
    w, h = dims
    mask = np.zeros((h, w), dtype=bool)
    mask[y0:y1, x0:x1] = True
    return CandidateRegion(
        mask=mask,
        quad=rect_to_quad((x0, y0, x1, y1)),
        plane=PlaneFit(0.0, 0.0, 3.0),
        texture_score=0.0,
        planarity_rmse=0.0,
    )


# --- rasterization ------------------------------------------------------------------


def test_single_letter_span_matches_font_metrics():
    """Ink column span of 'I' equals the font's rendered-ink width +/- 1 px."""
    patch = rasterize_glyph("I", plain_style(), WIDE_QUAD)
    ys, xs = np.nonzero(patch.pixels)
    span = xs.max() - xs.min() + 1
    ink = load_font(None, 40).getmask("I").getbbox()
    expected = ink[2] - ink[0]
    assert abs(span - expected) <= 1


def test_rotation_90_equals_transpose():
    p0 = rasterize_glyph("OPEN", plain_style(), WIDE_QUAD)
    p90 = rasterize_glyph("OPEN", plain_style(rotation_deg=90.0), (50, 50, 450, 50, 450, 450, 50, 450))
    assert np.array_equal(p90.pixels, np.rot90(p0.pixels))


def test_bold_is_superset():
    p = rasterize_glyph("OPEN", plain_style(), WIDE_QUAD)
    b = rasterize_glyph("OPEN", plain_style(bold=True), WIDE_QUAD)
    # align by canvas center: bold canvas is 2px larger each way
    assert b.pixels.shape[0] == p.pixels.shape[0] + 2
    inner = b.pixels[1:-1, 1:-1]
    assert (inner.astype(int) >= p.pixels.astype(int)).all()
    assert inner.sum() > p.pixels.sum()


def test_border_adds_ring():
    p = rasterize_glyph("GO", plain_style(border=True), WIDE_QUAD)
    assert p.ring is not None
    assert ((p.ring > 0) & (p.pixels == 0)).sum() == 0  # ring included in coverage


def test_rasterize_deterministic():
    style = plain_style(px=32, rotation_deg=17.0, twist_amp=5.0, bold=True, border=True)
    a = rasterize_glyph("WAVE", style, WIDE_QUAD)
    b = rasterize_glyph("WAVE", style, WIDE_QUAD)
    assert np.array_equal(a.pixels, b.pixels)
    assert a.quad == b.quad and a.origin == b.origin


def test_text_does_not_fit():
    with pytest.raises(ValueError, match="text does not fit"):
        rasterize_glyph("TOOWIDE", plain_style(px=80), (0, 0, 60, 0, 60, 40, 0, 40))


def test_uncovered_codepoint_rejected():
    assert uncovered_codepoints("ก") == ["ก"]
    with pytest.raises(ValueError, match="uncovered codepoint"):
        rasterize_glyph("ก", plain_style(), WIDE_QUAD)


def test_twist_amplitude_capped():
    with pytest.raises(ValueError, match="twist"):
        TextStyle(font_px=20, rotation_deg=0.0, twist_amp=6.0, bold=False, border=False)


def test_multiline_stacks_lines():
    one = rasterize_glyph("AB", plain_style(px=24), WIDE_QUAD)
    two = rasterize_glyph("AB\nAB", plain_style(px=24), WIDE_QUAD)
    assert two.pixels.shape[0] > one.pixels.shape[0] * 1.5


@pytest.mark.parametrize("angle", [0.0, 33.0, -70.0, 90.0, 145.0, 180.0])
def test_ink_stays_inside_quad(angle):
    style = plain_style(px=30, rotation_deg=angle, twist_amp=7.0, bold=True, border=True)
    quad = (20, 20, 480, 20, 480, 480, 20, 480)
    patch = rasterize_glyph("TWO\nLINES", style, quad)
    # rasterize the reported quad (dilated by 1px tolerance) and check coverage
    img = Image.new("L", (500, 500), 0)
    pts = [(patch.quad[2 * i], patch.quad[2 * i + 1]) for i in range(4)]
    ImageDraw.Draw(img).polygon(pts, fill=255, outline=255, width=3)
    quad_mask = np.asarray(img) > 0
    ys, xs = np.nonzero(patch.pixels)
    ys = ys + patch.origin[1]
    xs = xs + patch.origin[0]
    assert quad_mask[ys, xs].all()


def test_effective_quad_matches_rasterizer():
    style = plain_style(px=28, rotation_deg=41.0, twist_amp=4.0, bold=True)
    assert effective_quad("HILL\nTOP", style, WIDE_QUAD) == rasterize_glyph("HILL\nTOP", style, WIDE_QUAD).quad


# --- composition ---------------------------------------------------------------------


def test_compose_empty():
    assert (compose_glyph_image([], (64, 48)) == 0).all()


def test_compose_single_patch_identity_placement():
    patch = rasterize_glyph("GO", plain_style(px=20), (10, 10, 200, 10, 200, 60, 10, 60))
    canvas = compose_glyph_image([patch], (256, 128))
    x0, y0, x1, y1 = patch.bbox()
    assert np.array_equal(canvas[y0:y1, x0:x1], patch.pixels)
    outside = canvas.copy()
    outside[y0:y1, x0:x1] = 0
    assert (outside == 0).all()


def test_compose_disjoint_union_is_max():
    p1 = rasterize_glyph("A", plain_style(px=20), (10, 10, 100, 10, 100, 60, 10, 60))
    p2 = rasterize_glyph("B", plain_style(px=20), (150, 80, 240, 80, 240, 130, 150, 130))
    both = compose_glyph_image([p1, p2], (256, 160))
    only1 = compose_glyph_image([p1], (256, 160))
    only2 = compose_glyph_image([p2], (256, 160))
    assert np.array_equal(both, np.maximum(only1, only2))


def test_compose_collision_rejected():
    p1 = rasterize_glyph("A", plain_style(px=30), (10, 10, 100, 10, 100, 70, 10, 70))
    p2 = rasterize_glyph("A", plain_style(px=30), (12, 12, 102, 12, 102, 72, 12, 72))
    with pytest.raises(ValueError, match="glyph collision"):
        compose_glyph_image([p1, p2], (256, 128))


def test_compose_out_of_bounds_rejected():
    patch = rasterize_glyph("A", plain_style(px=20), (10, 10, 100, 10, 100, 60, 10, 60))
    with pytest.raises(ValueError, match="outside"):
        compose_glyph_image([patch], (40, 20))


# --- color choice ---------------------------------------------------------------------


def _lum_threshold_dark_bg() -> float:
    """Numerically solve the smallest relative luminance with 4.5:1 contrast
    over black: (L + 0.05) / 0.05 >= 4.5."""
    return 4.5 * 0.05 - 0.05


def _lum_threshold_light_bg() -> float:
    """Largest relative luminance with 4.5:1 contrast under white."""
    return 1.05 / 4.5 - 0.05


def test_black_region_gets_light_text():
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    color = choose_text_color(img, np.ones((32, 32), bool))
    assert relative_luminance(color) >= _lum_threshold_dark_bg() - 1e-9
    assert contrast_ratio(color, (0, 0, 0)) >= 4.5


def test_white_region_gets_dark_text():
    img = np.full((32, 32, 3), 255, dtype=np.uint8)
    color = choose_text_color(img, np.ones((32, 32), bool))
    assert relative_luminance(color) <= _lum_threshold_light_bg() + 1e-9
    assert contrast_ratio(color, (255, 255, 255)) >= 4.5


def test_midgray_region_postcondition():
    img = np.full((32, 32, 3), 128, dtype=np.uint8)
    color = choose_text_color(img, np.ones((32, 32), bool))
    assert contrast_ratio(color, (128, 128, 128)) >= 4.5


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
@settings(max_examples=80, deadline=None)
def test_color_contrast_postcondition_holds(r, g, b):
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    img[:] = (r, g, b)
    color = choose_text_color(img, np.ones((8, 8), bool))
    assert contrast_ratio(color, (r, g, b)) >= 4.5


def test_empty_mask_rejected():
    with pytest.raises(ValueError, match="empty region"):
        choose_text_color(np.zeros((8, 8, 3), np.uint8), np.zeros((8, 8), bool))


# --- layout sampling -------------------------------------------------------------------


LEX = ["OPEN", "CLOSED", "SALE", "EXIT", "market", "coffee", "42", "north"]


def test_single_candidate_forces_one_region():
    cand = fake_candidate(40, 40, 470, 470)
    draw = sample_layout([cand], LEX, 123, (512, 512))
    assert draw.region_count == 1
    assert len(draw.regions) == 1


def test_layout_deterministic():
    cands = [fake_candidate(16, 16, 240, 240), fake_candidate(260, 260, 500, 500)]
    a = sample_layout(cands, LEX, 77, (512, 512))
    b = sample_layout(cands, LEX, 77, (512, 512))
    assert a.region_count == b.region_count
    for ra, rb in zip(a.regions, b.regions):
        assert ra.words == rb.words
        assert ra.style == rb.style
        assert ra.placement == rb.placement


def test_no_candidates_rejected():
    with pytest.raises(LayoutError, match="no candidates"):
        sample_layout([], LEX, 0, (512, 512))


def test_infeasible_candidates_raise():
    # a sliver can't hold even one line at the minimum font with rule margins
    cand = fake_candidate(100, 100, 112, 112)
    with pytest.raises(LayoutError, match="no feasible layout"):
        sample_layout([cand], LEX, 5, (512, 512))


def _grid_candidates():
    img = np.zeros((512, 512, 3), dtype=np.uint8)
    rng = np.random.default_rng(11)
    edges = [0, 160, 320, 512]
    colors = rng.integers(40, 216, (9, 3))
    k = 0
    for i in range(3):
        for j in range(3):
            img[edges[i]:edges[i + 1], edges[j]:edges[j + 1]] = colors[k]
            k += 1
    return propose_text_regions(img, DepthMap(np.full((512, 512), 3.0)))


def test_region_count_uniform_chi2():
    """Monte-Carlo over a fixed 8+ candidate scene: region_count should be
    uniform on 1..8 (chi-square p > 0.01)."""
    cands = _grid_candidates()
    assert len(cands) >= 8
    counts = np.zeros(8, dtype=int)
    n_draws = 10000
    for seed in range(n_draws):
        draw = sample_layout(cands, LEX, seed, (512, 512))
        counts[draw.region_count - 1] += 1
    assert counts.sum() == n_draws
    assert chisquare(counts).pvalue > 0.01


def test_layouts_satisfy_filtering_rules():
    cands = _grid_candidates()
    for seed in range(60):
        draw = sample_layout(cands, LEX, seed, (512, 512))
        regions = [
            TextRegion(
                text=rd.text,
                quad=effective_quad(rd.text, rd.style, rd.placement_quad()),
                font_px=rd.style.font_px,
                rotation_deg=rd.style.rotation_deg,
                lines=rd.lines,
                bold=rd.style.bold,
                border=rd.style.border,
            )
            for rd in draw.regions
        ]
        sample = Sample(
            image_ref="x", depth_ref="y", caption="c",
            text_regions=tuple(regions), objects=(),
        )
        report = validate_filtering_rules(sample, (512, 512))
        assert report.passed, report.violations
