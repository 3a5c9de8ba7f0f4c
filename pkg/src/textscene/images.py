"""Image and depth-map I/O plus sRGB <-> linear-light conversion."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image


def srgb_to_linear(u8: np.ndarray) -> np.ndarray:
    """Decode 8-bit sRGB values to linear light in [0, 1] (float64)."""
    x = np.asarray(u8, dtype=np.float64) / 255.0
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(lin: np.ndarray) -> np.ndarray:
    """Encode linear light in [0, 1] back to 8-bit sRGB (uint8, clamped)."""
    x = np.clip(np.asarray(lin, dtype=np.float64), 0.0, 1.0)
    enc = np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)
    return np.clip(np.round(enc * 255.0), 0, 255).astype(np.uint8)


def relative_luminance(rgb_u8) -> float:
    """WCAG relative luminance of one sRGB color (components 0..255)."""
    r, g, b = (srgb_to_linear(np.asarray(rgb_u8, dtype=np.float64)))
    return float(0.2126 * r + 0.7152 * g + 0.0722 * b)


def contrast_ratio(rgb_a, rgb_b) -> float:
    """WCAG contrast ratio (L1 + 0.05) / (L2 + 0.05), L1 >= L2."""
    la = relative_luminance(rgb_a)
    lb = relative_luminance(rgb_b)
    hi, lo = max(la, lb), min(la, lb)
    return (hi + 0.05) / (lo + 0.05)


def load_image(path) -> np.ndarray:
    """Load an 8-bit 3-channel image as an (H, W, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(arr: np.ndarray, path) -> None:
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def save_glyph_image(pixels: np.ndarray, path) -> None:
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def load_glyph_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


# --- depth maps --------------------------------------------------------------
#
# Two on-disk forms: a 16-bit single-channel PNG with a JSON sidecar carrying
# `depth_scale` (meters per unit), or a binary PFM float grid.


def save_depth_png(depth: np.ndarray, path, depth_scale: float) -> None:
    """Store depth as 16-bit PNG of depth/depth_scale with a JSON sidecar."""
    units = np.clip(np.round(np.asarray(depth, dtype=np.float64) / depth_scale), 0, 65535)
    Image.fromarray(units.astype(np.uint16), mode="I;16").save(path, format="PNG")
    sidecar = Path(path).with_suffix(".json")
    sidecar.write_text(json.dumps({"depth_scale": depth_scale}) + "\n", encoding="utf-8")


def load_depth_png(path) -> np.ndarray:
    sidecar = Path(path).with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    with Image.open(path) as im:
        units = np.asarray(im, dtype=np.float64)
    return units * float(meta["depth_scale"])


def save_depth_pfm(depth: np.ndarray, path) -> None:
    """Write a single-channel PFM (little-endian float32, bottom-up rows)."""
    arr = np.asarray(depth, dtype=np.float32)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(arr[::-1].tobytes())


def load_depth_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError("not a single-channel PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    arr = data.reshape(h, w)[::-1].astype(np.float64)
    return arr * abs(scale) if abs(scale) != 1.0 else arr


def load_depth(path) -> np.ndarray:
    """Dispatch on suffix: .pfm float grid or 16-bit .png with sidecar."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return load_depth_pfm(path)
    return load_depth_png(path)


def luminance_u8(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) uint8 image, kept in 8-bit units (float)."""
    rgb = np.asarray(image, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
