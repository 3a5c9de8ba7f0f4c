"""Gradient-domain compositing: build the 5-point Poisson system over a
masked region, solve it with Jacobi-preconditioned conjugate gradients, and
paste the result back so pasted content inherits the surrounding texture
and illumination."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .images import linear_to_srgb, srgb_to_linear


class NoConvergence(RuntimeError):
    """Raised when CG exhausts max_iter; carries the last true residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class GuidanceField:
    """Target gradient field as forward differences: gx[i,j] = f[i,j+1]-f[i,j]."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        if self.gx.shape != self.gy.shape:
            raise ValueError("gx/gy shape mismatch")
        if not (np.isfinite(self.gx).all() and np.isfinite(self.gy).all()):
            raise ValueError("guidance field must be finite")


@dataclass
class LinearSystem:
    """Sparse SPD system A f = b over the interior pixels of a mask."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    index: np.ndarray  # (H, W) int map, -1 outside the interior
    mask: np.ndarray


def forward_diffs(field: np.ndarray) -> GuidanceField:
    """Forward-difference gradient of a 2-D field; last row/column are zero."""
    gx = np.zeros_like(field, dtype=np.float64)
    gy = np.zeros_like(field, dtype=np.float64)
    gx[:, :-1] = field[:, 1:] - field[:, :-1]
    gy[:-1, :] = field[1:, :] - field[:-1, :]
    return GuidanceField(gx=gx, gy=gy)


def mixed_guidance(source: np.ndarray, target: np.ndarray) -> GuidanceField:
    """Per-edge strongest gradient of source vs target (keeps whichever has
    larger magnitude, preferring the source on ties)."""
    s = forward_diffs(source)
    t = forward_diffs(target)
    gx = np.where(np.abs(t.gx) > np.abs(s.gx), t.gx, s.gx)
    gy = np.where(np.abs(t.gy) > np.abs(s.gy), t.gy, s.gy)
    return GuidanceField(gx=gx, gy=gy)


def build_laplacian(mask: np.ndarray) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Assemble the 5-point Laplacian over the masked pixels (row-major order)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if not mask.any():
        raise ValueError("empty interior")
    if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
        raise ValueError("boundary ring missing")
    index = np.full((h, w), -1, dtype=np.int64)
    ii, jj = np.nonzero(mask)
    n = ii.size
    index[ii, jj] = np.arange(n)

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 4.0)]
    for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        qi, qj = ii + di, jj + dj
        inside = mask[qi, qj]
        rows.append(index[ii[inside], jj[inside]])
        cols.append(index[qi[inside], qj[inside]])
        vals.append(np.full(int(inside.sum()), -1.0))
    a = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return a, index


def build_rhs(mask: np.ndarray, target: np.ndarray, guidance: GuidanceField) -> np.ndarray:
    """Right-hand side: summed edge guidance plus Dirichlet ring values."""
    mask = np.asarray(mask, dtype=bool)
    ii, jj = np.nonzero(mask)
    gx, gy = guidance.gx, guidance.gy
    # Sum of v_pq over the four oriented edges into p; for import guidance
    # v = grad(g) this reduces to the negative divergence stencil of g.
    b = gx[ii, jj - 1] - gx[ii, jj] + gy[ii - 1, jj] - gy[ii, jj]
    tgt = np.asarray(target, dtype=np.float64)
    for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        qi, qj = ii + di, jj + dj
        ring = ~mask[qi, qj]
        b[ring] += tgt[qi[ring], qj[ring]]
    return b


def build_system(mask: np.ndarray, target: np.ndarray, guidance: GuidanceField) -> LinearSystem:
    """Discretize the Poisson equation over `mask` with `target` boundary values."""
    if target.shape != np.asarray(mask).shape or guidance.gx.shape != target.shape:
        raise ValueError("mask/target/guidance dims mismatch")
    a, index = build_laplacian(mask)
    b = build_rhs(mask, target, guidance)
    return LinearSystem(matrix=a, rhs=b, index=index, mask=np.asarray(mask, dtype=bool))


def solve_poisson(
    system: LinearSystem,
    tol: float = 1e-6,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned CG until the true residual satisfies
    ||A x - b||_inf <= tol. Returns (interior values, iterations)."""
    a = system.matrix
    b = system.rhs
    n = b.size
    if max_iter is None:
        max_iter = max(64, int(math.ceil(10.0 * math.sqrt(n))))
    inv_diag = 1.0 / a.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - a @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        ap = a @ p
        denom = float(p @ ap)
        if denom <= 0.0:
            break  # numerically exhausted search direction
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        if it % 64 == 0:
            r = b - a @ x  # periodic refresh against drift
        if np.abs(r).max() <= tol:
            true_r = b - a @ x
            if np.abs(true_r).max() <= tol:
                return x, it
            r = true_r
        z = inv_diag * r
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
    true_r = b - a @ x
    resid = float(np.abs(true_r).max())
    if resid <= tol:
        return x, max_iter
    raise NoConvergence(resid, max_iter)


def clone_linear(
    target: np.ndarray,
    source: np.ndarray,
    mask: np.ndarray,
    mode: str = "mixed",
    tol: float = 1e-6,
    max_iter: int | None = None,
) -> np.ndarray:
    """Composite in linear light; channels solved independently, no clamping.

    `target`/`source` are float (H, W) or (H, W, C); the masked pixels are
    replaced by the Poisson solve, everything else is returned untouched.
    """
    if mode not in ("import", "mixed"):
        raise ValueError(f"unknown mode {mode!r}")
    if target.shape != source.shape:
        raise ValueError("target/source dims mismatch")
    mask = np.asarray(mask, dtype=bool)
    out = np.array(target, dtype=np.float64)
    if not mask.any():
        return out
    single = target.ndim == 2
    tgt = out[..., None] if single else out
    src = np.asarray(source, dtype=np.float64)[..., None] if single else np.asarray(source, dtype=np.float64)
    a, index = build_laplacian(mask)
    for c in range(tgt.shape[2]):
        t_ch = tgt[..., c]
        s_ch = src[..., c]
        guidance = forward_diffs(s_ch) if mode == "import" else mixed_guidance(s_ch, t_ch)
        b = build_rhs(mask, t_ch, guidance)
        system = LinearSystem(matrix=a, rhs=b, index=index, mask=mask)
        x, _ = solve_poisson(system, tol=tol, max_iter=max_iter, x0=t_ch[mask])
        t_ch[mask] = x
    return out


def seamless_clone(
    target: np.ndarray,
    source: np.ndarray,
    mask: np.ndarray,
    mode: str = "mixed",
    tol: float = 1e-6,
    max_iter: int | None = None,
) -> np.ndarray:
    """Gradient-domain composite of 8-bit images.

    Decodes sRGB to linear light, solves each channel over the mask, and
    re-encodes. Pixels outside the mask keep their exact input bytes.
    """
    if mode not in ("import", "mixed"):
        raise ValueError(f"unknown mode {mode!r}")
    target = np.asarray(target)
    source = np.asarray(source)
    if target.shape != source.shape or target.shape[:2] != np.asarray(mask).shape:
        raise ValueError("target/source/mask dims mismatch")
    mask = np.asarray(mask, dtype=bool)
    out = target.copy()
    if not mask.any():
        return out
    # The solution only depends on the mask, its Dirichlet ring, and guidance
    # on edges touching the interior, so a 2-px window around the mask is exact.
    ii, jj = np.nonzero(mask)
    h, w = mask.shape
    y0, y1 = max(0, ii.min() - 2), min(h, ii.max() + 3)
    x0, x1 = max(0, jj.min() - 2), min(w, jj.max() + 3)
    win = (slice(y0, y1), slice(x0, x1))
    sub_mask = mask[win]
    lin = clone_linear(
        srgb_to_linear(target[win]), srgb_to_linear(source[win]), sub_mask, mode, tol, max_iter
    )
    out[win][sub_mask] = linear_to_srgb(lin)[sub_mask]
    return out
