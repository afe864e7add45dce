"""Shadow-edge detection and shadow-free reconstruction in the gradient domain.

Chromaticity (L2-normalized RGB) images are invariant to intensity
scaling, so edges present in the original frame but absent from the
invariant channels are illumination edges.  Zeroing those gradients in
the log image and integrating back through a Poisson solve yields the
shadow-free image; keeping only those gradients yields the shadow image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .frames import to_grayscale, validate_gray, validate_rgb

LOG_OFFSET = 1.0 / 256.0


class ShadowError(Exception):
    pass


class PoissonConvergenceError(ShadowError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"Poisson solve did not converge: residual {residual:.3e} "
                         f"after {sweeps} sweeps")
        self.residual = residual
        self.sweeps = sweeps


@dataclass
class InvariantImages:
    inv1: np.ndarray  # normalized r channel
    inv2: np.ndarray  # normalized g channel


@dataclass
class GradientField:
    gx: np.ndarray
    gy: np.ndarray


@dataclass
class ShadowMasks:
    HS: np.ndarray  # hard-shadow edges
    VS: np.ndarray  # penumbra band
    mask: np.ndarray  # HS | VS


@dataclass
class Blob:
    bbox: tuple[int, int, int, int]  # x, y, w, h
    mask: np.ndarray  # restricted to bbox
    centroid: tuple[float, float]
    area: int


def invariant_images(frame: np.ndarray) -> InvariantImages:
    """Per-pixel L2 channel normalization; black pixels map to zero."""
    frame = validate_rgb(frame)
    norm = np.sqrt((frame ** 2).sum(axis=2))
    safe = np.where(norm > 0, norm, 1.0)
    inv1 = np.where(norm > 0, frame[..., 0] / safe, 0.0)
    inv2 = np.where(norm > 0, frame[..., 1] / safe, 0.0)
    return InvariantImages(inv1=inv1, inv2=inv2)


def edge_strength(frame: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smoothed Sobel gradient magnitude, normalized to peak 1."""
    frame = validate_gray(frame)
    if sigma < 0:
        raise ShadowError("sigma must be >= 0")
    if sigma > 0:
        # Truncate at 3 sigma and renormalize the kernel at the borders.
        blurred = ndimage.gaussian_filter(frame, sigma, truncate=3.0, mode="constant")
        weight = ndimage.gaussian_filter(np.ones_like(frame), sigma, truncate=3.0,
                                         mode="constant")
        frame = blurred / weight
    gx = ndimage.sobel(frame, axis=1, mode="nearest")
    gy = ndimage.sobel(frame, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def hard_shadow_mask(e_ori: np.ndarray, e_inv1: np.ndarray, e_inv2: np.ndarray,
                     t1: float = 0.3, t2: float = 0.1) -> np.ndarray:
    """Strong in the original, absent in both invariants => illumination edge."""
    if not 0.0 <= t2 < t1 <= 1.0:
        raise ShadowError(f"need 0 <= t2 < t1 <= 1, got t1={t1}, t2={t2}")
    return (e_ori > t1) & (np.minimum(e_inv1, e_inv2) < t2)


def shadow_masks(frame: np.ndarray, sigma: float = 1.0, t1: float = 0.3,
                 t2: float = 0.1, penumbra: int = 2) -> ShadowMasks:
    """Full shadow-edge mask: hard edges plus a dilated penumbra band."""
    inv = invariant_images(frame)
    e_ori = edge_strength(to_grayscale(frame), sigma)
    e1 = edge_strength(np.clip(inv.inv1, 0.0, 1.0), sigma)
    e2 = edge_strength(np.clip(inv.inv2, 0.0, 1.0), sigma)
    hs = hard_shadow_mask(e_ori, e1, e2, t1, t2)
    if penumbra > 0 and hs.any():
        vs = ndimage.binary_dilation(hs, iterations=penumbra)
    else:
        vs = hs.copy()
    return ShadowMasks(HS=hs, VS=vs, mask=hs | vs)


def forward_gradient(frame: np.ndarray) -> GradientField:
    """Forward differences; the last column/row of gx/gy is zero."""
    gx = np.zeros_like(frame)
    gy = np.zeros_like(frame)
    gx[:, :-1] = frame[:, 1:] - frame[:, :-1]
    gy[:-1, :] = frame[1:, :] - frame[:-1, :]
    return GradientField(gx=gx, gy=gy)


def masked_gradient(f_log: np.ndarray, mask: np.ndarray) -> GradientField:
    """Forward-difference gradients with edges under the mask removed.

    A gradient sample spans two pixels; it is zeroed when either endpoint
    is masked so a one-pixel-wide edge mask still kills the step.
    """
    f_log = np.asarray(f_log, dtype=np.float64)
    mask = np.asarray(mask, bool)
    if f_log.shape != mask.shape:
        raise ShadowError("mask dimensions do not match frame")
    g = forward_gradient(f_log)
    kill_x = mask.copy()
    kill_x[:, :-1] |= mask[:, 1:]
    kill_y = mask.copy()
    kill_y[:-1, :] |= mask[1:, :]
    g.gx[kill_x] = 0.0
    g.gy[kill_y] = 0.0
    return g


def _gradient_selection(f_log: np.ndarray, mask: np.ndarray, keep_masked: bool):
    """Split the gradient field into the shadow-edge and shadow-free parts."""
    full = forward_gradient(f_log)
    removed = masked_gradient(f_log, mask)
    if keep_masked:
        return GradientField(gx=full.gx - removed.gx, gy=full.gy - removed.gy)
    return removed


def divergence(g: GradientField) -> np.ndarray:
    """Backward-difference divergence of a forward-difference field."""
    gx = g.gx.copy()
    gy = g.gy.copy()
    gx[:, -1] = 0.0  # outside the forward-difference support
    gy[-1, :] = 0.0
    div = np.zeros_like(gx)
    div += gx
    div[:, 1:] -= gx[:, :-1]
    div += gy
    div[1:, :] -= gy[:-1, :]
    return div


def poisson_reconstruct(g: GradientField, tol: float = 1e-6,
                        max_sweeps: int = 20000, omega: float = 1.9) -> np.ndarray:
    """Solve lap(s) = div g with Neumann boundaries by red-black SOR.

    The solution is gauge-fixed to zero mean.  Raises on non-convergence
    with the final relative residual.
    """
    b = divergence(g)
    b = b - b.mean()  # Neumann compatibility
    h, w = b.shape
    b_norm = float(np.sqrt((b ** 2).sum()))
    if b_norm == 0.0:
        return np.zeros_like(b)

    deg = np.full((h, w), 4.0)
    deg[0, :] -= 1.0
    deg[-1, :] -= 1.0
    deg[:, 0] -= 1.0
    deg[:, -1] -= 1.0

    yy, xx = np.mgrid[0:h, 0:w]
    red = (yy + xx) % 2 == 0
    black = ~red
    s = np.zeros((h, w))

    def neighbor_sum(u):
        out = np.zeros_like(u)
        out[1:, :] += u[:-1, :]
        out[:-1, :] += u[1:, :]
        out[:, 1:] += u[:, :-1]
        out[:, :-1] += u[:, 1:]
        return out

    for sweep in range(1, max_sweeps + 1):
        for color in (red, black):
            ns = neighbor_sum(s)
            gs = (ns - b) / deg
            s[color] = (1.0 - omega) * s[color] + omega * gs[color]
        if sweep % 10 == 0 or sweep == max_sweeps:
            residual = neighbor_sum(s) - deg * s - b
            rel = float(np.sqrt((residual ** 2).sum())) / b_norm
            if rel < tol:
                return s - s.mean()
    raise PoissonConvergenceError(rel, max_sweeps)


def split_shadow(frame: np.ndarray, masks: ShadowMasks, tol: float = 1e-6,
                 max_sweeps: int = 20000):
    """Decompose the log frame into shadow (S) and shadow-free (R) images.

    s integrates only the gradients under the shadow-edge mask, r = i - s,
    and both exponentiate with max-normalization so max(S) = max(R) = 1.
    """
    gray = to_grayscale(frame)
    i_log = np.log(gray + LOG_OFFSET)
    shadow_field = _gradient_selection(i_log, masks.mask, keep_masked=True)
    s = poisson_reconstruct(shadow_field, tol=tol, max_sweeps=max_sweeps)
    r = i_log - s
    S = np.exp(s - s.max())
    R = np.exp(r - r.max())
    return S, R


def remove_shadow(frame: np.ndarray, sigma: float = 1.0, t1: float = 0.3,
                  t2: float = 0.1, penumbra: int = 2):
    """Convenience: detect shadow edges then split; returns (S, R, masks)."""
    masks = shadow_masks(frame, sigma=sigma, t1=t1, t2=t2, penumbra=penumbra)
    S, R = split_shadow(frame, masks)
    return S, R, masks


def extract_blobs(mask: np.ndarray, min_area: int = 25) -> list[Blob]:
    """8-connected components >= min_area, largest first (ties: scan order)."""
    mask = np.asarray(mask, bool)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), bool))
    blobs = []
    for index, slc in enumerate(ndimage.find_objects(labels), start=1):
        if slc is None:
            continue
        component = labels[slc] == index
        area = int(component.sum())
        if area < min_area:
            continue
        y0, x0 = slc[0].start, slc[1].start
        ys, xs = np.nonzero(component)
        centroid = (x0 + float(xs.mean()), y0 + float(ys.mean()))
        bbox = (x0, y0, slc[1].stop - x0, slc[0].stop - y0)
        blobs.append(Blob(bbox=bbox, mask=component, centroid=centroid, area=area))
    blobs.sort(key=lambda b: (-b.area, b.bbox[1], b.bbox[0]))
    return blobs
