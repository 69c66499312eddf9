"""Supervision terms: RGB (smooth-L1 + SSIM), sparse depth L1, SDF residual.

All losses return shape-(1,) scalar DiffGrids, are nonnegative, and vanish
exactly on perfect predictions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fields
from .autodiff import ContractViolation, DiffGrid
from .geometry import FrustumSamples

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    """Fixed combination weights; all default to 1."""

    rgb: float = 1.0
    depth: float = 1.0
    sdf: float = 1.0
    smooth_l1: float = 1.0
    ssim: float = 1.0

    def __post_init__(self):
        for name in ("rgb", "depth", "sdf", "smooth_l1", "ssim"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"loss weight '{name}' must be nonnegative")


@dataclass
class SupervisionBatch:
    """Targets for one fitting run.

    images: one RGB target per camera (source first); depth/mask are the
    sparse source-view depth supervision; surface_points are metric points
    on scene surfaces in the source camera frame.
    """

    images: list
    depth: np.ndarray | None = None
    depth_mask: np.ndarray | None = None
    surface_points: np.ndarray | None = None


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def ssim(x, y, window: int = 11, sigma: float = 1.5):
    """Mean structural similarity over the valid interior (Gaussian window).

    Inputs are (H, W, 3) unit-range images.  The window shrinks to the
    largest odd size that fits when images are smaller than 11 pixels, so
    tiny diagnostic renders remain usable.  Returns a scalar DiffGrid.
    """
    xv, yv = ad.value(x), ad.value(y)
    if xv.shape != yv.shape:
        raise ContractViolation(f"ssim: shape mismatch {xv.shape} vs {yv.shape}")
    h, w = xv.shape[:2]
    win = min(window, h, w)
    if win % 2 == 0:
        win -= 1
    if win < 1:
        raise ContractViolation("image too small for SSIM")
    kernel = gaussian_window(win, sigma)

    def blur(a):
        return ad.gauss_blur_valid(a, kernel)

    mu_x = blur(x)
    mu_y = blur(y)
    mu_xx = ad.mul(mu_x, mu_x)
    mu_yy = ad.mul(mu_y, mu_y)
    mu_xy = ad.mul(mu_x, mu_y)
    var_x = ad.sub(blur(ad.mul(x, x)), mu_xx)
    var_y = ad.sub(blur(ad.mul(y, y)), mu_yy)
    cov = ad.sub(blur(ad.mul(x, y)), mu_xy)

    num = ad.mul(ad.add(ad.mul(mu_xy, 2.0), SSIM_C1), ad.add(ad.mul(cov, 2.0), SSIM_C2))
    den = ad.mul(ad.add(ad.add(mu_xx, mu_yy), SSIM_C1),
                 ad.add(ad.add(var_x, var_y), SSIM_C2))
    return ad.mean_all(ad.div(num, den))


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def rgb_loss(rendered, target, weights: LossWeights, smooth_l1_beta: float = 1.0):
    """smooth_l1 term plus (1 - SSIM)/2 term, each with its own weight."""
    rv, tv = ad.value(rendered), ad.value(target)
    if rv.shape != tv.shape:
        raise ContractViolation(f"rgb_loss: shape mismatch {rv.shape} vs {tv.shape}")
    total = ad._wrap(np.zeros(1))
    if weights.smooth_l1 != 0.0:
        term = ad.mean_all(ad.smooth_l1(ad.sub(rendered, target), smooth_l1_beta))
        total = ad.add(total, ad.mul(term, weights.smooth_l1))
    if weights.ssim != 0.0:
        term = ad.mul(ad.sub(1.0, ssim(rendered, target)), 0.5)
        total = ad.add(total, ad.mul(term, weights.ssim))
    return total


def depth_loss(rendered, target: np.ndarray, mask: np.ndarray):
    """Mean absolute depth error over the mask; 0 when the mask is empty.

    NaNs in the target outside the mask are tolerated (they are replaced
    before entering the graph).
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return ad._wrap(np.zeros(1))
    rv = ad.value(rendered)
    if rv.shape != mask.shape:
        raise ContractViolation(f"depth_loss: shape mismatch {rv.shape} vs {mask.shape}")
    clean = np.where(mask, np.asarray(target, dtype=np.float64), 0.0)
    m = mask.astype(rv.dtype) / n
    return ad.sum_all(ad.mul(ad.absval(ad.sub(rendered, clean)), m))


def sdf_loss(f_sdf, samples: FrustumSamples):
    """Mean |SDF| at surface sample points; out-of-frustum points dropped."""
    kept = int(np.asarray(samples.mask).sum())
    if kept == 0:
        warnings.warn("no surface points fall inside the frustum; sdf loss is 0")
        return ad._wrap(np.zeros(1))
    vals = fields.trilinear_sample(f_sdf, samples)
    scale = np.asarray(samples.mask, dtype=ad.value(vals).dtype) / kept
    return ad.sum_all(ad.mul(ad.absval(vals), scale))


def total_loss(parts: dict[str, DiffGrid], weights: LossWeights) -> DiffGrid:
    """Weighted sum of computed loss parts; zero-weight parts are skipped."""
    total = ad._wrap(np.zeros(1))
    for name, part in parts.items():
        lam = getattr(weights, name)
        if lam == 0.0 or part is None:
            continue
        total = ad.add(total, ad.mul(part, lam))
    return total
