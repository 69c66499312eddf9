"""Volume rendering along per-pixel depth samples.

The differentiable path composites density/color grids that live on the
frustum (original view directly, other views through trilinear resampling
into the source frustum).  A non-differentiable oracle renders analytic
SDF scenes at high sample counts to manufacture ground truth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fields
from .autodiff import ContractViolation, DiffGrid
from .geometry import (
    CameraModel,
    FrustumSpec,
    bilinear_weights,
    delta_distances,
    frustum_sample_points,
    upsample_coords,
)

PSNR_CAP = 99.0


@dataclass
class RenderOutput:
    """Low-resolution render plus (after upsample) full-resolution maps.

    rgb_low: (H2d, W2d, 3); depth_low, opacity: (H2d, W2d); weights kept
    for diagnostics.  rgb/depth/opacity_full are filled by upsample().
    """

    rgb_low: DiffGrid
    depth_low: DiffGrid
    opacity: DiffGrid
    weights: DiffGrid
    rgb: DiffGrid | None = None
    depth: DiffGrid | None = None
    opacity_full: DiffGrid | None = None


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def composite(sigma, colors, deltas, depths) -> RenderOutput:
    """Left-endpoint transmittance quadrature over the depth axis.

    sigma: (H, W, D) nonnegative densities, colors: (H, W, D, 3),
    deltas: (H, W, D) spacings, depths: (D,) or (H, W, D) sample depths.
    Per pixel: w_i = T_i (1 - exp(-sigma_i delta_i)) with T_i excluding
    sample i; rgb/depth/opacity are the w-weighted sums.
    """
    sig = ad.value(sigma)
    if np.min(sig) < 0:
        raise ContractViolation("composite requires nonnegative densities")
    h, w, d = sig.shape
    deltas = np.asarray(deltas)
    depths = np.asarray(depths)
    if depths.ndim == 1:
        depths = depths.reshape(1, 1, d)

    sd = ad.mul(sigma, deltas)
    alpha = ad.neg(ad.expm1(ad.neg(sd)))            # 1 - exp(-sigma*delta)
    trans = ad.exp(ad.neg(ad.cumsum_exclusive(sd, axis=2)))
    weights = ad.mul(trans, alpha)                  # (H, W, D)

    rgb = ad.reduce_sum(ad.mul(ad.reshape(weights, (h, w, d, 1)), colors), axis=2)
    depth = ad.reduce_sum(ad.mul(weights, depths), axis=2)
    opacity = ad.reduce_sum(weights, axis=2)
    return RenderOutput(rgb_low=rgb, depth_low=depth, opacity=opacity, weights=weights)


def render_original(f_density, f_rgb, cam_feat: CameraModel, depths: np.ndarray) -> RenderOutput:
    """Render the source view: frustum cells are the ray samples themselves."""
    deltas = delta_distances(depths, cam_feat.ray_dirs())
    return composite(f_density, f_rgb, deltas, depths)


def render_view(
    f_density,
    f_rgb,
    source_cam: CameraModel,
    target_cam: CameraModel,
    spec: FrustumSpec,
    source_depths: np.ndarray,
    target_depths: np.ndarray | None = None,
) -> RenderOutput:
    """Render the source-frustum fields from another calibrated camera.

    Target rays are sampled at target_depths (defaults to unperturbed
    plane depths), transformed into the source camera frame and read from
    the frustum fields by trilinear interpolation; samples outside the
    source frustum contribute zero density.  Cameras must be feature-plane
    scaled.  If no sample overlaps the source frustum the render is empty
    (opacity 0) and a warning is issued.
    """
    if target_depths is None:
        target_depths = spec.plane_depths()
    h, w, d = target_cam.height, target_cam.width, len(target_depths)
    dirs = target_cam.ray_dirs()                                  # (H, W, 3)
    pts_t = dirs[:, :, None, :] * np.asarray(target_depths).reshape(1, 1, d, 1)
    pts_src = source_cam.world_to_cam(target_cam.cam_to_world(pts_t.reshape(-1, 3)))
    samples = frustum_sample_points(pts_src, source_cam, spec, source_depths)
    if not samples.mask.any():
        warnings.warn("target frustum does not overlap the source frustum; empty render")

    live = samples.mask.astype(ad.value(f_density).dtype).reshape(h, w, d)
    sigma = ad.mul(ad.reshape(fields.trilinear_sample(f_density, samples), (h, w, d)), live)
    colors = fields.trilinear_sample(f_rgb, samples)
    colors = ad.reshape(colors, (h, w, d, 3))
    deltas = delta_distances(np.asarray(target_depths), dirs)
    return composite(sigma, colors, deltas, np.asarray(target_depths))


def upsample(low: RenderOutput, height: int, width: int) -> RenderOutput:
    """Bilinear upsampling (align-corners-false) to the target resolution.

    Differentiable; identity when the size is unchanged.  Border outputs
    clamp to edge samples, interior outputs reproduce affine signals
    exactly.
    """
    src_h, src_w = ad.value(low.depth_low).shape
    if height < src_h or width < src_w:
        raise ContractViolation("upsample target must be at least the source size")
    coords = upsample_coords(src_h, src_w, height, width)
    idx, wts = bilinear_weights(coords, (src_h, src_w))

    def up(grid, channels):
        flat = ad.reshape(grid, (src_h * src_w, channels))
        out = ad.gather_linear(flat, idx, wts)
        if channels == 1:
            return ad.reshape(out, (height, width))
        return ad.reshape(out, (height, width, channels))

    low.rgb = up(low.rgb_low, 3)
    low.depth = up(low.depth_low, 1)
    low.opacity_full = up(low.opacity, 1)
    return low


# ---------------------------------------------------------------------------
# Ground-truth oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleImages:
    """Synthetic ground truth for one camera (all arrays float32).

    depth is NaN at background (opacity < 0.5); depth_sparse keeps a
    seeded subset of foreground pixels and is NaN elsewhere;
    surface_points are the sparse pixels back-projected to the camera
    frame (the LiDAR stand-in used by the SDF loss).
    """

    rgb: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    foreground: np.ndarray
    depth_sparse: np.ndarray
    sparse_mask: np.ndarray
    surface_points: np.ndarray


def oracle_render(
    scene,
    cam: CameraModel,
    spec: FrustumSpec,
    *,
    samples: int = 1024,
    beta: float = 1e-3,
    sparse_fraction: float = 0.05,
    rng: np.random.Generator | None = None,
) -> OracleImages:
    """Render an analytic scene with dense quadrature at image resolution.

    Uses the same transmittance quadrature as the differentiable path but
    with ``samples`` bin-center depths over [z_near, z_far] and a sharp
    density transform (small beta).  Pixel opacity below 0.5 marks
    background.
    """
    rng = rng or np.random.default_rng(0)
    h, w = cam.height, cam.width
    edges = np.linspace(spec.z_near, spec.z_far, samples + 1)
    zs = 0.5 * (edges[:-1] + edges[1:])
    dirs = cam.ray_dirs()
    deltas = delta_distances(zs, dirs)

    rgb = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    opacity = np.zeros((h, w))
    rows_per_chunk = max(1, int(2e6 / (w * samples)))
    for lo in range(0, h, rows_per_chunk):
        hi = min(lo + rows_per_chunk, h)
        pts = dirs[lo:hi, :, None, :] * zs.reshape(1, 1, samples, 1)
        d, c = scene.sdf_and_color(pts)
        sig = fields.sdf_to_density(d, beta)
        sd = sig * deltas[lo:hi]
        alpha = -np.expm1(-sd)
        trans = np.exp(-np.concatenate(
            [np.zeros((hi - lo, w, 1)), np.cumsum(sd, axis=2)[:, :, :-1]], axis=2))
        wgt = trans * alpha
        rgb[lo:hi] = (wgt[..., None] * c).sum(axis=2)
        depth[lo:hi] = (wgt * zs).sum(axis=2)
        opacity[lo:hi] = wgt.sum(axis=2)

    foreground = opacity >= 0.5
    depth_masked = np.where(foreground, depth, np.nan)

    n_fg = int(foreground.sum())
    n_keep = int(round(sparse_fraction * n_fg))
    sparse_mask = np.zeros((h, w), dtype=bool)
    if n_keep > 0:
        flat = np.flatnonzero(foreground)
        keep = rng.choice(flat, size=n_keep, replace=False)
        sparse_mask.flat[keep] = True
    depth_sparse = np.where(sparse_mask, depth, np.nan)

    if sparse_mask.any():
        u, v = cam.pixel_grid()
        surface_points = cam.backproject(
            u[sparse_mask], v[sparse_mask], depth[sparse_mask])
    else:
        surface_points = np.zeros((0, 3))

    return OracleImages(
        rgb=rgb.astype(np.float32),
        depth=depth_masked.astype(np.float32),
        opacity=opacity.astype(np.float32),
        foreground=foreground,
        depth_sparse=depth_sparse.astype(np.float32),
        sparse_mask=sparse_mask,
        surface_points=surface_points.astype(np.float32),
    )


# ---------------------------------------------------------------------------
# Metrics helpers
# ---------------------------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio on unit-range images, capped at 99 dB."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= 0:
        return cap
    return min(cap, -10.0 * np.log10(mse))
