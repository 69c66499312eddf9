"""Pinhole cameras, frustum/voxel grid layouts, and coordinate transforms.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (optical axis).  "Depth" always
  means the z coordinate in the camera frame, not ray length.
* Continuous image coordinates are measured from the top-left corner, so
  the center of integer pixel (row, col) sits at (col + 0.5, row + 0.5).
  Grid sampling happens in index space: index = continuous coord - 0.5.
* The frustum grid is indexed [row, col, plane]; plane depths are shared
  by all pixels (plane-sweep layout).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ConfigError, ContractViolation

# Queries this close to a lattice point snap onto it, which makes sampling
# at exact grid positions reproduce stored values bit-for-bit.
_SNAP_EPS = 1e-9


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid camera-to-world pose (meters)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    height: int = 0
    width: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        r = self.rotation
        if r.shape != (3, 3) or self.translation.shape != (3,):
            raise ConfigError("pose must be a 3x3 rotation and length-3 translation")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ConfigError("rotation must be orthonormal with determinant +1")

    # -- resolution helpers -------------------------------------------------

    def scaled(self, new_height: int, new_width: int) -> "CameraModel":
        """Camera for a resampled image plane (e.g. the feature map)."""
        sy = new_height / self.height
        sx = new_width / self.width
        return CameraModel(
            fx=self.fx * sx, fy=self.fy * sy,
            cx=self.cx * sx, cy=self.cy * sy,
            rotation=self.rotation, translation=self.translation,
            height=new_height, width=new_width,
        )

    # -- projections --------------------------------------------------------

    def backproject(self, u, v, z):
        """Pixel coords + depth -> camera-frame point(s), shape (..., 3)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if np.any(z <= 0):
            raise ContractViolation("backproject requires depth z > 0")
        x = (u - self.cx) * z / self.fx
        y = (v - self.cy) * z / self.fy
        return np.stack(np.broadcast_arrays(x, y, z), axis=-1)

    def project(self, points):
        """Camera-frame points (..., 3) -> (u, v, z) continuous coords.

        No validity checks: callers mask non-positive depths themselves.
        """
        points = np.asarray(points, dtype=np.float64)
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * x / z + self.cx
            v = self.fy * y / z + self.cy
        return u, v, z

    # -- rays ----------------------------------------------------------------

    def pixel_grid(self):
        """Continuous center coords of every pixel: arrays u, v of (H, W)."""
        v, u = np.meshgrid(
            np.arange(self.height, dtype=np.float64) + 0.5,
            np.arange(self.width, dtype=np.float64) + 0.5,
            indexing="ij",
        )
        return u, v

    def ray_dirs(self):
        """Per-pixel ray directions (H, W, 3), z component fixed at 1.

        A point at depth z along the pixel ray is exactly z * dir.
        """
        u, v = self.pixel_grid()
        a = (u - self.cx) / self.fx
        b = (v - self.cy) / self.fy
        return np.stack([a, b, np.ones_like(a)], axis=-1)

    # -- rigid transforms ----------------------------------------------------

    def cam_to_world(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def world_to_cam(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation


# ---------------------------------------------------------------------------
# Grid layouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrustumSpec:
    """Feature-plane resolution and depth-plane layout of the frustum grid."""

    height: int
    width: int
    depth_planes: int
    z_near: float
    z_far: float
    perturb: bool = False

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("frustum resolution must be positive")
        if self.depth_planes < 2:
            raise ConfigError("need at least 2 depth planes")
        if not (0 < self.z_near < self.z_far):
            raise ConfigError("require 0 < z_near < z_far")

    @property
    def spacing(self) -> float:
        return (self.z_far - self.z_near) / self.depth_planes

    def plane_edges(self) -> np.ndarray:
        return np.linspace(self.z_near, self.z_far, self.depth_planes + 1)

    def plane_depths(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """Depth of each plane: bin centers, or one uniform draw per bin.

        Perturbation requires both ``self.perturb`` and an rng; evaluation
        paths simply pass ``rng=None`` to get deterministic centers.
        """
        edges = self.plane_edges()
        if self.perturb and rng is not None:
            u = rng.uniform(0.0, 1.0, size=self.depth_planes)
        else:
            u = np.full(self.depth_planes, 0.5)
        return edges[:-1] + u * np.diff(edges)


def sample_depth_planes(spec: FrustumSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Strictly increasing plane depths for the given layout."""
    depths = spec.plane_depths(rng)
    if np.any(np.diff(depths) <= 0):
        raise ContractViolation("sampled depths are not strictly increasing")
    return depths


@dataclass(frozen=True)
class VoxelSpec:
    """Axis-aligned metric voxel grid in the source camera frame.

    Arrays over the grid are indexed [iy, ix, iz] = (H3d, W3d, D3d), with
    sampling points at voxel centers.  Extents must divide the ranges
    exactly; fractional configurations are rejected.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    voxel_size: tuple[float, float, float]

    def __post_init__(self):
        for lo, hi in (self.x_range, self.y_range, self.z_range):
            if hi <= lo:
                raise ConfigError("voxel ranges must be increasing")
        for s in self.voxel_size:
            if s <= 0:
                raise ConfigError("voxel size must be positive")
        for n, (lo, hi), s in zip("xyz", (self.x_range, self.y_range, self.z_range), self.voxel_size):
            count = (hi - lo) / s
            if abs(count - round(count)) > 1e-6:
                raise ConfigError(
                    f"{n}-range {(lo, hi)} is not an integer number of {s} m voxels"
                )

    @property
    def shape(self) -> tuple[int, int, int]:
        ny = round((self.y_range[1] - self.y_range[0]) / self.voxel_size[1])
        nx = round((self.x_range[1] - self.x_range[0]) / self.voxel_size[0])
        nz = round((self.z_range[1] - self.z_range[0]) / self.voxel_size[2])
        return ny, nx, nz

    def centers(self) -> np.ndarray:
        """Voxel center coordinates, shape (H3d, W3d, D3d, 3) as [x, y, z]."""
        ny, nx, nz = self.shape
        ys = self.y_range[0] + (np.arange(ny) + 0.5) * self.voxel_size[1]
        xs = self.x_range[0] + (np.arange(nx) + 0.5) * self.voxel_size[0]
        zs = self.z_range[0] + (np.arange(nz) + 0.5) * self.voxel_size[2]
        gy, gx, gz = np.meshgrid(ys, xs, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


# ---------------------------------------------------------------------------
# Per-ray quadrature spacings
# ---------------------------------------------------------------------------


def delta_distances(depths: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Euclidean distances between successive samples on each pixel ray.

    ``depths`` (D,) strictly increasing, ``dirs`` (..., 3) with unit z
    component, so the i-th sample point is depths[i] * dir and successive
    samples are (depths[i+1] - depths[i]) * |dir| apart.  The last spacing
    replicates the previous one to close the quadrature.
    """
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(np.diff(depths) <= 0):
        raise ContractViolation("depths must be strictly increasing")
    gaps = np.diff(depths)
    gaps = np.concatenate([gaps, gaps[-1:]])
    norms = np.linalg.norm(np.asarray(dirs, dtype=np.float64), axis=-1)
    return norms[..., None] * gaps


def pixel_delta_distances(u, v, depths, cam: CameraModel) -> np.ndarray:
    """Spacings for a single pixel ray (convenience over delta_distances)."""
    a = (np.asarray(u, dtype=np.float64) - cam.cx) / cam.fx
    b = (np.asarray(v, dtype=np.float64) - cam.cy) / cam.fy
    dirs = np.stack(np.broadcast_arrays(a, b, np.ones_like(a)), axis=-1)
    return delta_distances(depths, dirs)


# ---------------------------------------------------------------------------
# Normalized positional coordinates
# ---------------------------------------------------------------------------


def normalize_frustum_coords(spec: FrustumSpec, depths: np.ndarray) -> np.ndarray:
    """Positional feature grid (H, W, D, 3) of normalized [u, v, z].

    u and v map pixel indices linearly onto [-1, 1] (corners hit exactly
    -1 and +1); z maps the actual plane depths onto [0, 1] across
    [z_near, z_far].
    """
    h, w, d = spec.height, spec.width, spec.depth_planes
    u = 2.0 * np.arange(w) / max(w - 1, 1) - 1.0
    v = 2.0 * np.arange(h) / max(h - 1, 1) - 1.0
    z = (np.asarray(depths, dtype=np.float64) - spec.z_near) / (spec.z_far - spec.z_near)
    out = np.empty((h, w, d, 3))
    out[..., 0] = u[None, :, None]
    out[..., 1] = v[:, None, None]
    out[..., 2] = z[None, None, :]
    return out


# ---------------------------------------------------------------------------
# Metric points -> continuous frustum indices
# ---------------------------------------------------------------------------


@dataclass
class FrustumSamples:
    """Continuous frustum indices for a batch of metric query points.

    ``coords`` is (P, 3) as [row, col, plane] in grid index space, already
    clamped to the grid support for in-frustum points; ``mask`` is (P,)
    with False marking points outside the metric frustum (those must
    contribute zero feature and zero density).
    """

    coords: np.ndarray
    mask: np.ndarray


def frustum_sample_points(
    points_cam: np.ndarray,
    cam: CameraModel,
    spec: FrustumSpec,
    depths: np.ndarray,
) -> FrustumSamples:
    """Map camera-frame points onto continuous frustum grid indices.

    ``cam`` must be the feature-plane camera (see CameraModel.scaled).
    A point is inside the frustum when its depth lies in [z_near, z_far]
    and its projection lands inside the image rectangle.  The continuous
    plane index is the inverse of the (possibly perturbed) plane-depth
    mapping, so a point exactly at plane k's depth gets index k.
    """
    pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    depths = np.asarray(depths, dtype=np.float64)
    u, v, z = cam.project(pts)
    ok_z = (z >= spec.z_near) & (z <= spec.z_far) & (z > 0)
    ok_img = (u >= 0) & (u <= cam.width) & (v >= 0) & (v <= cam.height)
    mask = ok_z & ok_img

    zq = np.where(ok_z, z, spec.z_near)
    plane = np.interp(zq, depths, np.arange(spec.depth_planes, dtype=np.float64))
    col = np.clip(np.where(mask, u, 0.0) - 0.5, 0.0, cam.width - 1)
    row = np.clip(np.where(mask, v, 0.0) - 0.5, 0.0, cam.height - 1)
    coords = np.stack([row, col, plane], axis=-1)
    return FrustumSamples(coords=coords, mask=mask)


def voxel_frustum_samples(
    voxel: VoxelSpec,
    cam: CameraModel,
    spec: FrustumSpec,
    depths: np.ndarray,
) -> FrustumSamples:
    """Frustum sampling points for every voxel center (flattened layout)."""
    return frustum_sample_points(voxel.centers().reshape(-1, 3), cam, spec, depths)


# ---------------------------------------------------------------------------
# Interpolation index builders (consumed by autodiff.gather_linear)
# ---------------------------------------------------------------------------


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.round(x)
    return np.where(np.abs(x - r) < _SNAP_EPS, r, x)


def trilinear_weights(
    coords: np.ndarray,
    grid_shape: tuple[int, int, int],
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """8-corner gather indices and weights for continuous grid coords.

    coords: (P, 3) index-space positions; corners outside the grid get
    index -1 (gather treats them as zeros).  Masked-out points get all
    corners disabled.  Near-integer coordinates snap onto the lattice so
    that queries at grid nodes return stored values exactly.
    """
    h, w, d = grid_shape
    c = _snap(np.asarray(coords, dtype=np.float64))
    f = np.floor(c)
    t = c - f
    f = f.astype(np.int64)

    idx = np.empty((c.shape[0], 8), dtype=np.int64)
    wts = np.empty((c.shape[0], 8), dtype=np.float64)
    k = 0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                ii = f[:, 0] + dz
                jj = f[:, 1] + dy
                kk = f[:, 2] + dx
                inb = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w) & (kk >= 0) & (kk < d)
                flat = (ii * w + jj) * d + kk
                idx[:, k] = np.where(inb, flat, -1)
                wz = t[:, 0] if dz else 1.0 - t[:, 0]
                wy = t[:, 1] if dy else 1.0 - t[:, 1]
                wx = t[:, 2] if dx else 1.0 - t[:, 2]
                wts[:, k] = wz * wy * wx
                k += 1
    if mask is not None:
        idx[~np.asarray(mask, dtype=bool)] = -1
    return idx, wts


def bilinear_weights(
    coords: np.ndarray, grid_shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """4-corner gather indices/weights with edge clamping (2D version)."""
    h, w = grid_shape
    c = _snap(np.asarray(coords, dtype=np.float64))
    c = np.clip(c, 0.0, np.asarray([h - 1, w - 1], dtype=np.float64))
    f = np.floor(c)
    t = c - f
    f = f.astype(np.int64)
    idx = np.empty((c.shape[0], 4), dtype=np.int64)
    wts = np.empty((c.shape[0], 4), dtype=np.float64)
    k = 0
    for dy in (0, 1):
        for dx in (0, 1):
            ii = np.minimum(f[:, 0] + dy, h - 1)
            jj = np.minimum(f[:, 1] + dx, w - 1)
            idx[:, k] = ii * w + jj
            wy = t[:, 0] if dy else 1.0 - t[:, 0]
            wx = t[:, 1] if dx else 1.0 - t[:, 1]
            wts[:, k] = wy * wx
            k += 1
    return idx, wts


def upsample_coords(src_h: int, src_w: int, dst_h: int, dst_w: int) -> np.ndarray:
    """Source index-space coords for bilinear resize (align-corners-false)."""
    rows = (np.arange(dst_h) + 0.5) * (src_h / dst_h) - 0.5
    cols = (np.arange(dst_w) + 0.5) * (src_w / dst_w) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr, cc], axis=-1).reshape(-1, 2)
