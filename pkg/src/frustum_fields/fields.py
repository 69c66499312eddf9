"""Volumetric fields: analytic SDF scenes and the SDF-to-density transform.

Analytic primitives (sphere, axis-aligned box, half-space) compose by
union (pointwise min of member distances) and carry a flat RGB color each;
they provide exact ground truth for synthetic scenes.  Grid-backed fields
live on DiffGrids and are read with trilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, DiffGrid
from .geometry import FrustumSamples, trilinear_weights


# ---------------------------------------------------------------------------
# Analytic SDF primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]

    def sdf(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; exact exterior distance, max-coordinate interior."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    color: tuple[float, float, float]

    def sdf(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        lo = np.asarray(self.min_corner)
        hi = np.asarray(self.max_corner)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        q = np.abs(p - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class HalfSpace:
    """Occupied region is {p : normal . p < offset}; normal need not be unit."""

    normal: tuple[float, float, float]
    offset: float
    color: tuple[float, float, float]

    def sdf(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return p @ n - self.offset


Primitive = Sphere | Box | HalfSpace


@dataclass
class SdfScene:
    """Union of analytic primitives; the synthetic ground-truth oracle."""

    primitives: list

    def __post_init__(self):
        for prim in self.primitives:
            c = np.asarray(prim.color, dtype=np.float64)
            if c.shape != (3,) or np.any(c < 0) or np.any(c > 1):
                raise ContractViolation("primitive colors must be RGB in [0,1]")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of the union: min over members, +inf when empty."""
        p = np.asarray(points, dtype=np.float64)
        if not self.primitives:
            return np.full(p.shape[:-1], np.inf)
        stack = np.stack([prim.sdf(p) for prim in self.primitives], axis=0)
        return stack.min(axis=0)

    def sdf_and_color(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Union SDF plus the color of the nearest member at each point."""
        p = np.asarray(points, dtype=np.float64)
        if not self.primitives:
            return np.full(p.shape[:-1], np.inf), np.zeros(p.shape[:-1] + (3,))
        stack = np.stack([prim.sdf(p) for prim in self.primitives], axis=0)
        nearest = stack.argmin(axis=0)
        colors = np.asarray([prim.color for prim in self.primitives], dtype=np.float64)
        return np.take_along_axis(stack, nearest[None], axis=0)[0], colors[nearest]


def sdf_eval(scene: SdfScene, point) -> float | np.ndarray:
    """Signed distance of the scene at metric point(s)."""
    out = scene.sdf(np.asarray(point, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Laplace-CDF density transform
# ---------------------------------------------------------------------------


def laplace_cdf(s, beta):
    """CDF of the zero-mean Laplace distribution (numpy, non-tracked).

    Scalar or array ``s``; continuous at 0 with value 1/2, strictly
    increasing.  Use :func:`sdf_to_density` for the differentiable path.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ContractViolation("laplace_cdf requires beta > 0")
    s = np.asarray(s, dtype=np.float64)
    t = s / beta
    half_tail = 0.5 * np.exp(-np.abs(t))
    out = np.where(t <= 0, half_tail, 1.0 - half_tail)
    return float(out) if out.ndim == 0 else out


def sdf_to_density(sdf, beta):
    """Volume density sigma = (1/beta) * LaplaceCDF_beta(-sdf).

    Inside geometry (sdf < 0) the density approaches 1/beta as beta -> 0;
    far outside it decays exponentially to zero.  Works on DiffGrids
    (differentiable in both arguments) and plain arrays.
    """
    if isinstance(sdf, DiffGrid) or isinstance(beta, DiffGrid):
        return ad.div(ad.laplace_cdf(ad.neg(sdf), beta), beta)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ContractViolation("sdf_to_density requires beta > 0")
    sdf = np.asarray(sdf, dtype=np.float64)
    if not np.all(np.isfinite(sdf)):
        raise ad.NumericError("sdf_to_density", "non-finite SDF input")
    return laplace_cdf(-sdf, beta) / beta


# ---------------------------------------------------------------------------
# Trilinear sampling of grid-backed fields
# ---------------------------------------------------------------------------


def trilinear_sample(grid, samples: FrustumSamples):
    """Sample a (H, W, D) or (H, W, D, C) grid at continuous indices.

    Returns a (P,) or (P, C) result.  Out-of-frustum points (mask False)
    and corners beyond the lattice contribute exactly zero; gradients flow
    to the 8 surrounding cells with their barycentric weights.
    """
    shape = grid.shape
    if len(shape) == 3:
        spatial, channels, squeeze = shape, 1, True
    elif len(shape) == 4:
        spatial, channels, squeeze = shape[:3], shape[3], False
    else:
        raise ContractViolation(f"expected 3D or 4D grid, got shape {shape}")
    idx, wts = trilinear_weights(samples.coords, spatial, samples.mask)
    n = spatial[0] * spatial[1] * spatial[2]
    if isinstance(grid, DiffGrid):
        flat = ad.reshape(grid, (n, channels))
        out = ad.gather_linear(flat, idx, wts)
        if squeeze:
            out = ad.reshape(out, (idx.shape[0],))
        return out
    flat = np.asarray(grid, dtype=np.float64).reshape(n, channels)
    out = np.zeros((idx.shape[0], channels))
    live = idx >= 0
    safe = np.maximum(idx, 0)
    for k in range(8):
        w = (wts[:, k] * live[:, k])[:, None]
        out += w * flat[safe[:, k]]
    return out[:, 0] if squeeze else out
