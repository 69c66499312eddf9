"""Lifting 2D features into the frustum and resampling into voxels.

The depth axis of the frustum is populated by attention: normalized
positional coordinates are mapped to per-plane queries, the 2D feature map
to per-pixel keys and values, and softmax over the depth dimension turns
their inner products into plane weights.  Two convolutional heads then
produce the signed-distance channel and the radiance channels.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import fields
from .autodiff import ConfigError, ContractViolation, DiffGrid
from .geometry import FrustumSamples


# ---------------------------------------------------------------------------
# Toy backbone: fixed random projection of the input image
# ---------------------------------------------------------------------------


def featurize_image(image: np.ndarray, height: int, width: int, channels: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Fixed seeded featurizer standing in for a learned 2D backbone.

    Block-averages the RGB image down to the feature resolution, then
    applies a frozen random affine map 3 -> C squashed by tanh.  Not
    trainable by design; all learning happens in the lifting parameters.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w, _ = img.shape
    if h % height or w % width:
        raise ConfigError(
            f"image {h}x{w} is not an integer multiple of feature plane {height}x{width}"
        )
    fh, fw = h // height, w // width
    pooled = img.reshape(height, fh, width, fw, 3).mean(axis=(1, 3))
    proj = rng.normal(0.0, 1.0, size=(3, channels))
    bias = rng.normal(0.0, 0.1, size=channels)
    return np.tanh(pooled @ proj + bias)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

# f1 is three kernel-3 convolutions C -> C -> C -> (1+C) with softplus
# between layers (the signed-distance channel must span all reals, so the
# final layer has no activation); f2 is one kernel-3 convolution C -> 3
# behind a sigmoid.
_SDF_BIAS_INIT = 1.0


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_lifting_params(channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter tensors for the QKV maps and both field heads.

    The last f1 bias starts the SDF channel at +1 m so optimization begins
    from a nearly transparent volume.
    """
    c = channels
    p: dict[str, np.ndarray] = {}
    p["f_q.weight"] = _glorot(rng, (3, c), 3, c)
    p["f_q.bias"] = np.zeros(c)
    p["f_k.weight"] = _glorot(rng, (c, c), c, c)
    p["f_k.bias"] = np.zeros(c)
    p["f_v.weight"] = _glorot(rng, (c, c), c, c)
    p["f_v.bias"] = np.zeros(c)
    for layer, (ci, co) in enumerate([(c, c), (c, c), (c, 1 + c)]):
        p[f"f1.{layer}.weight"] = _glorot(rng, (3, 3, 3, ci, co), 27 * ci, 27 * co)
        p[f"f1.{layer}.bias"] = np.zeros(co)
    p["f1.2.bias"][0] = _SDF_BIAS_INIT
    p["f2.weight"] = _glorot(rng, (3, 3, 3, c, 3), 27 * c, 27 * 3)
    p["f2.bias"] = np.zeros(3)
    validate_lifting_params(p, c)
    return p


def validate_lifting_params(params: dict, channels: int) -> None:
    c = channels
    expected = {
        "f_q.weight": (3, c), "f_q.bias": (c,),
        "f_k.weight": (c, c), "f_k.bias": (c,),
        "f_v.weight": (c, c), "f_v.bias": (c,),
        "f1.0.weight": (3, 3, 3, c, c), "f1.0.bias": (c,),
        "f1.1.weight": (3, 3, 3, c, c), "f1.1.bias": (c,),
        "f1.2.weight": (3, 3, 3, c, 1 + c), "f1.2.bias": (1 + c,),
        "f2.weight": (3, 3, 3, c, 3), "f2.bias": (3,),
    }
    for name, shape in expected.items():
        if name not in params:
            raise ConfigError(f"missing lifting parameter '{name}'")
        if tuple(params[name].shape) != shape:
            raise ConfigError(
                f"lifting parameter '{name}' has shape {tuple(params[name].shape)}, expected {shape}"
            )


# ---------------------------------------------------------------------------
# Position-aware frustum via depth-axis attention
# ---------------------------------------------------------------------------


def position_aware_frustum(
    f_image,
    f_pos,
    params: dict[str, DiffGrid],
    attention_scale: str = "D",
) -> DiffGrid:
    """Fuse 2D features with positional coordinates along the depth axis.

    Per pixel, the attention logit of plane d is the channel inner product
    of Q[d] (from the positional grid) with K (from the image feature);
    softmax over planes weights a broadcast of V.  Because V carries no
    depth axis the raw weighted broadcast sums to V over depth, so the
    output is rescaled by D by default to keep plane magnitudes
    independent of the plane count (attention_scale="none" disables this).
    """
    f_image = ad._wrap(f_image)
    f_pos = ad._wrap(f_pos)
    h, w, d, pc = f_pos.shape
    if pc != 3:
        raise ContractViolation("positional grid must have 3 coordinate channels")
    if f_image.shape[:2] != (h, w):
        raise ContractViolation(
            f"feature plane {f_image.shape[:2]} does not match positional grid {(h, w)}"
        )
    c = f_image.shape[2]
    if attention_scale not in ("D", "none"):
        raise ConfigError("attention_scale must be 'D' or 'none'")

    q = ad.affine(f_pos, params["f_q.weight"], params["f_q.bias"])        # (H,W,D,C)
    k = ad.affine(f_image, params["f_k.weight"], params["f_k.bias"])      # (H,W,C)
    v = ad.affine(f_image, params["f_v.weight"], params["f_v.bias"])      # (H,W,C)

    logits = ad.reduce_sum(ad.mul(q, ad.reshape(k, (h, w, 1, c))), axis=3)
    weights = ad.softmax(logits, axis=2)                                   # (H,W,D)
    fp = ad.mul(ad.reshape(weights, (h, w, d, 1)), ad.reshape(v, (h, w, 1, c)))
    if attention_scale == "D":
        fp = ad.mul(fp, float(d))
    return fp


# ---------------------------------------------------------------------------
# Field heads
# ---------------------------------------------------------------------------


def field_heads(
    f_p: DiffGrid,
    params: dict[str, DiffGrid],
    log_beta: DiffGrid,
) -> tuple[DiffGrid, DiffGrid, DiffGrid, DiffGrid]:
    """Produce (F_sdf, F_rgb, F_density, beta) from frustum features.

    F_sdf is channel 0 of the (1+C)-channel head output; the remaining C
    channels feed the sigmoid RGB head.  beta = exp(log_beta) keeps the
    density scale strictly positive under unconstrained optimization.
    """
    h, w, d, c = f_p.shape
    x = ad.softplus(ad.conv3d(f_p, params["f1.0.weight"], params["f1.0.bias"]))
    x = ad.softplus(ad.conv3d(x, params["f1.1.weight"], params["f1.1.bias"]))
    f_prime = ad.conv3d(x, params["f1.2.weight"], params["f1.2.bias"])     # (H,W,D,1+C)
    f_sdf = ad.reshape(ad.slice_axis(f_prime, 3, 0, 1), (h, w, d))
    f_pp = ad.slice_axis(f_prime, 3, 1, 1 + c)                             # (H,W,D,C)
    f_rgb = ad.sigmoid(ad.conv3d(f_pp, params["f2.weight"], params["f2.bias"]))
    beta = ad.exp(log_beta)
    f_density = fields.sdf_to_density(f_sdf, beta)
    return f_sdf, f_rgb, f_density, beta


def split_heads(f_p: DiffGrid, params: dict[str, DiffGrid]) -> tuple[DiffGrid, DiffGrid]:
    """As field_heads but stopping at (F_sdf, F'') for callers that also
    need the intermediate feature channels (voxelization)."""
    h, w, d, c = f_p.shape
    x = ad.softplus(ad.conv3d(f_p, params["f1.0.weight"], params["f1.0.bias"]))
    x = ad.softplus(ad.conv3d(x, params["f1.1.weight"], params["f1.1.bias"]))
    f_prime = ad.conv3d(x, params["f1.2.weight"], params["f1.2.bias"])
    f_sdf = ad.reshape(ad.slice_axis(f_prime, 3, 0, 1), (h, w, d))
    f_pp = ad.slice_axis(f_prime, 3, 1, 1 + c)
    return f_sdf, f_pp


# ---------------------------------------------------------------------------
# Frustum -> voxel resampling
# ---------------------------------------------------------------------------


def voxelize(
    f_pp,
    f_density,
    samples: FrustumSamples,
    voxel_shape: tuple[int, int, int],
):
    """Resample frustum fields at voxel centers and gate by density.

    Returns (V'', V_density, V3d) with V3d = V'' * tanh(V_density)
    broadcast over channels; voxels outside the frustum are exactly zero.
    """
    c = f_pp.shape[3]
    ny, nx, nz = voxel_shape
    v_pp = fields.trilinear_sample(f_pp, samples)          # (P, C)
    v_density = fields.trilinear_sample(f_density, samples)  # (P,)
    if isinstance(v_pp, DiffGrid) or isinstance(v_density, DiffGrid):
        gate = ad.tanh(v_density)
        v3d = ad.mul(v_pp, ad.reshape(gate, (gate.shape[0], 1)))
        return (
            ad.reshape(v_pp, (ny, nx, nz, c)),
            ad.reshape(v_density, (ny, nx, nz)),
            ad.reshape(v3d, (ny, nx, nz, c)),
        )
    gate = np.tanh(v_density)
    v3d = v_pp * gate[:, None]
    return (
        v_pp.reshape(ny, nx, nz, c),
        v_density.reshape(ny, nx, nz),
        v3d.reshape(ny, nx, nz, c),
    )
