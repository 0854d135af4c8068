"""The operator family built on exact region integration.

Implements, over :class:`~radconv.numerics.FeatureMap` inputs:

* plain grid convolution with per-element scalar weights (the reference all
  other operators reduce to),
* point-sampling deformable convolution in four flavors (plain offsets,
  sigmoid modulation, grouped softmax modulation, grouped raw modulation),
  forward only,
* region convolution: each kernel element owns an axis-aligned rectangle,
  decoded from four positive boundary offsets around the element's center,
  and contributes the exact average of the bilinear surface over that
  rectangle. Forward and backward are both closed-form.

Boundary offsets are decoded like anchor-free box regression: subtract the
(transformed, strictly positive) top/left distances, add the bottom/right
ones. Positivity of the transform guarantees ``top < bottom`` and
``left < right`` for any raw logits.

Field layouts (all ``(channels, height, width)`` float64 arrays):

* boundary offsets: ``G*4K`` channels ordered (group, element, [t, b, l, r]),
* modulation logits: ``G*K`` channels ordered (group, element),
* point offsets:     ``G*2K`` channels ordered (group, element, [dx, dy]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import FeatureMap, tent_boundary_value, tent_integral_profile, tent_weight_vector
from .region import Region

__all__ = [
    "KernelGrid",
    "RadConvParams",
    "ConvWeights",
    "OFFSET_TRANSFORMS",
    "MODULATION_MODES",
    "output_grid_shape",
    "decode_regions",
    "standard_conv_forward",
    "dcn_forward",
    "radconv_forward",
    "radconv_backward",
    "predictor_conv",
]

OFFSET_TRANSFORMS = ("exponential", "softplus")
MODULATION_MODES = ("sigmoid", "softmax_over_k", "none")
DCN_VARIANTS = ("v1", "v2", "v3", "v4")


@dataclass(frozen=True)
class KernelGrid:
    """Fixed integer sampling grid; ``offsets`` holds (dx, dy) per element."""

    offsets: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        cleaned = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        if len(cleaned) == 0:
            raise ValueError("kernel grid must have at least one element")
        if len(set(cleaned)) != len(cleaned):
            raise ValueError("kernel grid positions must be distinct")
        object.__setattr__(self, "offsets", cleaned)

    @property
    def k(self) -> int:
        return len(self.offsets)

    @classmethod
    def square(cls, size: int) -> "KernelGrid":
        """Centered ``size x size`` grid (odd sizes), row-major element order."""
        size = int(size)
        if size < 1 or size % 2 == 0:
            raise ValueError(f"square grids require an odd positive size, got {size}")
        half = size // 2
        return cls(
            tuple(
                (dx, dy)
                for dy in range(-half, half + 1)
                for dx in range(-half, half + 1)
            )
        )


@dataclass(frozen=True)
class RadConvParams:
    """Configuration of the region convolution operator."""

    kernel: KernelGrid
    groups: int = 1
    offset_transform: str = "exponential"
    modulation_mode: str = "softmax_over_k"
    epsilon_min: float = 1e-3
    stride: int = 1

    def __post_init__(self) -> None:
        if self.groups < 1:
            raise ValueError(f"groups must be positive, got {self.groups}")
        if self.offset_transform not in OFFSET_TRANSFORMS:
            raise ValueError(
                f"offset_transform must be one of {OFFSET_TRANSFORMS}, got {self.offset_transform!r}"
            )
        if self.modulation_mode not in MODULATION_MODES:
            raise ValueError(
                f"modulation_mode must be one of {MODULATION_MODES}, got {self.modulation_mode!r}"
            )
        if not (math.isfinite(self.epsilon_min) and self.epsilon_min > 0.0):
            raise ValueError(f"epsilon_min must be positive, got {self.epsilon_min}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")


@dataclass(frozen=True, eq=False)
class ConvWeights:
    """Kernel weights: per-element scalars and/or per-group channel projections.

    ``spatial`` has shape ``(K,)`` and drives the plain and v1/v2 deformable
    operators. ``group_proj`` has shape ``(G, C/G, C/G)`` and is shared across
    kernel elements, driving the grouped operators.
    """

    spatial: np.ndarray | None = None
    group_proj: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.spatial is not None:
            arr = np.asarray(self.spatial, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"spatial weights must be 1-D, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("spatial weights must be finite")
            object.__setattr__(self, "spatial", arr)
        if self.group_proj is not None:
            arr = np.asarray(self.group_proj, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
                raise ValueError(
                    f"group projections must have shape (G, C/G, C/G), got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError("group projections must be finite")
            object.__setattr__(self, "group_proj", arr)
        if self.spatial is None and self.group_proj is None:
            raise ValueError("weights must define spatial and/or group_proj")


def output_grid_shape(height: int, width: int, stride: int) -> tuple[int, int]:
    """Output dimensions for a strided operator over an H x W input."""
    return (height + stride - 1) // stride, (width + stride - 1) // stride


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _apply_transform(raw: np.ndarray, kind: str) -> np.ndarray:
    if kind == "exponential":
        return np.exp(raw)
    if kind == "softplus":
        return np.logaddexp(0.0, raw)
    raise ValueError(f"unknown offset transform {kind!r}")


def _transform_derivative(raw: np.ndarray, kind: str) -> np.ndarray:
    if kind == "exponential":
        return np.exp(raw)
    if kind == "softplus":
        return _sigmoid(raw)
    raise ValueError(f"unknown offset transform {kind!r}")


def _checked_field(arr, channels: int, height: int, width: int, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != (channels, height, width):
        raise ValueError(
            f"{name} must have shape {(channels, height, width)}, got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


class _DecodedRegions(NamedTuple):
    raw: np.ndarray      # (G, K, 4, Ho, Wo) strided raw logits, order [t, b, l, r]
    delta: np.ndarray    # (G, K, 4, Ho, Wo) positive distances after extent clamping
    top: np.ndarray      # (G, K, Ho, Wo)
    bottom: np.ndarray
    left: np.ndarray
    right: np.ndarray
    clamp_v: np.ndarray  # bool masks where the minimum-extent clamp engaged
    clamp_h: np.ndarray
    center_y: np.ndarray  # (K, Ho, Wo) kernel-element centers in input coords
    center_x: np.ndarray


def _decode_fields(raw_offsets, params: RadConvParams, height: int, width: int) -> _DecodedRegions:
    grid = params.kernel
    g, k, s = params.groups, grid.k, params.stride
    field = _checked_field(raw_offsets, g * 4 * k, height, width, "boundary offsets")
    out_h, out_w = output_grid_shape(height, width, s)
    raw = field[:, ::s, ::s].reshape(g, k, 4, out_h, out_w)
    delta = _apply_transform(raw, params.offset_transform)

    eps = params.epsilon_min
    d_t, d_b = delta[:, :, 0], delta[:, :, 1]
    d_l, d_r = delta[:, :, 2], delta[:, :, 3]
    clamp_v = (d_t + d_b) < eps
    clamp_h = (d_l + d_r) < eps
    # Symmetric expansion up to the minimum extent; backward applies the
    # matching Jacobian on the (rare) clamped entries.
    pad_v = np.where(clamp_v, 0.5 * (eps - (d_t + d_b)), 0.0)
    pad_h = np.where(clamp_h, 0.5 * (eps - (d_l + d_r)), 0.0)
    delta = np.stack([d_t + pad_v, d_b + pad_v, d_l + pad_h, d_r + pad_h], axis=2)

    grid_y = (np.arange(out_h) * s)[:, None] + np.zeros((1, out_w))
    grid_x = np.zeros((out_h, 1)) + (np.arange(out_w) * s)[None, :]
    pk = np.asarray(grid.offsets, dtype=np.float64)  # (K, 2) as (dx, dy)
    center_y = grid_y[None, :, :] + pk[:, 1][:, None, None]
    center_x = grid_x[None, :, :] + pk[:, 0][:, None, None]

    top = center_y[None] - delta[:, :, 0]
    bottom = center_y[None] + delta[:, :, 1]
    left = center_x[None] - delta[:, :, 2]
    right = center_x[None] + delta[:, :, 3]
    return _DecodedRegions(
        raw, delta, top, bottom, left, right, clamp_v, clamp_h, center_y, center_x
    )


def decode_regions(raw_offsets, params: RadConvParams, position: tuple[int, int]) -> list[Region]:
    """Decode the ``G*K`` integration rectangles at one output position.

    ``position`` is ``(row, col)`` in the output grid. Regions come back in
    (group, element) order and always satisfy the ordering and minimum-extent
    invariants, whatever the raw logits.
    """
    field = np.asarray(raw_offsets, dtype=np.float64)
    if field.ndim != 3:
        raise ValueError(f"boundary offsets must be 3-D, got shape {field.shape}")
    height, width = field.shape[1], field.shape[2]
    dec = _decode_fields(field, params, height, width)
    out_h, out_w = dec.top.shape[2], dec.top.shape[3]
    row, col = int(position[0]), int(position[1])
    if not (0 <= row < out_h and 0 <= col < out_w):
        raise ValueError(
            f"position {(row, col)} outside output grid {(out_h, out_w)}"
        )
    # Clamped extents equal epsilon_min only up to roundoff; allow a hair.
    min_extent = params.epsilon_min * (1.0 - 1e-9)
    regions = []
    for g in range(params.groups):
        for k in range(params.kernel.k):
            regions.append(
                Region(
                    dec.top[g, k, row, col],
                    dec.bottom[g, k, row, col],
                    dec.left[g, k, row, col],
                    dec.right[g, k, row, col],
                    min_extent=min_extent,
                )
            )
    return regions


def standard_conv_forward(x: FeatureMap, w: ConvWeights, grid: KernelGrid) -> FeatureMap:
    """Plain grid convolution: per-element scalar weights, shared across
    channels, zero padding at the borders, stride one."""
    if w.spatial is None:
        raise ValueError("standard convolution requires spatial weights")
    if w.spatial.size != grid.k:
        raise ValueError(
            f"expected {grid.k} spatial weights, got {w.spatial.size}"
        )
    data = x.data
    channels, height, width = data.shape
    reach_x = max(abs(dx) for dx, _ in grid.offsets)
    reach_y = max(abs(dy) for _, dy in grid.offsets)
    padded = np.zeros((channels, height + 2 * reach_y, width + 2 * reach_x))
    padded[:, reach_y : reach_y + height, reach_x : reach_x + width] = data
    out = np.zeros_like(data)
    for idx, (dx, dy) in enumerate(grid.offsets):
        out += w.spatial[idx] * padded[
            :, reach_y + dy : reach_y + dy + height, reach_x + dx : reach_x + dx + width
        ]
    return FeatureMap(out)


def _sample_stack(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of every channel of ``stack`` at shared coordinates."""
    channels, height, width = stack.shape
    xs = np.clip(xs, -2.0, width + 1.0)
    ys = np.clip(ys, -2.0, height + 1.0)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)
    out = np.zeros((channels,) + xs.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            gx = ix + dx
            gy = iy + dy
            valid = (gx >= 0) & (gx < width) & (gy >= 0) & (gy < height)
            vals = stack[:, np.clip(gy, 0, height - 1), np.clip(gx, 0, width - 1)]
            out += np.where(valid[None], (wy * wx)[None] * vals, 0.0)
    return out


def dcn_forward(
    x: FeatureMap,
    w: ConvWeights,
    grid: KernelGrid,
    offsets,
    modulation=None,
    variant: str = "v3",
) -> FeatureMap:
    """Point-sampling deformable convolution, forward only.

    Variants: ``v1`` plain learnable offsets (no modulation), ``v2`` adds
    sigmoid-normalized modulation, ``v3`` grouped channels with softmax
    modulation across kernel elements, ``v4`` like v3 with raw (unbounded)
    modulation weights. Fractional positions are bilinearly interpolated with
    zero padding.
    """
    if variant not in DCN_VARIANTS:
        raise ValueError(f"variant must be one of {DCN_VARIANTS}, got {variant!r}")
    data = x.data
    channels, height, width = data.shape
    k = grid.k
    off = np.asarray(offsets, dtype=np.float64)
    if off.ndim != 3 or off.shape[0] % (2 * k) != 0:
        raise ValueError(
            f"point offsets must have (G*2K, H, W) shape with K={k}, got {off.shape}"
        )
    groups = off.shape[0] // (2 * k)
    off = _checked_field(off, groups * 2 * k, height, width, "point offsets")
    if channels % groups != 0:
        raise ValueError(f"channels {channels} not divisible by groups {groups}")
    group_size = channels // groups
    if variant in ("v1", "v2"):
        if groups != 1:
            raise ValueError(f"variant {variant} is ungrouped, got {groups} offset groups")
        if w.spatial is None or w.spatial.size != k:
            raise ValueError(f"variant {variant} requires {k} spatial weights")
    else:
        if w.group_proj is None or w.group_proj.shape != (groups, group_size, group_size):
            raise ValueError(
                f"variant {variant} requires group projection of shape "
                f"{(groups, group_size, group_size)}"
            )

    if variant == "v1":
        if modulation is not None:
            raise ValueError("variant v1 takes no modulation")
        mod = np.ones((groups, k, height, width))
    else:
        if modulation is None:
            raise ValueError(f"variant {variant} requires modulation")
        raw_mod = _checked_field(modulation, groups * k, height, width, "modulation").reshape(
            groups, k, height, width
        )
        if variant == "v2":
            mod = _sigmoid(raw_mod)
        elif variant == "v3":
            shifted = raw_mod - raw_mod.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            mod = e / e.sum(axis=1, keepdims=True)
        else:  # v4: raw, unbounded
            mod = raw_mod

    off = off.reshape(groups, k, 2, height, width)
    base_y = np.arange(height)[:, None] + np.zeros((1, width))
    base_x = np.zeros((height, 1)) + np.arange(width)[None, :]
    out = np.zeros_like(data)
    for g in range(groups):
        stack = data[g * group_size : (g + 1) * group_size]
        acc = np.zeros_like(stack)
        for kk in range(k):
            dx_k, dy_k = grid.offsets[kk]
            xs = base_x + dx_k + off[g, kk, 0]
            ys = base_y + dy_k + off[g, kk, 1]
            samples = _sample_stack(stack, xs, ys)
            if variant in ("v1", "v2"):
                acc += (w.spatial[kk] * mod[g, kk])[None] * samples
            else:
                acc += mod[g, kk][None] * samples
        if variant in ("v1", "v2"):
            out[g * group_size : (g + 1) * group_size] = acc
        else:
            out[g * group_size : (g + 1) * group_size] = np.tensordot(
                w.group_proj[g], acc, axes=1
            )
    return FeatureMap(out)


def _modulation_values(raw_modulation, params: RadConvParams, height: int, width: int) -> np.ndarray:
    g, k, s = params.groups, params.kernel.k, params.stride
    field = _checked_field(raw_modulation, g * k, height, width, "modulation")
    out_h, out_w = output_grid_shape(height, width, s)
    raw = field[:, ::s, ::s].reshape(g, k, out_h, out_w)
    mode = params.modulation_mode
    if mode == "none":
        return raw.copy()
    if mode == "sigmoid":
        return _sigmoid(raw)
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _uniform_field_average(
    stack: np.ndarray,
    d_t: float,
    d_b: float,
    d_l: float,
    d_r: float,
    pky: int,
    pkx: int,
    stride: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Region averages at every output position when all regions share the
    same geometry relative to their centers (one weight stencil, gathered
    with a sliding window)."""
    channels, height, width = stack.shape
    r0, r1 = math.floor(-d_t), math.ceil(d_b)
    c0, c1 = math.floor(-d_l), math.ceil(d_r)
    wy = tent_integral_profile(-d_t, d_b, np.arange(r0, r1 + 1, dtype=np.float64))
    wx = tent_integral_profile(-d_l, d_r, np.arange(c0, c1 + 1, dtype=np.float64))
    area = (d_t + d_b) * (d_l + d_r)
    pad_t = max(0, -(pky + r0))
    pad_b = max(0, (out_h - 1) * stride + pky + r1 - (height - 1))
    pad_l = max(0, -(pkx + c0))
    pad_r = max(0, (out_w - 1) * stride + pkx + c1 - (width - 1))
    padded = np.zeros((channels, height + pad_t + pad_b, width + pad_l + pad_r))
    padded[:, pad_t : pad_t + height, pad_l : pad_l + width] = stack
    windows = sliding_window_view(padded, (r1 - r0 + 1, c1 - c0 + 1), axis=(1, 2))
    start_y = pad_t + pky + r0
    start_x = pad_l + pkx + c0
    sel = windows[:, start_y::stride, start_x::stride][:, :out_h, :out_w]
    stencil = np.multiply.outer(wy, wx)
    return np.einsum("chwij,ij->chw", sel, stencil, optimize=True) / area


def _field_average(
    stack: np.ndarray, dec: _DecodedRegions, g: int, k: int, params: RadConvParams
) -> np.ndarray:
    """Per-channel region averages of one (group, element) across all positions."""
    out_h, out_w = dec.top.shape[2], dec.top.shape[3]
    delta = dec.delta[g, k]
    if all(np.ptp(delta[i]) == 0.0 for i in range(4)):
        dx_k, dy_k = params.kernel.offsets[k]
        return _uniform_field_average(
            stack,
            float(delta[0].flat[0]),
            float(delta[1].flat[0]),
            float(delta[2].flat[0]),
            float(delta[3].flat[0]),
            dy_k,
            dx_k,
            params.stride,
            out_h,
            out_w,
        )
    channels, height, width = stack.shape
    avg = np.zeros((channels, out_h, out_w))
    top, bottom = dec.top[g, k], dec.bottom[g, k]
    left, right = dec.left[g, k], dec.right[g, k]
    for oy in range(out_h):
        for ox in range(out_w):
            t, b = top[oy, ox], bottom[oy, ox]
            l, r = left[oy, ox], right[oy, ox]
            r0, wy = tent_weight_vector(t, b, height)
            c0, wx = tent_weight_vector(l, r, width)
            if wy.size and wx.size:
                sub = stack[:, r0 : r0 + wy.size, c0 : c0 + wx.size]
                avg[:, oy, ox] = (sub @ wx) @ wy / ((r - l) * (b - t))
    return avg


def radconv_forward(
    x: FeatureMap, w: ConvWeights, raw_offsets, raw_modulation, params: RadConvParams
) -> FeatureMap:
    """Region convolution forward pass.

    Each output position sums, over groups and kernel elements, the
    modulated exact region average of its group's channels, then applies the
    per-group channel projection. With a 1x1 kernel and a single group this
    is a single modulated rectangle average per position.
    """
    data = x.data
    channels, height, width = data.shape
    groups = params.groups
    if channels % groups != 0:
        raise ValueError(f"channels {channels} not divisible by groups {groups}")
    group_size = channels // groups
    if w.group_proj is None:
        raise ValueError("region convolution requires group projection weights")
    if w.group_proj.shape != (groups, group_size, group_size):
        raise ValueError(
            f"group projection must have shape {(groups, group_size, group_size)}, got {w.group_proj.shape}"
        )
    dec = _decode_fields(raw_offsets, params, height, width)
    mod = _modulation_values(raw_modulation, params, height, width)
    out_h, out_w = dec.top.shape[2], dec.top.shape[3]
    out = np.zeros((channels, out_h, out_w))
    for g in range(groups):
        stack = data[g * group_size : (g + 1) * group_size]
        acc = np.zeros((group_size, out_h, out_w))
        for k in range(params.kernel.k):
            acc += mod[g, k][None] * _field_average(stack, dec, g, k, params)
        out[g * group_size : (g + 1) * group_size] = np.tensordot(
            w.group_proj[g], acc, axes=1
        )
    return FeatureMap(out)


def _line_integral_rows(
    stack: np.ndarray, u: float, r0: int, wy: np.ndarray
) -> np.ndarray:
    """Per-channel integral along the vertical line x=u between the row span."""
    channels, height, width = stack.shape
    out = np.zeros(channels)
    if wy.size == 0:
        return out
    base = math.floor(u)
    for idx in (base, base + 1):
        if 0 <= idx < width:
            gw = tent_boundary_value(idx, u)
            if gw > 0.0:
                out += gw * (stack[:, r0 : r0 + wy.size, idx] @ wy)
    return out


def _line_integral_cols(
    stack: np.ndarray, v: float, c0: int, wx: np.ndarray
) -> np.ndarray:
    """Per-channel integral along the horizontal line y=v between the col span."""
    channels, height, width = stack.shape
    out = np.zeros(channels)
    if wx.size == 0:
        return out
    base = math.floor(v)
    for idx in (base, base + 1):
        if 0 <= idx < height:
            gw = tent_boundary_value(idx, v)
            if gw > 0.0:
                out += gw * (stack[:, idx, c0 : c0 + wx.size] @ wx)
    return out


def radconv_backward(
    x: FeatureMap,
    w: ConvWeights,
    raw_offsets,
    raw_modulation,
    params: RadConvParams,
    upstream: FeatureMap,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of the region convolution.

    Returns ``(grad_x, grad_group_proj, grad_raw_offsets, grad_raw_modulation)``
    for a scalar loss whose gradient w.r.t. the output is ``upstream``.
    Boundary gradients combine area-normalization and boundary-line terms,
    chained through the decode signs (top/left shrink, bottom/right grow),
    the minimum-extent clamp where it engaged, and the offset transform.
    Accumulation order is fixed, so results are bit-reproducible.
    """
    data = x.data
    channels, height, width = data.shape
    groups = params.groups
    group_size = channels // groups
    if w.group_proj is None or w.group_proj.shape != (groups, group_size, group_size):
        raise ValueError("weights inconsistent with input and groups")
    dec = _decode_fields(raw_offsets, params, height, width)
    mod = _modulation_values(raw_modulation, params, height, width)
    out_h, out_w = dec.top.shape[2], dec.top.shape[3]
    up = upstream.data
    if up.shape != (channels, out_h, out_w):
        raise ValueError(
            f"upstream must have shape {(channels, out_h, out_w)}, got {up.shape}"
        )
    kcount = params.kernel.k
    stride = params.stride

    grad_x = np.zeros_like(data)
    grad_w = np.zeros_like(w.group_proj)
    grad_delta = np.zeros((groups, kcount, 4, out_h, out_w))
    grad_mod_val = np.zeros((groups, kcount, out_h, out_w))

    for g in range(groups):
        stack = data[g * group_size : (g + 1) * group_size]
        proj = w.group_proj[g]
        gx_stack = grad_x[g * group_size : (g + 1) * group_size]
        for oy in range(out_h):
            for ox in range(out_w):
                u_vec = up[g * group_size : (g + 1) * group_size, oy, ox]
                t_vec = proj.T @ u_vec
                s_vec = np.zeros(group_size)
                for k in range(kcount):
                    t = dec.top[g, k, oy, ox]
                    b = dec.bottom[g, k, oy, ox]
                    l = dec.left[g, k, oy, ox]
                    r = dec.right[g, k, oy, ox]
                    r0, wy = tent_weight_vector(t, b, height)
                    c0, wx = tent_weight_vector(l, r, width)
                    area = (r - l) * (b - t)
                    if wy.size and wx.size:
                        sub = stack[:, r0 : r0 + wy.size, c0 : c0 + wx.size]
                        avg_vec = (sub @ wx) @ wy / area
                    else:
                        avg_vec = np.zeros(group_size)
                    m_val = mod[g, k, oy, ox]
                    s_vec += m_val * avg_vec
                    grad_mod_val[g, k, oy, ox] = float(t_vec @ avg_vec)
                    coef = m_val * t_vec  # per-channel upstream on the average
                    if wy.size and wx.size:
                        stencil = np.multiply.outer(wy, wx) / area
                        gx_stack[:, r0 : r0 + wy.size, c0 : c0 + wx.size] += (
                            coef[:, None, None] * stencil[None]
                        )
                    line_l = _line_integral_rows(stack, l, r0, wy)
                    line_r = _line_integral_rows(stack, r, r0, wy)
                    line_t = _line_integral_cols(stack, t, c0, wx)
                    line_b = _line_integral_cols(stack, b, c0, wx)
                    d_top = float(coef @ (avg_vec / (b - t) - line_t / area))
                    d_bottom = float(coef @ (line_b / area - avg_vec / (b - t)))
                    d_left = float(coef @ (avg_vec / (r - l) - line_l / area))
                    d_right = float(coef @ (line_r / area - avg_vec / (r - l)))
                    # decode signs: top/left are center minus delta
                    dd_t, dd_b = -d_top, d_bottom
                    dd_l, dd_r = -d_left, d_right
                    if dec.clamp_v[g, k, oy, ox]:
                        dd_t, dd_b = 0.5 * (dd_t - dd_b), 0.5 * (dd_b - dd_t)
                    if dec.clamp_h[g, k, oy, ox]:
                        dd_l, dd_r = 0.5 * (dd_l - dd_r), 0.5 * (dd_r - dd_l)
                    grad_delta[g, k, 0, oy, ox] = dd_t
                    grad_delta[g, k, 1, oy, ox] = dd_b
                    grad_delta[g, k, 2, oy, ox] = dd_l
                    grad_delta[g, k, 3, oy, ox] = dd_r
                grad_w[g] += np.outer(u_vec, s_vec)

    grad_raw_strided = grad_delta * _transform_derivative(dec.raw, params.offset_transform)

    raw_mod = _checked_field(raw_modulation, groups * kcount, height, width, "modulation")
    mod_strided = raw_mod[:, ::stride, ::stride].reshape(groups, kcount, out_h, out_w)
    mode = params.modulation_mode
    if mode == "none":
        grad_mod_raw = grad_mod_val
    elif mode == "sigmoid":
        sig = _sigmoid(mod_strided)
        grad_mod_raw = grad_mod_val * sig * (1.0 - sig)
    else:  # softmax over kernel elements
        inner = np.sum(grad_mod_val * mod, axis=1, keepdims=True)
        grad_mod_raw = mod * (grad_mod_val - inner)

    grad_raw_offsets = np.zeros((groups * 4 * kcount, height, width))
    grad_raw_offsets[:, ::stride, ::stride] = grad_raw_strided.reshape(
        groups * 4 * kcount, out_h, out_w
    )
    grad_raw_modulation = np.zeros((groups * kcount, height, width))
    grad_raw_modulation[:, ::stride, ::stride] = grad_mod_raw.reshape(
        groups * kcount, out_h, out_w
    )
    return grad_x, grad_w, grad_raw_offsets, grad_raw_modulation


def predictor_conv(
    x: FeatureMap, weight, bias, params: RadConvParams
) -> tuple[np.ndarray, np.ndarray]:
    """Companion 3x3 convolution producing raw boundary offsets and modulation.

    ``weight`` has shape ``(G*5K, C, 3, 3)`` and ``bias`` shape ``(G*5K,)``;
    the first ``G*4K`` output channels are boundary offsets ordered
    (group, element, [t, b, l, r]) and the remaining ``G*K`` are modulation
    logits ordered (group, element). Zero weights and biases therefore decode
    to unit-distance regions everywhere.
    """
    g, k = params.groups, params.kernel.k
    expected = g * 5 * k
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    data = x.data
    channels, height, width = data.shape
    if weight.shape != (expected, channels, 3, 3):
        raise ValueError(
            f"predictor weight must have shape {(expected, channels, 3, 3)}, got {weight.shape}"
        )
    if bias.shape != (expected,):
        raise ValueError(f"predictor bias must have shape ({expected},), got {bias.shape}")
    if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
        raise ValueError("predictor parameters must be finite")
    padded = np.zeros((channels, height + 2, width + 2))
    padded[:, 1 : 1 + height, 1 : 1 + width] = data
    out = np.broadcast_to(bias[:, None, None], (expected, height, width)).copy()
    for ty in range(3):
        for tx in range(3):
            out += np.einsum(
                "oi,ihw->ohw", weight[:, :, ty, tx], padded[:, ty : ty + height, tx : tx + width]
            )
    return out[: g * 4 * k], out[g * 4 * k :]
