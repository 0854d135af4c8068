"""Dense feature maps, bilinear sampling, and closed-form tent-kernel integrals.

Coordinate convention used throughout the package: pixel centers sit at
integer coordinates, ``x`` indexes columns (width axis) and ``y`` indexes rows
(height axis). The continuous domain of an ``H x W`` plane is
``[0, W-1] x [0, H-1]``; anything sampled outside it reads as zero
(zero padding).

The 1-D tent kernel ``max(0, 1 - |u - c|)`` is the building block of bilinear
interpolation. Its interval integral has a simple piecewise-quadratic closed
form, which is what makes exact rectangle averages (see ``radconv.region``)
possible without any sampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeatureMap",
    "bilinear_sample",
    "bilinear_sample_many",
    "tent_integral",
    "tent_integral_profile",
    "tent_boundary_value",
    "tent_span",
    "tent_weight_vector",
]


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense ``(channels, height, width)`` grid of float64 samples.

    Storage is channel-major, then row, then column (C-contiguous numpy
    layout), which fixes the on-disk order of the RADT dump format.
    All samples must be finite; NaN/Inf are rejected at construction.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 3:
            raise ValueError(
                f"expected (channels, height, width) data, got shape {arr.shape}"
            )
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map samples must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def from_plane(cls, plane) -> "FeatureMap":
        """Wrap a single 2-D plane as a one-channel map."""
        arr = np.asarray(plane, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D plane, got shape {arr.shape}")
        return cls(arr[None, :, :])

    @classmethod
    def filled(cls, channels: int, height: int, width: int, value: float) -> "FeatureMap":
        return cls(np.full((channels, height, width), float(value)))

    def __repr__(self) -> str:
        return f"FeatureMap(channels={self.channels}, height={self.height}, width={self.width})"


def _require_channel(fmap: FeatureMap, channel: int) -> int:
    channel = int(channel)
    if not 0 <= channel < fmap.channels:
        raise IndexError(
            f"channel {channel} out of range for map with {fmap.channels} channels"
        )
    return channel


def bilinear_sample(fmap: FeatureMap, channel: int, x: float, y: float) -> float:
    """Bilinearly interpolated sample at continuous coordinates ``(x, y)``.

    The value is the tent-weighted sum of the four surrounding pixels;
    pixels outside the domain contribute zero. At integer coordinates
    inside the domain this returns the stored sample exactly.
    """
    channel = _require_channel(fmap, channel)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"sample coordinates must be finite, got ({x}, {y})")
    data = fmap.data
    height, width = fmap.height, fmap.width
    x0 = math.floor(x)
    y0 = math.floor(y)
    fx = x - x0
    fy = y - y0
    total = 0.0
    for iy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
        if wy == 0.0 or not 0 <= iy < height:
            continue
        for ix, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
            if wx == 0.0 or not 0 <= ix < width:
                continue
            total += wy * wx * data[channel, iy, ix]
    return float(total)


def bilinear_sample_many(fmap: FeatureMap, channel: int, xs, ys) -> np.ndarray:
    """Vectorized :func:`bilinear_sample` over arrays of coordinates.

    ``xs`` and ``ys`` must have the same shape; the result has that shape.
    """
    channel = _require_channel(fmap, channel)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError(f"coordinate shapes differ: {xs.shape} vs {ys.shape}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("sample coordinates must be finite")
    plane = fmap.data[channel]
    height, width = plane.shape
    # Points far outside the domain contribute zero either way; clipping to a
    # sentinel just outside keeps the integer cast safe for huge coordinates.
    xs = np.clip(xs, -2.0, width + 1.0)
    ys = np.clip(ys, -2.0, height + 1.0)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)
    out = np.zeros(xs.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            gx = ix + dx
            gy = iy + dy
            valid = (gx >= 0) & (gx < width) & (gy >= 0) & (gy < height)
            vals = plane[np.clip(gy, 0, height - 1), np.clip(gx, 0, width - 1)]
            out += np.where(valid, wy * wx * vals, 0.0)
    return out


def _tent_antiderivative(s):
    """Antiderivative of the unit tent, normalized so F(-1) = 0 and F(1) = 1."""
    s = np.clip(s, -1.0, 1.0)
    return 0.5 + s - 0.5 * s * np.abs(s)


def _tent_antiderivative_scalar(s: float) -> float:
    # same piecewise form as the array version, without numpy overhead
    if s <= -1.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    return 0.5 + s - 0.5 * s * abs(s)


def tent_integral(center: float, lo: float, hi: float) -> float:
    """Exact integral of ``max(0, 1 - |u - center|)`` over ``[lo, hi]``.

    Piecewise-quadratic closed form; no sampling is involved. The result
    lies in ``[0, min(1, hi - lo)]``.
    """
    if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(center)):
        raise ValueError("tent_integral arguments must be finite")
    if not lo < hi:
        raise ValueError(f"interval must satisfy lo < hi, got [{lo}, {hi}]")
    return _tent_antiderivative_scalar(hi - center) - _tent_antiderivative_scalar(lo - center)


def tent_integral_profile(lo: float, hi: float, centers: np.ndarray) -> np.ndarray:
    """Vectorized :func:`tent_integral` for an array of integer centers."""
    centers = np.asarray(centers, dtype=np.float64)
    return _tent_antiderivative(hi - centers) - _tent_antiderivative(lo - centers)


def tent_boundary_value(center: float, u: float) -> float:
    """Tent kernel value ``max(0, 1 - |u - center|)`` at a single point."""
    return max(0.0, 1.0 - abs(u - center))


def tent_span(lo: float, hi: float, size: int) -> tuple[int, int]:
    """Inclusive range of integer centers whose tent support overlaps
    ``(lo, hi)`` with positive measure, clipped to ``[0, size - 1]``.

    Centers whose support merely touches an endpoint (zero-measure overlap)
    are excluded, matching the closed form which assigns them weight exactly
    zero. Returns ``(start, stop)`` with ``start > stop`` when empty.
    """
    start = max(0, math.floor(lo))
    stop = min(size - 1, math.ceil(hi))
    return start, stop


def tent_weight_vector(lo: float, hi: float, size: int) -> tuple[int, np.ndarray]:
    """Integral weights of every in-domain tent over ``[lo, hi]``.

    Returns ``(start, weights)`` where ``weights[i]`` is the exact tent
    integral for the center ``start + i``. Every returned weight is positive;
    the vector is empty when the interval misses the domain entirely.
    """
    start, stop = tent_span(lo, hi, size)
    if start > stop:
        return 0, np.empty(0, dtype=np.float64)
    # scalar loop: spans are a handful of elements, numpy overhead dominates
    anti = _tent_antiderivative_scalar
    weights = [anti(hi - c) - anti(lo - c) for c in range(start, stop + 1)]
    return start, np.asarray(weights, dtype=np.float64)
