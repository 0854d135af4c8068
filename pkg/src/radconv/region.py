"""Exact rectangle averages of the bilinear surface and their analytic gradients.

The bilinearly interpolated surface of a feature plane is a sum of separable
tent products, so its integral over an axis-aligned rectangle factors into
1-D tent integrals along each axis:

    integral = sum_q  x[q] * T(q_x; left, right) * T(q_y; top, bottom)

with ``T`` the closed-form tent integral from :mod:`radconv.numerics`. The
region average divides by the full geometric area ``(right-left)*(bottom-top)``;
regions may extend past the feature-map border, where samples read as zero.

The average is differentiable in all four boundaries. Moving the left
boundary changes the value through two terms: the area normalization, and the
line integral of the surface along the moving boundary (which enters or
leaves the domain of integration). Both are available in closed form, so the
backward pass is exact too. An independent midpoint-quadrature oracle is
provided for verification.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass

import numpy as np

from .numerics import (
    FeatureMap,
    _require_channel,
    bilinear_sample_many,
    tent_boundary_value,
    tent_weight_vector,
)

__all__ = [
    "DEFAULT_MIN_EXTENT",
    "Region",
    "RegionGradient",
    "region_weights",
    "region_average",
    "region_average_backward",
    "quadrature_oracle",
]

# Minimum rectangle extent along each axis; the area normalization divides by
# the extents, so arbitrarily thin regions are rejected at construction.
DEFAULT_MIN_EXTENT = 1e-3


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle in continuous pixel coordinates.

    ``(top, bottom)`` bound the y (row) axis and ``(left, right)`` the x
    (column) axis, with ``top < bottom`` and ``left < right``. Both extents
    must be at least ``min_extent`` (default :data:`DEFAULT_MIN_EXTENT`).
    """

    top: float
    bottom: float
    left: float
    right: float
    min_extent: InitVar[float] = DEFAULT_MIN_EXTENT

    def __post_init__(self, min_extent: float) -> None:
        for name in ("top", "bottom", "left", "right"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"region {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not min_extent > 0.0:
            raise ValueError(f"min_extent must be positive, got {min_extent}")
        if not (self.bottom - self.top >= min_extent):
            raise ValueError(
                f"region height {self.bottom - self.top} below minimum {min_extent}"
            )
        if not (self.right - self.left >= min_extent):
            raise ValueError(
                f"region width {self.right - self.left} below minimum {min_extent}"
            )

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.top, self.bottom, self.left, self.right)

    def shifted(self, dy: float, dx: float) -> "Region":
        return Region(self.top + dy, self.bottom + dy, self.left + dx, self.right + dx)


@dataclass(frozen=True)
class RegionGradient:
    """Partial derivatives of a region average w.r.t. its four boundaries."""

    d_top: float
    d_bottom: float
    d_left: float
    d_right: float

    def __post_init__(self) -> None:
        for name in ("d_top", "d_bottom", "d_left", "d_right"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_top, self.d_bottom, self.d_left, self.d_right)


def region_weights(
    region: Region, height: int, width: int
) -> tuple[int, np.ndarray, int, np.ndarray]:
    """Separable integration weights of a region over an ``height x width`` grid.

    Returns ``(row_start, row_weights, col_start, col_weights)``; the exact
    unnormalized integral is ``row_weights @ sub @ col_weights`` over the
    corresponding subarray. Either weight vector may be empty when the
    region misses the domain.
    """
    row_start, row_w = tent_weight_vector(region.top, region.bottom, height)
    col_start, col_w = tent_weight_vector(region.left, region.right, width)
    return row_start, row_w, col_start, col_w


def region_average(fmap: FeatureMap, channel: int, region: Region) -> float:
    """Exact average of the bilinear surface over ``region``.

    Zero-padded outside the domain and normalized by the full geometric
    area, so regions hanging off the map average in the padding.
    """
    channel = _require_channel(fmap, channel)
    r0, wy, c0, wx = region_weights(region, fmap.height, fmap.width)
    if wy.size == 0 or wx.size == 0:
        return 0.0
    sub = fmap.data[channel, r0 : r0 + wy.size, c0 : c0 + wx.size]
    integral = wy @ sub @ wx
    return float(integral / region.area)


def _boundary_column_weights(u: float, size: int) -> list[tuple[int, float]]:
    """In-domain (index, tent value) pairs for the line at coordinate ``u``."""
    base = math.floor(u)
    pairs = []
    for idx in (base, base + 1):
        if 0 <= idx < size:
            w = tent_boundary_value(idx, u)
            if w > 0.0:
                pairs.append((idx, w))
    return pairs


def region_average_backward(
    fmap: FeatureMap, channel: int, region: Region, upstream: float
) -> tuple[dict[tuple[int, int], float], RegionGradient]:
    """Gradients of ``upstream * region_average`` w.r.t. inputs and boundaries.

    Returns ``(input_grads, boundary_grads)``. ``input_grads`` maps each
    touched pixel ``(row, col)`` to its weight; only pixels within one unit
    of the region carry weight. Boundary gradients combine the area-
    normalization term with the exact line integral of the surface along the
    moving boundary; boundaries that gain area as they grow (bottom, right)
    take the opposite sign from those that lose it (top, left).
    """
    channel = _require_channel(fmap, channel)
    if not math.isfinite(upstream):
        raise ValueError(f"upstream must be finite, got {upstream}")
    height, width = fmap.height, fmap.width
    r0, wy, c0, wx = region_weights(region, height, width)
    area = region.area
    data = fmap.data[channel]

    input_grads: dict[tuple[int, int], float] = {}
    if wy.size and wx.size:
        sub = data[r0 : r0 + wy.size, c0 : c0 + wx.size]
        integral = float(wy @ sub @ wx)
        scale = upstream / area
        for i in range(wy.size):
            for j in range(wx.size):
                input_grads[(r0 + i, c0 + j)] = scale * wy[i] * wx[j]
    else:
        integral = 0.0
    avg = integral / area

    def line_along_rows(u: float) -> float:
        # integral over [top, bottom] of the surface on the vertical line x=u
        if wy.size == 0:
            return 0.0
        total = 0.0
        for idx, gw in _boundary_column_weights(u, width):
            total += gw * float(wy @ data[r0 : r0 + wy.size, idx])
        return total

    def line_along_cols(v: float) -> float:
        # integral over [left, right] of the surface on the horizontal line y=v
        if wx.size == 0:
            return 0.0
        total = 0.0
        for idx, gw in _boundary_column_weights(v, height):
            total += gw * float(data[idx, c0 : c0 + wx.size] @ wx)
        return total

    inv_w = 1.0 / region.width
    inv_h = 1.0 / region.height
    d_left = upstream * (avg * inv_w - line_along_rows(region.left) / area)
    d_right = upstream * (line_along_rows(region.right) / area - avg * inv_w)
    d_top = upstream * (avg * inv_h - line_along_cols(region.top) / area)
    d_bottom = upstream * (line_along_cols(region.bottom) / area - avg * inv_h)
    return input_grads, RegionGradient(d_top, d_bottom, d_left, d_right)


def quadrature_oracle(fmap: FeatureMap, channel: int, region: Region, n: int) -> float:
    """Midpoint-rule approximation of the region average on an ``n x n`` grid.

    Independent of the closed form: it evaluates the bilinear surface
    pointwise (two lerp stages on a separable midpoint grid) and sums,
    converging to :func:`region_average` as ``n`` grows. Kept deliberately
    free of antiderivative shortcuts so it can serve as a verification
    oracle. The double sum is accumulated column-sums-first, which is an
    exact reorganization of the same midpoint sum.
    """
    channel = _require_channel(fmap, channel)
    n = int(n)
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    height, width = fmap.height, fmap.width
    plane = fmap.data[channel]
    xs = region.left + (np.arange(n) + 0.5) * (region.width / n)
    ys = region.top + (np.arange(n) + 0.5) * (region.height / n)

    # stage one: each stored row interpolated along x at every midpoint
    xs_c = np.clip(xs, -2.0, width + 1.0)
    x0 = np.floor(xs_c)
    fx = xs_c - x0
    ix = x0.astype(np.int64)
    valid_lo = (ix >= 0) & (ix < width)
    valid_hi = (ix + 1 >= 0) & (ix + 1 < width)
    ix_lo = np.clip(ix, 0, width - 1)
    ix_hi = np.clip(ix + 1, 0, width - 1)
    rows_at_x = np.zeros((height + 2, n))
    for q in range(height):
        row = plane[q]
        v_lo = np.where(valid_lo, row[ix_lo], 0.0)
        v_hi = np.where(valid_hi, row[ix_hi], 0.0)
        rows_at_x[q + 1] = (1.0 - fx) * v_lo + fx * v_hi

    # stage two: lerp between (zero-padded) row sums along y
    row_sums = rows_at_x.sum(axis=1)
    ys_c = np.clip(ys, -2.0, height + 1.0)
    y0 = np.floor(ys_c)
    fy = ys_c - y0
    iy = y0.astype(np.int64)
    idx_lo = np.clip(iy, -1, height) + 1
    idx_hi = np.clip(iy + 1, -1, height) + 1
    total = float(np.sum((1.0 - fy) * row_sums[idx_lo] + fy * row_sums[idx_hi]))
    return total / (n * n)
