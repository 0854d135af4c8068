"""Receptive-field footprints, complexity estimates, and the operator taxonomy.

The footprint of an operator at one output position is the set of input
pixels with analytically nonzero contribution weight. Membership is decided
from tent supports and exact closed-form weights, never by thresholding
float magnitudes: a pixel sitting exactly on a support boundary has weight
exactly zero and is excluded. A perturbation probe (running the real forward
pass on unit-pixel inputs) is provided to cross-check the analytic sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import FeatureMap, tent_boundary_value
from .operators import (
    ConvWeights,
    KernelGrid,
    RadConvParams,
    dcn_forward,
    radconv_forward,
    standard_conv_forward,
)
from .region import Region, region_weights

__all__ = [
    "FOOTPRINT_OPERATORS",
    "TAXONOMY_OPERATORS",
    "FootprintReport",
    "TaxonomyRow",
    "ComplexityEstimate",
    "footprint",
    "footprint_weights",
    "probe_footprint",
    "complexity_estimate",
    "taxonomy_table",
    "render_footprint_svg",
]

FOOTPRINT_OPERATORS = ("standard", "conv1x1", "dcnv1", "dcnv2", "dcnv3", "dcnv4", "radconv")
TAXONOMY_OPERATORS = (
    "global_attention",
    "local_attention",
    "large_kernel_conv",
    "conv_1x1",
    "deformable_conv",
    "radconv",
)

WINDOW_CLASSES = ("bounded", "adaptively-bounded", "unbounded")
AGGREGATION_KINDS = ("fixed", "adaptive")


@dataclass(frozen=True)
class FootprintReport:
    """Pixels contributing to one output position, with count and bounding box."""

    operator: str
    position: tuple[int, int]
    pixels: frozenset
    count: int
    bounding_box: tuple[int, int, int, int] | None

    def __post_init__(self) -> None:
        if self.count != len(self.pixels):
            raise ValueError("count must equal the number of contributing pixels")

    @classmethod
    def from_weights(cls, operator: str, position, weights: dict) -> "FootprintReport":
        pixels = frozenset(q for q, w in weights.items() if w != 0.0)
        if pixels:
            rows = [r for r, _ in pixels]
            cols = [c for _, c in pixels]
            bbox = (min(rows), min(cols), max(rows), max(cols))
        else:
            bbox = None
        return cls(operator, (int(position[0]), int(position[1])), pixels, len(pixels), bbox)


@dataclass(frozen=True)
class TaxonomyRow:
    operator: str
    window_size_class: str
    long_range: bool
    aggregation: str
    complexity: str

    def __post_init__(self) -> None:
        if self.window_size_class not in WINDOW_CLASSES:
            raise ValueError(f"unknown window class {self.window_size_class!r}")
        if self.aggregation not in AGGREGATION_KINDS:
            raise ValueError(f"unknown aggregation kind {self.aggregation!r}")


@dataclass(frozen=True)
class ComplexityEstimate:
    operator: str
    expression: str
    count: float


def _modulation_multipliers(raw, groups: int, k: int, variant: str) -> np.ndarray:
    if variant == "v1":
        if raw is not None:
            raise ValueError("variant v1 takes no modulation")
        return np.ones((groups, k))
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (groups, k):
        raise ValueError(f"modulation must have shape {(groups, k)}, got {raw.shape}")
    if variant == "v2":
        return 1.0 / (1.0 + np.exp(-raw))
    if variant == "v3":
        shifted = raw - raw.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    return raw.copy()  # v4


def _accumulate_point(weights: dict, shape, px: float, py: float, scale: float) -> None:
    height, width = shape
    x0 = math.floor(px)
    y0 = math.floor(py)
    for iy in (y0, y0 + 1):
        if not 0 <= iy < height:
            continue
        wy = tent_boundary_value(iy, py)
        if wy == 0.0:
            continue
        for ix in (x0, x0 + 1):
            if not 0 <= ix < width:
                continue
            wx = tent_boundary_value(ix, px)
            if wx == 0.0:
                continue
            key = (iy, ix)
            weights[key] = weights.get(key, 0.0) + scale * wy * wx


def footprint_weights(
    operator: str,
    shape_hw: tuple[int, int],
    position: tuple[int, int],
    *,
    grid: KernelGrid | None = None,
    spatial_weights=None,
    point_offsets=None,
    raw_modulation=None,
    regions=None,
    region_modulation=None,
    group_weights=None,
) -> dict:
    """Exact contribution weight of every input pixel at one output position.

    ``point_offsets`` is a ``(G, K, 2)`` array of concrete (dx, dy)
    displacements for the point-sampling variants; ``regions`` is a flat
    (group-major) list of ``G*K`` :class:`Region` for the region operator.
    Weights and modulation default to ones. Pixels with weight exactly zero
    are omitted.
    """
    if operator not in FOOTPRINT_OPERATORS:
        raise ValueError(f"unknown operator {operator!r}")
    height, width = int(shape_hw[0]), int(shape_hw[1])
    oy, ox = int(position[0]), int(position[1])
    if not (0 <= oy < height and 0 <= ox < width):
        raise ValueError(f"position {position} outside {shape_hw} map")
    weights: dict = {}

    if operator in ("standard", "conv1x1"):
        grid = grid if grid is not None else KernelGrid.square(1 if operator == "conv1x1" else 3)
        if operator == "conv1x1" and grid.k != 1:
            raise ValueError("conv1x1 uses a single-element grid")
        w = np.ones(grid.k) if spatial_weights is None else np.asarray(spatial_weights, float)
        if w.shape != (grid.k,):
            raise ValueError(f"expected {grid.k} spatial weights")
        for idx, (dx, dy) in enumerate(grid.offsets):
            r, c = oy + dy, ox + dx
            if 0 <= r < height and 0 <= c < width and w[idx] != 0.0:
                weights[(r, c)] = weights.get((r, c), 0.0) + float(w[idx])
        return weights

    if operator.startswith("dcn"):
        variant = operator[3:]
        grid = grid if grid is not None else KernelGrid.square(3)
        off = np.asarray(point_offsets, dtype=np.float64)
        if off.ndim != 3 or off.shape[1:] != (grid.k, 2):
            raise ValueError(
                f"point offsets must have shape (G, {grid.k}, 2), got {off.shape}"
            )
        groups = off.shape[0]
        mod = _modulation_multipliers(raw_modulation, groups, grid.k, variant)
        if variant in ("v1", "v2"):
            if groups != 1:
                raise ValueError(f"variant {variant} is ungrouped")
            scale_gk = np.ones(grid.k) if spatial_weights is None else np.asarray(spatial_weights, float)
            scales = mod * scale_gk[None, :]
        else:
            gw = np.ones(groups) if group_weights is None else np.asarray(group_weights, float)
            scales = mod * gw[:, None]
        for g in range(groups):
            for k, (dx, dy) in enumerate(grid.offsets):
                s = float(scales[g, k])
                if s == 0.0:
                    continue
                px = ox + dx + float(off[g, k, 0])
                py = oy + dy + float(off[g, k, 1])
                _accumulate_point(weights, (height, width), px, py, s)
        return weights

    # region operator
    if regions is None:
        raise ValueError("region footprints require concrete regions")
    regions = list(regions)
    count = len(regions)
    mods = np.ones(count) if region_modulation is None else np.asarray(region_modulation, float).reshape(count)
    gws = np.ones(count) if group_weights is None else np.asarray(group_weights, float).reshape(count)
    for region, m, gw in zip(regions, mods, gws):
        s = float(m * gw)
        if s == 0.0:
            continue
        r0, wy, c0, wx = region_weights(region, height, width)
        inv_area = s / region.area
        for i in range(wy.size):
            for j in range(wx.size):
                key = (r0 + i, c0 + j)
                weights[key] = weights.get(key, 0.0) + inv_area * wy[i] * wx[j]
    return weights


def footprint(operator: str, shape_hw, position, **config) -> FootprintReport:
    """Analytic footprint report of a fully instantiated operator
    configuration; see :func:`footprint_weights` for the configuration keys."""
    weights = footprint_weights(operator, shape_hw, position, **config)
    return FootprintReport.from_weights(operator, position, weights)


def _region_to_raw(regions, centers, transform: str) -> np.ndarray:
    """Invert the boundary decode for regions that contain their centers."""
    raw = np.zeros((len(regions), 4))
    for idx, (region, (cy, cx)) in enumerate(zip(regions, centers)):
        deltas = (cy - region.top, region.bottom - cy, cx - region.left, region.right - cx)
        for comp, d in enumerate(deltas):
            if d <= 0.0:
                raise ValueError("probe regions must strictly contain their centers")
            if transform == "exponential":
                raw[idx, comp] = math.log(d)
            else:
                # inverse softplus
                raw[idx, comp] = d + math.log(-math.expm1(-d)) if d < 30 else d
    return raw


def probe_footprint(
    operator: str,
    shape_hw: tuple[int, int],
    position: tuple[int, int],
    *,
    grid: KernelGrid | None = None,
    spatial_weights=None,
    point_offsets=None,
    raw_modulation=None,
    regions=None,
    region_modulation=None,
    group_weights=None,
) -> frozenset:
    """Empirical footprint: run the real forward pass on unit-pixel inputs
    and collect every pixel whose perturbation changes the output position."""
    if operator not in FOOTPRINT_OPERATORS:
        raise ValueError(f"unknown operator {operator!r}")
    height, width = int(shape_hw[0]), int(shape_hw[1])
    oy, ox = int(position[0]), int(position[1])

    if operator in ("standard", "conv1x1"):
        grid = grid if grid is not None else KernelGrid.square(1 if operator == "conv1x1" else 3)
        w = ConvWeights(spatial=np.ones(grid.k) if spatial_weights is None else spatial_weights)

        def forward(x):
            return standard_conv_forward(x, w, grid)

        channels = 1
    elif operator.startswith("dcn"):
        variant = operator[3:]
        grid = grid if grid is not None else KernelGrid.square(3)
        off = np.asarray(point_offsets, dtype=np.float64)
        groups = off.shape[0]
        off_field = np.zeros((groups * 2 * grid.k, height, width))
        off_field[:] = off.reshape(groups * grid.k * 2)[:, None, None]
        if variant == "v1":
            mod_field = None
        else:
            raw = np.asarray(raw_modulation, dtype=np.float64).reshape(groups * grid.k)
            mod_field = np.broadcast_to(raw[:, None, None], (groups * grid.k, height, width)).copy()
        if variant in ("v1", "v2"):
            w = ConvWeights(spatial=np.ones(grid.k) if spatial_weights is None else spatial_weights)
        else:
            gw = np.ones(groups) if group_weights is None else np.asarray(group_weights, float)
            w = ConvWeights(group_proj=gw.reshape(groups, 1, 1))

        def forward(x):
            return dcn_forward(x, w, grid, off_field, mod_field, variant=variant)

        channels = groups
    else:
        if regions is None or grid is None:
            raise ValueError("region probes require a grid and concrete regions")
        regions = list(regions)
        groups = len(regions) // grid.k
        if groups * grid.k != len(regions):
            raise ValueError("region count must be G*K")
        centers = [(dy + oy, dx + ox) for _ in range(groups) for dx, dy in grid.offsets]
        raw = _region_to_raw(regions, centers, "exponential")
        # constant fields reproduce the given regions at `position`
        off_field = np.zeros((groups * 4 * grid.k, height, width))
        off_field[:] = raw.reshape(-1)[:, None, None]
        mods = np.ones(len(regions)) if region_modulation is None else np.asarray(region_modulation, float)
        mod_field = np.broadcast_to(
            mods.reshape(-1)[:, None, None], (groups * grid.k, height, width)
        ).copy()
        gw = np.ones(groups) if group_weights is None else np.asarray(group_weights, float).reshape(groups)
        w = ConvWeights(group_proj=gw.reshape(groups, 1, 1))
        min_extent = min(min(r.height, r.width) for r in regions)
        params = RadConvParams(
            kernel=grid,
            groups=groups,
            offset_transform="exponential",
            modulation_mode="none",
            epsilon_min=min(1e-3, 0.5 * min_extent),
            stride=1,
        )

        def forward(x):
            return radconv_forward(x, w, off_field, mod_field, params)

        channels = groups

    hits = set()
    base = np.zeros((channels, height, width))
    for r in range(height):
        for c in range(width):
            base[:, r, c] = 1.0
            out = forward(FeatureMap(base.copy()))
            if np.any(out.data[:, oy, ox] != 0.0):
                hits.add((r, c))
            base[:, r, c] = 0.0
    return frozenset(hits)


def complexity_estimate(
    operator: str,
    *,
    positions: int,
    kernel_size: int | None = None,
    region_side: float | None = None,
    feature_dim: int | None = None,
    window_side: int | None = None,
) -> ComplexityEstimate:
    """Leading-term operation count for one operator at the given sizes.

    Attention rows are evaluated from their closed-form cost expressions
    only; nothing in this package implements attention.
    """

    def _need(value, name):
        if value is None or value <= 0:
            raise ValueError(f"{operator} complexity needs positive {name}")
        return value

    n = _need(positions, "positions")
    if operator == "radconv":
        k = _need(kernel_size, "kernel_size")
        r = _need(region_side, "region_side")
        return ComplexityEstimate(operator, "K*N*R^2", float(k) * n * r * r)
    if operator == "global_attention":
        d = _need(feature_dim, "feature_dim")
        return ComplexityEstimate(operator, "N^2*d", float(n) * n * d)
    if operator == "local_attention":
        d = _need(feature_dim, "feature_dim")
        wside = _need(window_side, "window_side")
        return ComplexityEstimate(operator, "N*w^2*d", float(n) * wside * wside * d)
    if operator == "deformable_conv":
        k = _need(kernel_size, "kernel_size")
        return ComplexityEstimate(operator, "4*K*N", 4.0 * k * n)
    if operator in ("standard_conv", "large_kernel_conv"):
        k = _need(kernel_size, "kernel_size")
        return ComplexityEstimate(operator, "K*N", float(k) * n)
    if operator == "conv_1x1":
        return ComplexityEstimate(operator, "N", float(n))
    raise ValueError(f"unknown operator {operator!r}")


def taxonomy_table() -> list[TaxonomyRow]:
    """One row per operator family: window-size class, long-range reach,
    aggregation style, and leading cost term."""
    return [
        TaxonomyRow("global_attention", "unbounded", True, "adaptive", "N^2*d"),
        TaxonomyRow("local_attention", "bounded", False, "adaptive", "N*w^2*d"),
        TaxonomyRow("large_kernel_conv", "bounded", False, "fixed", "K*N"),
        TaxonomyRow("conv_1x1", "bounded", False, "fixed", "N"),
        TaxonomyRow("deformable_conv", "bounded", True, "adaptive", "4*K*N"),
        TaxonomyRow("radconv", "adaptively-bounded", True, "adaptive", "K*N*R^2"),
    ]


def render_footprint_svg(
    shape_hw: tuple[int, int],
    weights: dict,
    regions=(),
    cell: int = 24,
) -> str:
    """SVG rendering: one unit square per pixel, opacity proportional to
    weight magnitude, integration rectangles as stroked outlines."""
    height, width = int(shape_hw[0]), int(shape_hw[1])
    margin = 1.5  # pixel units around the grid
    span_x = (width - 1) + 2 * margin + 1
    span_y = (height - 1) + 2 * margin + 1

    def sx(x: float) -> float:
        return (x + margin + 0.5) * cell

    def sy(y: float) -> float:
        return (y + margin + 0.5) * cell

    wmax = max((abs(w) for w in weights.values()), default=1.0) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{span_x * cell:.0f}" '
        f'height="{span_y * cell:.0f}" viewBox="0 0 {span_x * cell:.0f} {span_y * cell:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for r in range(height):
        for c in range(width):
            w = weights.get((r, c), 0.0)
            opacity = min(1.0, abs(w) / wmax)
            parts.append(
                f'<rect x="{sx(c - 0.5):.2f}" y="{sy(r - 0.5):.2f}" '
                f'width="{cell}" height="{cell}" fill="#1f77b4" '
                f'fill-opacity="{opacity:.4f}" stroke="#cccccc" stroke-width="1"/>'
            )
    for region in regions:
        parts.append(
            f'<rect x="{sx(region.left):.2f}" y="{sy(region.top):.2f}" '
            f'width="{region.width * cell:.2f}" height="{region.height * cell:.2f}" '
            f'fill="none" stroke="#d62728" stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
