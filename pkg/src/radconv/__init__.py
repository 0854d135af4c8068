"""Exact rectangular region integration for adaptive convolution operators.

The core primitive is the closed-form average of a bilinearly interpolated
feature plane over an axis-aligned rectangle, with analytic gradients for
both the input samples and the four rectangle boundaries. On top of it sit
the plain/deformable convolution family and a region convolution whose
kernel elements each integrate a learnable rectangle, plus receptive-field
analysis and verification harnesses.
"""

from .analyzer import (
    ComplexityEstimate,
    FootprintReport,
    TaxonomyRow,
    complexity_estimate,
    footprint,
    footprint_weights,
    probe_footprint,
    render_footprint_svg,
    taxonomy_table,
)
from .harness import (
    GradCheckReport,
    SyntheticTask,
    TrainConfig,
    TrainResult,
    build_instance,
    finite_diff_gradcheck,
    make_region_task,
    train_toy,
)
from .numerics import (
    FeatureMap,
    bilinear_sample,
    bilinear_sample_many,
    tent_boundary_value,
    tent_integral,
    tent_weight_vector,
)
from .operators import (
    ConvWeights,
    KernelGrid,
    RadConvParams,
    decode_regions,
    dcn_forward,
    predictor_conv,
    radconv_backward,
    radconv_forward,
    standard_conv_forward,
)
from .region import (
    Region,
    RegionGradient,
    quadrature_oracle,
    region_average,
    region_average_backward,
    region_weights,
)
from .rng import PortableRng
from .tensorio import load_radt, save_radt

__version__ = "0.1.0"

__all__ = [
    "ComplexityEstimate",
    "ConvWeights",
    "FeatureMap",
    "FootprintReport",
    "GradCheckReport",
    "KernelGrid",
    "PortableRng",
    "RadConvParams",
    "Region",
    "RegionGradient",
    "SyntheticTask",
    "TaxonomyRow",
    "TrainConfig",
    "TrainResult",
    "bilinear_sample",
    "bilinear_sample_many",
    "build_instance",
    "complexity_estimate",
    "decode_regions",
    "dcn_forward",
    "finite_diff_gradcheck",
    "footprint",
    "footprint_weights",
    "load_radt",
    "make_region_task",
    "predictor_conv",
    "probe_footprint",
    "quadrature_oracle",
    "radconv_backward",
    "radconv_forward",
    "region_average",
    "region_average_backward",
    "region_weights",
    "render_footprint_svg",
    "save_radt",
    "standard_conv_forward",
    "taxonomy_table",
    "tent_boundary_value",
    "tent_integral",
    "tent_weight_vector",
    "train_toy",
]
