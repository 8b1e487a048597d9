"""Sound output bounds for piecewise-linear neural networks.

Interval propagation, backward linear bounds with per-neuron ReLU
relaxations, and projected-gradient slope tightening, over a small ONNX
subset with VNN-LIB input/output specifications.
"""

from .alpha import AlphaResult, AlphaStore, OptimizerConfig, run_alpha_crown
from .engine import (
    AnalysisMode,
    CrownResult,
    Deadline,
    LinearBoundsState,
    ReluRelaxation,
    SpecMatrix,
    compute_ibp_bounds,
    concretize,
    preprocess_C,
    prepare_analysis,
    relu_relaxation,
    run_crown,
    run_ibp,
)
from .errors import (
    AnalysisTimeout,
    BoundPropError,
    GraphError,
    OnnxImportError,
    ShapeError,
    UnsupportedOperatorError,
    VnnLibError,
)
from .graph import NetworkGraph, NodeKind
from .model import BoundModel
from .onnx_import import import_model, parse_onnx
from .tensors import BoundedTensor, make_bounded_tensor, point_box
from .vnnlib import (
    OutputConstraintSet,
    load_specification,
    parse_specification,
    serialize_specification,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaResult",
    "AlphaStore",
    "AnalysisMode",
    "AnalysisTimeout",
    "BoundModel",
    "BoundPropError",
    "BoundedTensor",
    "CrownResult",
    "Deadline",
    "GraphError",
    "LinearBoundsState",
    "NetworkGraph",
    "NodeKind",
    "OnnxImportError",
    "OptimizerConfig",
    "OutputConstraintSet",
    "ReluRelaxation",
    "ShapeError",
    "SpecMatrix",
    "UnsupportedOperatorError",
    "VnnLibError",
    "compute_ibp_bounds",
    "concretize",
    "import_model",
    "load_specification",
    "make_bounded_tensor",
    "parse_onnx",
    "parse_specification",
    "point_box",
    "preprocess_C",
    "prepare_analysis",
    "relu_relaxation",
    "run_alpha_crown",
    "run_crown",
    "run_ibp",
    "serialize_specification",
    "__version__",
]
