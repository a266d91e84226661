"""Shape abstraction as an autoregressive sequence of 3D primitives."""
from .estimator import PrimitiveAssembler
from .exceptions import PrimAssemblyError
from .geometry import (
    CUBOID,
    ELLIPSOID,
    ELLIPTICAL_CYLINDER,
    Assembly,
    PointCloud,
    Primitive,
    assembly_surface,
    canonicalize,
    symmetry_group,
    symmetry_set,
)
from .inference import SamplingConfig, generate
from .metrics import EvalReport, evaluate
from .model import ModelConfig, PrimitiveTransformer
from .tokenization import Discretizer, decode_sequence, encode_assembly
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Assembly",
    "CUBOID",
    "Discretizer",
    "ELLIPSOID",
    "ELLIPTICAL_CYLINDER",
    "EvalReport",
    "ModelConfig",
    "PointCloud",
    "PrimAssemblyError",
    "Primitive",
    "PrimitiveAssembler",
    "PrimitiveTransformer",
    "SamplingConfig",
    "TrainConfig",
    "assembly_surface",
    "canonicalize",
    "decode_sequence",
    "encode_assembly",
    "evaluate",
    "generate",
    "symmetry_group",
    "symmetry_set",
    "train",
]
