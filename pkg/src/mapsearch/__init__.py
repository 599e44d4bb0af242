"""Gradient-based accelerator mapping search over a learned cost surrogate."""
from .accel import PRESETS, AcceleratorConfig, preset
from .costmodel import (
    EDP,
    CostVector,
    InvalidMappingError,
    Objective,
    algorithmic_minimum,
    evaluate,
    objective_value,
)
from .mapspace import (
    EmptyMapSpaceError,
    Mapping,
    MapSpaceCtx,
    decode,
    encode,
    get_mapping,
    get_projection,
    is_member,
    space_size,
)
from .workload import TARGET_PROBLEMS, AlgorithmKind, Problem, golden_execute, required_flops, tensor_footprint

__version__ = "0.1.0"
