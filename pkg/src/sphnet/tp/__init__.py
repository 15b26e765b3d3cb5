"""Weighted, path-selectable Clebsch-Gordan tensor products."""
from .plan import (
    ExpansionPlan,
    PathSpec,
    PlanError,
    TensorProductPlan,
    build_expansion_plan,
    build_plan,
    dense_cost,
    enumerated_cost,
    full_plan,
)
from .ops import ContractError, sph_linear, tensor_expansion, tp_backward, tp_forward

__all__ = [
    "ContractError", "ExpansionPlan", "PathSpec", "PlanError", "TensorProductPlan",
    "build_expansion_plan", "build_plan", "dense_cost", "enumerated_cost", "full_plan",
    "sph_linear", "tensor_expansion", "tp_backward", "tp_forward",
]
