"""topoforge: SIMP topology optimization, truss analysis and dataset tooling."""

__version__ = "0.1.0"

from .fem import (
    DensityField,
    DesignDomain,
    ElementStiffness,
    LinearSystem,
    ParameterError,
    SingularSystemError,
    assemble_global,
    compliance,
    element_stiffness,
    solve_equilibrium,
)
from .scenarios import (
    ConditionTensor,
    Load,
    SamplerParams,
    Scenario,
    ScenarioError,
    decode_condition_tensor,
    encode_condition_tensor,
    sample_scenario,
    scenario_to_system,
)
from .simp import (
    DensityBounds,
    OptimizationTrace,
    SimpConfig,
    filter_sensitivities,
    oc_update,
    optimize,
    sensitivities,
)

__all__ = [
    "DensityField",
    "DesignDomain",
    "ElementStiffness",
    "LinearSystem",
    "ParameterError",
    "SingularSystemError",
    "assemble_global",
    "compliance",
    "element_stiffness",
    "solve_equilibrium",
    "ConditionTensor",
    "Load",
    "SamplerParams",
    "Scenario",
    "ScenarioError",
    "decode_condition_tensor",
    "encode_condition_tensor",
    "sample_scenario",
    "scenario_to_system",
    "DensityBounds",
    "OptimizationTrace",
    "SimpConfig",
    "filter_sensitivities",
    "oc_update",
    "optimize",
    "sensitivities",
]
