"""Quantum state matching: gate synthesis, protocol simulation and benchmarking."""

__version__ = "0.1.0"

from .state_space import (
    INFINITY,
    BlochState,
    ComplexPoint,
    Epsilon,
    apply_map,
    ideal_state_after,
    iterate_map,
    lift_to_sphere,
    project_to_plane,
    success_probability,
)
from .unitary_builder import action_on_pair, build_u_epsilon
from .kak_decomposer import (
    GateSequence,
    KakResult,
    decompose,
    synthesize,
    verify_decomposition,
)
from .simulator import (
    CountsTable,
    NoiseSpec,
    build_protocol_circuit,
    estimate_theta1,
    post_select,
    run_density,
    run_statevector,
)
from .stats_harness import ExperimentConfig, StatRecord, SweepResult, run_sweep
from .mitigation import ConfusionMatrix, build_confusion, mitigate

__all__ = [
    "__version__",
    "INFINITY",
    "BlochState",
    "ComplexPoint",
    "Epsilon",
    "apply_map",
    "ideal_state_after",
    "iterate_map",
    "lift_to_sphere",
    "project_to_plane",
    "success_probability",
    "action_on_pair",
    "build_u_epsilon",
    "GateSequence",
    "KakResult",
    "decompose",
    "synthesize",
    "verify_decomposition",
    "CountsTable",
    "NoiseSpec",
    "build_protocol_circuit",
    "estimate_theta1",
    "post_select",
    "run_density",
    "run_statevector",
    "ExperimentConfig",
    "StatRecord",
    "SweepResult",
    "run_sweep",
    "ConfusionMatrix",
    "build_confusion",
    "mitigate",
]
