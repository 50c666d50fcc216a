"""Safe navigation with time-varying soft-maximum barrier functions built from LiDAR scans."""

from .barrier import BarrierConfig, PerceptionBarrier, Scan, eval_barrier_jet, synthesize_barrier
from .composer import CompositeBarrier, PsiChain, eval_psi0_jet, eval_psi_chain
from .controller import (
    AssumptionViolation,
    ConfigurationError,
    ControlOutput,
    FilterConfig,
    compute_control,
    constraint_value,
    qp_oracle,
)
from .sim import (
    ConfigError,
    PreconditionError,
    ScenarioConfig,
    compute_metrics,
    load_scenario,
    monte_carlo,
    run_scenario,
)
from .smoothmath import ScalarJet2, SmoothstepSpec, smoothstep_jet, stable_softmax, stable_softmin
from .world import LidarSpec, World, load_world, min_clearance, ray_cast

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "BarrierConfig",
    "CompositeBarrier",
    "ConfigError",
    "ConfigurationError",
    "ControlOutput",
    "FilterConfig",
    "LidarSpec",
    "PerceptionBarrier",
    "PreconditionError",
    "PsiChain",
    "ScalarJet2",
    "Scan",
    "ScenarioConfig",
    "SmoothstepSpec",
    "World",
    "compute_control",
    "compute_metrics",
    "constraint_value",
    "eval_barrier_jet",
    "eval_psi0_jet",
    "eval_psi_chain",
    "load_scenario",
    "load_world",
    "min_clearance",
    "monte_carlo",
    "qp_oracle",
    "ray_cast",
    "run_scenario",
    "smoothstep_jet",
    "stable_softmax",
    "stable_softmin",
    "synthesize_barrier",
]
