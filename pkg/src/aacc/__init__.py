"""Anti-bullying adaptive cruise control.

Online identification of a cut-in vehicle's driving style, Stackelberg
follower reaction estimation and game-based MPC for the ego vehicle, plus a
closed-loop cut-in simulator with a yield-only ACC baseline.
"""

from aacc.dynamics import (
    CvControl,
    EvControl,
    LinearDynamics,
    SystemState,
    VehicleGeometry,
    continuous_matrices,
    discretize,
    linearize,
    step_linear,
    step_nonlinear,
)
from aacc.ioc import IocState, OnlineIdentifier, StyleParams, TrajectorySample
from aacc.cv_reaction import CvDesired, ReactionLaw, RiccatiState, backward_pass, estimate_reaction
from aacc.gmpc import EvObjective, GmpcConfig, PlanResult, QpProblem, plan

__version__ = "0.1.0"

__all__ = [
    "CvControl",
    "CvDesired",
    "EvControl",
    "EvObjective",
    "GmpcConfig",
    "IocState",
    "LinearDynamics",
    "OnlineIdentifier",
    "PlanResult",
    "QpProblem",
    "ReactionLaw",
    "RiccatiState",
    "StyleParams",
    "SystemState",
    "TrajectorySample",
    "VehicleGeometry",
    "backward_pass",
    "continuous_matrices",
    "discretize",
    "estimate_reaction",
    "linearize",
    "plan",
    "step_linear",
    "step_nonlinear",
]
