"""Control layers: RTO, MPC with optional GP back-off, ILC, imitation learning and IMC."""

from .ilc import IlcController, build_lifted, contraction_factor, gradient_gain, ilc_update, inverse_gain
from .imc import ImcState, ImcStepInfo, imc_step
from .imitation import (
    ImitationPolicy,
    ValidationCertificate,
    hoeffding_delta,
    imitation_train,
    imitation_validate,
    sample_states,
)
from .mpc import MpcProblem, MpcSolution, backoff_bounds, backoff_mpc_feedback, mpc_feedback, mpc_feedback_multistart
from .rto import RtoProblem, RtoSolution, solve_rto

__all__ = [
    "IlcController", "build_lifted", "contraction_factor", "gradient_gain", "ilc_update", "inverse_gain",
    "ImcState", "ImcStepInfo", "imc_step",
    "ImitationPolicy", "ValidationCertificate", "hoeffding_delta", "imitation_train", "imitation_validate",
    "sample_states",
    "MpcProblem", "MpcSolution", "backoff_bounds", "backoff_mpc_feedback", "mpc_feedback", "mpc_feedback_multistart",
    "RtoProblem", "RtoSolution", "solve_rto",
]
