"""Dominant invariant subspaces by shifted Oja flows, with model reduction and low-rank control."""

from .errors import *  # noqa: F401,F403
from .flow import (
    FlowConfig,
    FlowTrace,
    default_step,
    integrate_flow,
    invariance_residual,
    oja_rhs,
    projector_distance,
    sample_stiefel_uniform,
    stabilizing_shift,
    stiefel_residual,
)
from .linalg import (
    OrderedSpectrum,
    StiefelPoint,
    eig_ordered,
    matrix_exponential,
    orthonormal_complement,
    qr_orthonormalize,
    spectral_abscissa,
    svd_small,
)
from .lowrank import (
    GainDesign,
    care_small,
    closed_loop_assemble,
    design_feedback,
    design_observer,
    feedback_design_from_gain,
    observer_design_from_gain,
    spectrum_match_error,
)
from .modred import (
    FrequencyResponse,
    LtiSystem,
    ReducedModel,
    SubspacePair,
    bode_grid,
    bridge_terms,
    ctrl_preserving_model,
    dual_pair,
    error_decomposition,
    eval_transfer,
    minimal_reduced_model,
    obs_preserving_model,
    project_system,
    reduced_gramian,
    slow_fast_reduce,
)
from .riccati import (
    ProjectorState,
    integrate_riccati,
    projector_from_linear_flow,
    riccati_closed_form,
    riccati_rhs,
)
from .subspace import (
    BasinCheck,
    GapReport,
    SubspaceResult,
    check_attraction_basin,
    dominant_subspace,
    expand_subspace,
    gap_report,
    oracle_dominant_subspace,
    reduce_subspace_recursive,
    reduce_subspace_schur,
    svd_extract,
)

__version__ = "0.1.0"
