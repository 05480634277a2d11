"""Spectral bundle methods for standard-form semidefinite programs."""

from .bundle_model import (
    BundleModel,
    ProbeReport,
    eval_model_dual,
    eval_model_primal,
    init_model,
    model_invariant_probe,
    update_model,
)
from .errors import (
    DegenerateConversion,
    InvalidInput,
    RankDeficient,
    SpectralBundleError,
    SubproblemStall,
    UnsupportedFormat,
)
from .generators import GeneratedInstance, Graph, gen_random_sdp, maxcut_sdp, random_graph, read_graph
from .penalty import (
    PenaltyConfig,
    PenaltySource,
    Side,
    eval_dual_penalized,
    eval_primal_penalized,
    maxcut_rho_dual,
    maxcut_rho_primal,
    rho_from_known,
    sos_sphere_rho,
)
from .problem import (
    KnownSolution,
    SdpProblem,
    ValidationReport,
    convert_dual_to_primal,
    convert_primal_to_dual,
    read_json,
    read_sdpa,
    validate,
    write_json,
)
from .solver import (
    IterRecord,
    SolveReport,
    SolverConfig,
    Status,
    Step,
    adapt_alpha,
    descent_test,
    sbmd_solve,
    sbmp_solve,
    suboptimality,
)
from .subqp import (
    SubQp,
    SubqpSolution,
    build_sbmd_subqp,
    build_sbmp_subqp,
    recover_primal_candidate,
    recover_y,
    solve_r1,
    solve_subqp,
)
from .symkernel import EigenDecomp, apply_A, apply_At, eig_sym, orth, top_eigvecs

__version__ = "0.1.0"
