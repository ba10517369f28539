"""casokit: curvature-aware saliency maps for small classifiers.

The package computes input-space perturbations that maximize a local
second-order model of the loss, with an L1 term for sparsity and an L2
trust region. CAFO uses the gradient alone; CASO adds the softmax
curvature through Hessian-vector products. Gradient, SmoothGrad, and
integrated-gradients baselines, a FISTA solver, exact closed forms, a
per-class-count rank-one analysis, and a deterministic CLI round it out.
"""

from importlib import metadata

try:
    __version__ = metadata.version("casokit")
except metadata.PackageNotFoundError:
    __version__ = "0.0.0"

from .analysis import (
    AlignmentPoint,
    GapPoint,
    OracleConfig,
    OracleResult,
    RankOnePoint,
    RankOneSimConfig,
    alignment_curve,
    brute_force_group_feature,
    confidence_gap_study,
    l1_path_supports,
    make_planted_instance,
    simulate_rank_one,
    spearman_rho,
)
from .errors import (
    BudgetError,
    DimensionError,
    FormatError,
    KinkWarning,
    NonFiniteError,
)
from .hessian import (
    HessianHandle,
    RankOneApprox,
    SoftmaxCurvature,
    factor_curvature,
    hessian_eig,
    hvp_closed_form,
    hvp_finite_diff,
    largest_eigenvalue,
    rank_one_approx,
    rel_error,
    softmax_curvature,
)
from .interpret import (
    DEFAULT_LAMBDA1_GRID,
    METHODS,
    MethodRequest,
    SaliencyResult,
    SweepOutcome,
    cafo,
    caso,
    integrated_gradients,
    lambda1_sweep,
    run_request,
    smooth_cafo,
    smooth_caso,
    smoothgrad,
    sparsity_ratio,
    vanilla_gradient,
)
from .netcore import (
    Dataset,
    ForwardTrace,
    LayerSpec,
    LocalLinearization,
    Network,
    NetworkSpec,
    Sample,
    TrainConfig,
    TrainResult,
    forward,
    init_network,
    input_gradient,
    local_linearization,
    logit_gradient,
    make_blobs,
    sample_kink_safe,
    softmax,
    train_sgd,
)
from .saliency_io import (
    DisplayMap,
    dataset_load,
    dataset_load_raw,
    dataset_save_csv,
    dataset_save_raw,
    model_load,
    model_save,
    normalize_for_display,
    quantize_display,
    read_f32_tensor,
    read_f64_tensor,
    read_labels,
    read_pgm,
    write_csv_rows,
    write_eigenvectors_f64,
    write_f32_tensor,
    write_f64_tensor,
    write_labels,
    write_pgm,
    write_spectrum_csv,
    write_trace_csv,
)
from .solver import (
    ObjectiveSpec,
    SolveResult,
    SolverConfig,
    closed_form_cafo,
    closed_form_caso,
    fista_solve,
    prox_soft_threshold,
    select_lambda2,
    smooth_gradient,
)

__all__ = [
    "__version__",
    "AlignmentPoint",
    "BudgetError",
    "Dataset",
    "DEFAULT_LAMBDA1_GRID",
    "DimensionError",
    "DisplayMap",
    "FormatError",
    "ForwardTrace",
    "GapPoint",
    "HessianHandle",
    "KinkWarning",
    "LayerSpec",
    "LocalLinearization",
    "METHODS",
    "MethodRequest",
    "Network",
    "NetworkSpec",
    "NonFiniteError",
    "ObjectiveSpec",
    "OracleConfig",
    "OracleResult",
    "RankOneApprox",
    "RankOnePoint",
    "RankOneSimConfig",
    "SaliencyResult",
    "Sample",
    "SoftmaxCurvature",
    "SolveResult",
    "SolverConfig",
    "SweepOutcome",
    "TrainConfig",
    "TrainResult",
    "alignment_curve",
    "brute_force_group_feature",
    "cafo",
    "caso",
    "closed_form_cafo",
    "closed_form_caso",
    "confidence_gap_study",
    "dataset_load",
    "dataset_load_raw",
    "dataset_save_csv",
    "dataset_save_raw",
    "factor_curvature",
    "fista_solve",
    "forward",
    "hessian_eig",
    "hvp_closed_form",
    "hvp_finite_diff",
    "init_network",
    "input_gradient",
    "integrated_gradients",
    "l1_path_supports",
    "lambda1_sweep",
    "largest_eigenvalue",
    "local_linearization",
    "logit_gradient",
    "make_blobs",
    "make_planted_instance",
    "model_load",
    "model_save",
    "normalize_for_display",
    "prox_soft_threshold",
    "quantize_display",
    "rank_one_approx",
    "read_f32_tensor",
    "read_f64_tensor",
    "read_labels",
    "read_pgm",
    "rel_error",
    "run_request",
    "sample_kink_safe",
    "select_lambda2",
    "simulate_rank_one",
    "smooth_cafo",
    "smooth_caso",
    "smooth_gradient",
    "smoothgrad",
    "softmax",
    "softmax_curvature",
    "sparsity_ratio",
    "spearman_rho",
    "train_sgd",
    "vanilla_gradient",
    "write_csv_rows",
    "write_eigenvectors_f64",
    "write_f32_tensor",
    "write_f64_tensor",
    "write_labels",
    "write_pgm",
    "write_spectrum_csv",
    "write_trace_csv",
]
