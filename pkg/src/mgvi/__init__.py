"""Metric Gaussian variational inference with matrix-free operators.

Posterior approximation for standardized models: the covariance is the
inverse Fisher information metric, represented implicitly and sampled by
conjugate-gradient inversion; the mean follows natural-gradient descent
on a sampled KL divergence.  Ships the benchmark problems, baseline
methods (MAP, Fisher-Laplace, mean-field VI) and evaluation metrics.
"""

from .baselines import (
    MAPConfig,
    MeanFieldConfig,
    MeanFieldState,
    laplace_samples,
    map_estimate,
    meanfield_samples,
    meanfield_vi,
)
from .inference import (
    ApproximatePosterior,
    InferenceError,
    LineSearchConfig,
    MGVIConfig,
    StepRecord,
    averaged_metric,
    build_metric,
    draw_residual_pairs,
    draw_residual_sample,
    estimate_kl,
    estimate_kl_gradient,
    joint_energy,
    joint_energy_gradient,
    natural_gradient_step,
    run,
)
from .latent import BlockLayout, LatentVector
from .likelihood import (
    Dataset,
    Likelihood,
    bernoulli_likelihood,
    gaussian_likelihood,
    masked_out,
    poisson_likelihood,
)
from .linop import (
    Composition,
    Dense,
    DenseCapError,
    Diagonal,
    FunctionOperator,
    Identity,
    LinearOperator,
    SandwichMetric,
    Scaled,
    ShapeError,
    SumOperator,
    ZeroOperator,
    sandwich_metric,
    to_dense,
)
from .metrics import (
    EvaluationReport,
    avg_significance,
    predictive_likelihood,
    rms,
    sample_field_stats,
)
from .model import (
    ChainModel,
    HartleyOperator,
    HierarchicalLogitPart,
    LinearPart,
    MatrixProductPart,
    ModelJacobian,
    PointwisePart,
    ScaledSpectrumField,
    SpectrumModel,
    StandardizedModel,
    amplitude_operator_from_bins,
    build_spectrum_operator,
    exp_part,
    gamma_reparam_part,
    grid_mode_bins,
    linear_model,
    make_spectrum_model,
    spectrum_values,
    tanh_sigmoid_part,
)
from .problems import (
    PRESET_NAMES,
    Problem,
    ProblemSpec,
    build_binary_gp,
    build_linear_gaussian,
    build_logistic_regression,
    build_nmf,
    build_poisson_lognormal,
    build_preset,
    build_problem,
    build_zero_data,
    default_spec,
    preset_meanfield_config,
    preset_mgvi_config,
    read_records_csv,
    synthetic_poll_records,
    tiny_problem,
    write_records_csv,
)
from .solver import CGBreakdownError, CGConfig, CGResult, cg_solve
from .transforms import (
    DomainError,
    gamma_standardize,
    gamma_standardize_grad,
    gaussian_cdf,
    gaussian_cdf_inv,
    gaussian_pdf,
    hartley,
)

__version__ = "0.1.0"
