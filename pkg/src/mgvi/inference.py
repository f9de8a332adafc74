"""The iterated Gaussian approximation driver.

One global iteration freezes the metric constituents (model Jacobian and
likelihood Fisher metric) at the current estimate, draws residual samples
from the implicit covariance by conjugate-gradient inversion, and then
moves the mean through a few natural-gradient steps computed on those
samples.  Residuals come in antithetic pairs by default, which makes the
sample mean exact and noticeably stabilizes the stochastic estimates.

Everything is deterministic given the configured seed: each sample has
its own random stream derived from (seed, global iteration, sample
index), and all reductions over samples run in a fixed order, so results
do not depend on how many worker threads draw the samples.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .latent import LatentVector, as_flat
from .likelihood import Likelihood
from .linop import LinearOperator, SandwichMetric, Scaled, SumOperator
from .model import ModelJacobian, StandardizedModel
from .solver import CGConfig, cg_solve

# stream tags keeping the per-purpose random streams disjoint
_TAG_INIT = 1
_TAG_SAMPLE = 2


def derived_rng(seed: int, *tags: int) -> np.random.Generator:
    """Deterministic random stream for (seed, tags...)."""
    return np.random.default_rng([int(seed)] + [int(t) for t in tags])


Schedule = Sequence[tuple[int, int]]


def schedule_value(schedule, iteration: int):
    """Value of a (start_iteration, value) step schedule at ``iteration``."""
    current = None
    for start, value in schedule:
        if iteration >= start:
            current = value
    if current is None:
        raise ValueError(f"schedule {schedule!r} has no entry for iteration {iteration}")
    return current


def _validate_schedule(schedule, name: str) -> tuple:
    entries = tuple((int(i), v) for i, v in schedule)
    if not entries or entries[0][0] != 0:
        raise ValueError(f"{name} must start with an entry for iteration 0")
    starts = [i for i, _ in entries]
    if starts != sorted(starts):
        raise ValueError(f"{name} iterations must be non-decreasing")
    return entries


@dataclass(frozen=True)
class LineSearchConfig:
    """Backtracking line search with an Armijo sufficient-decrease test."""

    initial_step: float = 1.0
    shrink_factor: float = 0.5
    max_trials: int = 12
    sufficient_decrease: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.shrink_factor < 1.0):
            raise ValueError("shrink_factor must lie in (0, 1)")
        if self.max_trials < 1:
            raise ValueError("max_trials must be at least 1")


@dataclass(frozen=True)
class MGVIConfig:
    """Driver settings; the schedules are (start_iteration, value) steps."""

    global_iterations: int = 20
    samples_schedule: Schedule = ((0, 1),)
    antithetic: bool = True
    sampling_cg: Sequence[tuple[int, CGConfig]] = ((0, CGConfig(max_iterations=25)),)
    natural_gradient_steps_schedule: Schedule = ((0, 3),)
    natural_gradient_cg: CGConfig = CGConfig(
        max_iterations=100, relative_residual_tolerance=1e-6
    )
    line_search: LineSearchConfig = LineSearchConfig()
    convergence_tolerance: float = 1e-3
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.global_iterations < 1:
            raise ValueError("global_iterations must be at least 1")
        object.__setattr__(
            self,
            "samples_schedule",
            _validate_schedule(self.samples_schedule, "samples_schedule"),
        )
        if any(n < 1 for _, n in self.samples_schedule):
            raise ValueError("need at least one sample pair at every stage")
        object.__setattr__(
            self, "sampling_cg", _validate_schedule(self.sampling_cg, "sampling_cg")
        )
        object.__setattr__(
            self,
            "natural_gradient_steps_schedule",
            _validate_schedule(
                self.natural_gradient_steps_schedule,
                "natural_gradient_steps_schedule",
            ),
        )

    def final_sample_pairs(self) -> int:
        return self.samples_schedule[-1][1]


@dataclass
class StepRecord:
    """Diagnostics for one natural-gradient step.

    Wall time is excluded from equality so that two runs with the same
    seed compare equal record by record.
    """

    global_iteration: int
    step_index: int
    kl: float
    gradient_norm: float
    step_size: float
    cg_iterations: int
    line_search_failed: bool
    wall_time_s: float = field(compare=False, default=0.0)


@dataclass
class ApproximatePosterior:
    """Mean plus residual samples representing the implicit covariance."""

    mean: LatentVector
    residual_samples: list[LatentVector]
    metric_point: LatentVector
    diagnostics: list[StepRecord]
    converged: bool = False

    def samples(self) -> list[LatentVector]:
        return [self.mean + r for r in self.residual_samples]

    def sample_mean(self) -> LatentVector:
        """Mean of the sample set, accumulated pairwise.

        Residuals are stored as adjacent antithetic pairs, so sequential
        accumulation cancels each pair exactly and the result equals the
        stored mean bit for bit.
        """
        acc = np.zeros(self.mean.total_dim)
        for r in self.residual_samples:
            acc = acc + r.values
        n = max(len(self.residual_samples), 1)
        return LatentVector(self.mean.layout, self.mean.values + acc / n)


class InferenceError(RuntimeError):
    """Raised when the loop hits non-finite objective values."""

    def __init__(self, message: str, diagnostics: list[StepRecord]):
        super().__init__(message)
        self.diagnostics = diagnostics


def joint_energy(model: StandardizedModel, lik: Likelihood, xi) -> float:
    """Data energy plus the standard normal prior term."""
    x = as_flat(xi)
    return lik.energy(model.forward(x)) + 0.5 * float(x @ x)


def joint_energy_gradient(
    model: StandardizedModel, lik: Likelihood, xi
) -> np.ndarray:
    x = as_flat(xi)
    return model.vjp(x, lik.grad_energy(model.forward(x))) + x


def build_metric(
    model: StandardizedModel, lik: Likelihood, xi_hat
) -> SandwichMetric:
    """Precision operator J^T I_d J + 1 frozen at the given estimate."""
    x = as_flat(xi_hat)
    jac = model.jacobian_operator(x)
    return SandwichMetric(jac, lik.fisher_metric(model.forward(x)))


def draw_residual_sample(
    jac: ModelJacobian,
    lik: Likelihood,
    theta_hat: np.ndarray,
    cg: CGConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One zero-mean residual draw from the implicit covariance.

    Draws from the constituents of the precision (a metric-noise sample
    pushed back through the Jacobian plus a white prior sample) and then
    applies the covariance itself by CG inversion.  The CG starts at the
    prior sample: truncated solves then correct the best-informed
    directions first while the remaining ones keep the (larger) prior
    variance, so uncertainty is never underestimated.
    """
    metric_noise = lik.sample_metric_noise(theta_hat, rng)
    prior_noise = rng.standard_normal(jac.domain_dim)
    rhs = jac.adjoint_apply(metric_noise) + prior_noise
    precision = SandwichMetric(jac, lik.fisher_metric(theta_hat))
    result = cg_solve(precision, rhs, x0=prior_noise, config=cg)
    return result.solution


def draw_residual_pairs(
    model: StandardizedModel,
    lik: Likelihood,
    xi_hat,
    n_pairs: int,
    cg: CGConfig,
    seed: int,
    iteration: int = 0,
    antithetic: bool = True,
    threads: int = 1,
) -> list[np.ndarray]:
    """The scheduled residual set for one global iteration.

    With antithetic pairing the set is [r0, -r0, r1, -r1, ...]; without
    it, twice as many independent residuals are drawn instead.  Each draw
    uses its own (seed, iteration, index) stream, so the result does not
    depend on the number of worker threads.
    """
    x = as_flat(xi_hat)
    jac = model.jacobian_operator(x)
    theta_hat = model.forward(x)
    n_draws = n_pairs if antithetic else 2 * n_pairs

    def one(index: int) -> np.ndarray:
        rng = derived_rng(seed, _TAG_SAMPLE, iteration, index)
        return draw_residual_sample(jac, lik, theta_hat, cg, rng)

    if threads > 1 and n_draws > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            draws = list(pool.map(one, range(n_draws)))
    else:
        draws = [one(i) for i in range(n_draws)]

    if not antithetic:
        return draws
    residuals: list[np.ndarray] = []
    for r in draws:
        residuals.append(r)
        residuals.append(np.negative(r))
    return residuals


def estimate_kl(
    model: StandardizedModel, lik: Likelihood, xi_bar, residuals
) -> float:
    """Sample average of the joint energy over mean + residuals.

    Up to mean-independent terms this is the KL divergence between the
    implicit Gaussian and the posterior, which is all the mean update
    needs.
    """
    if len(residuals) == 0:
        raise ValueError("need at least one residual sample")
    x = as_flat(xi_bar)
    total = 0.0
    for r in residuals:
        total += joint_energy(model, lik, x + as_flat(r))
    return total / len(residuals)


def estimate_kl_gradient(
    model: StandardizedModel, lik: Likelihood, xi_bar, residuals
) -> np.ndarray:
    if len(residuals) == 0:
        raise ValueError("need at least one residual sample")
    x = as_flat(xi_bar)
    grad = np.zeros_like(x)
    for r in residuals:
        grad += joint_energy_gradient(model, lik, x + as_flat(r))
    return grad / len(residuals)


def averaged_metric(
    model: StandardizedModel, lik: Likelihood, xi_bar, residuals
) -> LinearOperator:
    """Mean of the per-sample precision operators, still matrix-free."""
    if len(residuals) == 0:
        raise ValueError("need at least one residual sample")
    x = as_flat(xi_bar)
    terms = [build_metric(model, lik, x + as_flat(r)) for r in residuals]
    if len(terms) == 1:
        return terms[0]
    return Scaled(SumOperator(terms), 1.0 / len(terms))


def natural_gradient_step(
    model: StandardizedModel,
    lik: Likelihood,
    xi_bar: np.ndarray,
    residuals: list[np.ndarray],
    cg: CGConfig,
    line_search: LineSearchConfig,
) -> tuple[np.ndarray, dict]:
    """One preconditioned descent step with backtracking line search.

    The gradient is weighted by the inverse averaged metric (solved by
    CG); the first trial step satisfying the sufficient-decrease test is
    accepted.  If no trial decreases the KL estimate the mean is left
    unchanged and the failure is reported in the step info.
    """
    kl0 = estimate_kl(model, lik, xi_bar, residuals)
    if not np.isfinite(kl0):
        raise InferenceError("KL estimate is not finite", [])
    grad = estimate_kl_gradient(model, lik, xi_bar, residuals)
    metric = averaged_metric(model, lik, xi_bar, residuals)
    solve = cg_solve(metric, grad, config=cg)
    direction = solve.solution
    slope = max(float(grad @ direction), 0.0)

    step = line_search.initial_step
    for _ in range(line_search.max_trials):
        candidate = xi_bar - step * direction
        kl_try = estimate_kl(model, lik, candidate, residuals)
        if kl_try <= kl0 - line_search.sufficient_decrease * step * slope:
            info = {
                "kl": kl_try,
                "gradient_norm": float(np.linalg.norm(grad)),
                "step_size": step,
                "cg_iterations": solve.iterations_used,
                "line_search_failed": False,
            }
            return candidate, info
        step *= line_search.shrink_factor
    info = {
        "kl": kl0,
        "gradient_norm": float(np.linalg.norm(grad)),
        "step_size": 0.0,
        "cg_iterations": solve.iterations_used,
        "line_search_failed": True,
    }
    return xi_bar, info


Observer = Callable[[StepRecord, np.ndarray, list[np.ndarray]], None]


def run(
    model: StandardizedModel,
    lik: Likelihood,
    config: MGVIConfig,
    threads: int = 1,
    observer: Observer | None = None,
) -> ApproximatePosterior:
    """The full fixed-point loop.

    Starts from small Gaussian noise, alternates sampling at the frozen
    estimate with natural-gradient mean updates, and stops after the
    configured number of global iterations or once the relative mean
    change falls below the tolerance.  The convergence test only runs
    after the sample schedule has reached its final value: with few
    samples the iterates fluctuate at the sampling-noise level by design.
    """
    t0 = time.perf_counter()
    dim = model.input_dim
    xi_hat = config.init_scale * derived_rng(config.seed, _TAG_INIT).standard_normal(dim)
    diagnostics: list[StepRecord] = []
    residuals: list[np.ndarray] = []
    metric_point = xi_hat.copy()
    converged = False

    for iteration in range(config.global_iterations):
        n_pairs = schedule_value(config.samples_schedule, iteration)
        cg_sampling = schedule_value(config.sampling_cg, iteration)
        n_steps = schedule_value(config.natural_gradient_steps_schedule, iteration)

        metric_point = xi_hat.copy()
        residuals = draw_residual_pairs(
            model,
            lik,
            xi_hat,
            n_pairs,
            cg_sampling,
            seed=config.seed,
            iteration=iteration,
            antithetic=config.antithetic,
            threads=threads,
        )

        xi_bar = xi_hat
        for step_index in range(n_steps):
            xi_bar, info = natural_gradient_step(
                model,
                lik,
                xi_bar,
                residuals,
                config.natural_gradient_cg,
                config.line_search,
            )
            if not np.isfinite(info["kl"]):
                raise InferenceError("KL estimate became non-finite", diagnostics)
            record = StepRecord(
                global_iteration=iteration,
                step_index=step_index,
                wall_time_s=time.perf_counter() - t0,
                **info,
            )
            diagnostics.append(record)
            if observer is not None:
                observer(record, xi_bar, residuals)

        change = float(np.linalg.norm(xi_bar - xi_hat))
        scale = max(1.0, float(np.linalg.norm(xi_hat)))
        xi_hat = xi_bar
        at_final_samples = n_pairs >= config.final_sample_pairs()
        if at_final_samples and change / scale < config.convergence_tolerance:
            converged = True
            break

    return ApproximatePosterior(
        mean=model.wrap(xi_hat),
        residual_samples=[model.wrap(r) for r in residuals],
        metric_point=model.wrap(metric_point),
        diagnostics=diagnostics,
        converged=converged,
    )


def diagnostics_log_lines(diagnostics: list[StepRecord]) -> list[str]:
    """Line-oriented structured log, one record per natural-gradient step."""
    lines = []
    for r in diagnostics:
        lines.append(
            "iteration={} step={} wall_time_s={:.6f} kl={:.17g} "
            "gradient_norm={:.17g} step_size={:.17g} cg_iterations={} "
            "line_search_failed={}".format(
                r.global_iteration,
                r.step_index,
                r.wall_time_s,
                r.kl,
                r.gradient_norm,
                r.step_size,
                r.cg_iterations,
                r.line_search_failed,
            )
        )
    return lines
