"""Comparison methods sharing the model/likelihood stack.

* MAP: natural-gradient descent on the joint energy (equivalently the
  main loop with a single zero residual and a freshly evaluated metric).
* Fisher-Laplace: residual draws at the MAP point with the identical
  sampling machinery, no mean re-optimization.
* Mean-field Gaussian VI: stochastic gradient descent on the ELBO with
  the reparametrization trick and the exact entropy gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .inference import (
    InferenceError,
    LineSearchConfig,
    StepRecord,
    build_metric,
    derived_rng,
    draw_residual_sample,
    joint_energy,
    joint_energy_gradient,
)
from .latent import LatentVector, as_flat
from .likelihood import Likelihood
from .model import StandardizedModel
from .solver import CGConfig, cg_solve

_TAG_LAPLACE = 3
_TAG_MEANFIELD = 4


@dataclass(frozen=True)
class MAPConfig:
    max_steps: int = 100
    gradient_tolerance: float = 1e-8
    cg: CGConfig = CGConfig(max_iterations=200, relative_residual_tolerance=1e-10)
    line_search: LineSearchConfig = LineSearchConfig()
    seed: int = 0
    init_scale: float = 0.1


def map_estimate(
    model: StandardizedModel,
    lik: Likelihood,
    config: MAPConfig,
    observer: Callable[[StepRecord, np.ndarray], None] | None = None,
) -> LatentVector:
    """Posterior mode via metric-preconditioned descent with line search."""
    t0 = time.perf_counter()
    xi = config.init_scale * derived_rng(config.seed, _TAG_LAPLACE, 0).standard_normal(
        model.input_dim
    )
    for step in range(config.max_steps):
        grad = joint_energy_gradient(model, lik, xi)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < config.gradient_tolerance:
            break
        metric = build_metric(model, lik, xi)
        solve = cg_solve(metric, grad, config=config.cg)
        direction = solve.solution
        slope = max(float(grad @ direction), 0.0)
        energy0 = joint_energy(model, lik, xi)
        step_size = config.line_search.initial_step
        accepted = False
        for _ in range(config.line_search.max_trials):
            candidate = xi - step_size * direction
            if joint_energy(model, lik, candidate) <= (
                energy0 - config.line_search.sufficient_decrease * step_size * slope
            ):
                xi = candidate
                accepted = True
                break
            step_size *= config.line_search.shrink_factor
        if observer is not None:
            observer(
                StepRecord(
                    global_iteration=step,
                    step_index=0,
                    kl=joint_energy(model, lik, xi),
                    gradient_norm=grad_norm,
                    step_size=step_size if accepted else 0.0,
                    cg_iterations=solve.iterations_used,
                    line_search_failed=not accepted,
                    wall_time_s=time.perf_counter() - t0,
                ),
                xi,
            )
        if not accepted:
            break
    return model.wrap(xi)


def laplace_samples(
    model: StandardizedModel,
    lik: Likelihood,
    xi_map,
    n_samples: int,
    cg: CGConfig,
    seed: int = 0,
) -> list[LatentVector]:
    """Residual draws around the MAP point (Fisher-Laplace approximation)."""
    x = as_flat(xi_map)
    jac = model.jacobian_operator(x)
    theta = model.forward(x)
    out = []
    for index in range(n_samples):
        rng = derived_rng(seed, _TAG_LAPLACE, 1, index)
        out.append(model.wrap(draw_residual_sample(jac, lik, theta, cg, rng)))
    return out


@dataclass(frozen=True)
class MeanFieldConfig:
    """Plain SGD on the reparametrized ELBO.

    The step size follows s0 / (1 + t / tau); with ``average_tail_fraction``
    set, the returned state averages the iterates over that trailing
    fraction of the run, which suppresses the residual SGD jitter without
    touching the schedule itself.
    """

    steps: int = 5000
    draws_per_step: int = 4
    step_size: float = 0.1
    step_decay_tau: float = 1000.0
    log_std_init: float = -3.0
    seed: int = 0
    average_tail_fraction: float = 0.0
    trace_every: int = 50


@dataclass
class MeanFieldState:
    mean: LatentVector
    log_std: LatentVector
    step_size: float
    iteration: int


def meanfield_kl_and_grad(
    model: StandardizedModel,
    lik: Likelihood,
    mean: np.ndarray,
    log_std: np.ndarray,
    eps_set: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Reparametrized KL estimate and its exact gradient for fixed draws.

    KL = (1/k) sum_i H(d, mean + exp(log_std) * eps_i) - sum(log_std),
    the entropy of the diagonal Gaussian entering in closed form (its
    gradient is the constant -1 per log_std coordinate).
    """
    std = np.exp(log_std)
    k = eps_set.shape[0]
    kl = 0.0
    g_mean = np.zeros_like(mean)
    g_log_std = np.zeros_like(log_std)
    for eps in eps_set:
        xi = mean + std * eps
        kl += joint_energy(model, lik, xi)
        g = joint_energy_gradient(model, lik, xi)
        g_mean += g
        g_log_std += g * eps * std
    kl = kl / k - float(np.sum(log_std))
    g_mean /= k
    g_log_std = g_log_std / k - 1.0
    return kl, g_mean, g_log_std


def meanfield_vi(
    model: StandardizedModel,
    lik: Likelihood,
    config: MeanFieldConfig,
    observer: Callable[[int, float, float, np.ndarray, np.ndarray], None] | None = None,
) -> tuple[MeanFieldState, list[float]]:
    """Optimize a fully factorized Gaussian; returns the state and ELBO trace."""
    dim = model.input_dim
    mean = np.zeros(dim)
    log_std = np.full(dim, config.log_std_init)
    elbo_trace: list[float] = []
    t0 = time.perf_counter()

    tail_start = config.steps
    if config.average_tail_fraction > 0.0:
        tail_start = int(config.steps * (1.0 - config.average_tail_fraction))
    tail_mean = np.zeros(dim)
    tail_log_std = np.zeros(dim)
    tail_count = 0

    step_size = config.step_size
    for t in range(config.steps):
        rng = derived_rng(config.seed, _TAG_MEANFIELD, t)
        eps = rng.standard_normal((config.draws_per_step, dim))
        kl, g_mean, g_log_std = meanfield_kl_and_grad(model, lik, mean, log_std, eps)
        if not np.isfinite(kl):
            state = MeanFieldState(
                mean=model.wrap(mean),
                log_std=model.wrap(log_std),
                step_size=step_size,
                iteration=t,
            )
            err = InferenceError("mean-field ELBO became non-finite", [])
            err.state = state
            raise err
        step_size = config.step_size / (1.0 + t / config.step_decay_tau)
        mean = mean - step_size * g_mean
        log_std = log_std - step_size * g_log_std
        if t >= tail_start:
            tail_mean += mean
            tail_log_std += log_std
            tail_count += 1
        if t % config.trace_every == 0 or t == config.steps - 1:
            elbo_trace.append(-kl)
            if observer is not None:
                observer(t, time.perf_counter() - t0, -kl, mean, log_std)

    if tail_count > 0:
        mean = tail_mean / tail_count
        log_std = tail_log_std / tail_count
    return (
        MeanFieldState(
            mean=model.wrap(mean),
            log_std=model.wrap(log_std),
            step_size=step_size,
            iteration=config.steps,
        ),
        elbo_trace,
    )


def meanfield_samples(
    state: MeanFieldState, n_samples: int, seed: int = 0
) -> list[LatentVector]:
    """Draws from the factorized Gaussian for metric evaluation."""
    rng = derived_rng(seed, _TAG_MEANFIELD, 2**20)
    std = np.exp(state.log_std.values)
    out = []
    for _ in range(n_samples):
        out.append(
            LatentVector(
                state.mean.layout,
                state.mean.values + std * rng.standard_normal(std.size),
            )
        )
    return out
