"""Dense-materialization oracle checks runnable from the command line.

Each check builds small random instances, materializes the implicit
operators, and compares against plain dense linear algebra.  The suite
is the CI gate behind the ``oracle-check`` subcommand; in self-test mode
it additionally feeds a deliberately broken adjoint through the adjoint
check to confirm the harness actually detects sign errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linop import (
    Composition,
    Dense,
    Diagonal,
    FunctionOperator,
    LinearOperator,
    SandwichMetric,
    to_dense,
)
from .solver import CGConfig, cg_solve


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _adjoint_defect(op: LinearOperator, rng, n_pairs: int = 100) -> float:
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.codomain_dim)
        y = rng.standard_normal(op.domain_dim)
        lhs = float(x @ op.apply(y))
        rhs = float(op.adjoint_apply(x) @ y)
        scale = max(abs(lhs), abs(rhs), 1e-30)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def _random_sandwich(dim: int, rng) -> SandwichMetric:
    jac = Dense(rng.standard_normal((dim + 2, dim)) / np.sqrt(dim))
    middle = Diagonal(rng.uniform(0.5, 3.0, size=dim + 2))
    return SandwichMetric(jac, middle)


def check_adjoints(dim: int, seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 1])
    ops = [
        Dense(rng.standard_normal((dim, dim))),
        Composition(Dense(rng.standard_normal((dim, dim))), Diagonal(rng.uniform(0.1, 2.0, dim))),
        2.5 * Dense(rng.standard_normal((dim, dim))) + Diagonal(rng.uniform(0.1, 2.0, dim)),
        _random_sandwich(dim, rng),
    ]
    worst = max(_adjoint_defect(op, rng) for op in ops)
    for op in ops:
        dense = to_dense(op)
        dense_adj = to_dense(op.adjoint_operator())
        worst = max(worst, float(np.max(np.abs(dense.T - dense_adj))))
    return CheckResult("adjoint-consistency", worst < 1e-10, f"max defect {worst:.3e}")


def check_spd_floor(dim: int, seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 2])
    metric = to_dense(_random_sandwich(dim, rng))
    asym = float(np.max(np.abs(metric - metric.T)))
    min_eig = float(np.linalg.eigvalsh(metric).min())
    ok = asym < 1e-12 and min_eig >= 1.0 - 1e-10
    return CheckResult(
        "spd-identity-floor", ok, f"asymmetry {asym:.3e}, min eigenvalue {min_eig:.12f}"
    )


def check_cg_vs_dense(dim: int, seed: int) -> CheckResult:
    rng = np.random.default_rng([seed, 3])
    op = _random_sandwich(dim, rng)
    dense = to_dense(op)
    b = rng.standard_normal(dim)
    result = cg_solve(
        op, b, config=CGConfig(max_iterations=4 * dim, relative_residual_tolerance=1e-13)
    )
    exact = np.linalg.solve(dense, b)
    err = float(np.max(np.abs(result.solution - exact)))
    return CheckResult("cg-vs-dense-solve", err < 1e-8, f"max |diff| {err:.3e}")


def check_sample_covariance(dim: int, draws: int, seed: int) -> CheckResult:
    from .inference import draw_residual_sample
    from .likelihood import gaussian_likelihood
    from .model import LinearPart, StandardizedModel, single_block_layout
    from .linop import Dense as DenseOp

    rng = np.random.default_rng([seed, 4])
    response = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    noise_variance = 0.2
    model = StandardizedModel(
        single_block_layout("xi", (dim,)), LinearPart(DenseOp(response))
    )
    lik = gaussian_likelihood(np.zeros(dim), noise_variance)
    jac = model.jacobian_operator(np.zeros(dim))
    theta = model.forward(np.zeros(dim))
    cg = CGConfig(max_iterations=4 * dim, relative_residual_tolerance=1e-12)

    samples = np.empty((draws, dim))
    for i in range(draws):
        samples[i] = draw_residual_sample(
            jac, lik, theta, cg, np.random.default_rng([seed, 5, i])
        )
    empirical = samples.T @ samples / draws
    precision = response.T @ response / noise_variance + np.eye(dim)
    expected = np.linalg.inv(precision)
    se = np.sqrt(
        (np.outer(np.diag(expected), np.diag(expected)) + expected**2) / draws
    )
    excess = float(np.max(np.abs(empirical - expected) / se))
    return CheckResult(
        "sample-covariance", excess <= 5.0, f"max deviation {excess:.2f} standard errors"
    )


def broken_adjoint_check(dim: int, seed: int) -> CheckResult:
    """Self test: a sign error in an adjoint must be caught."""
    rng = np.random.default_rng([seed, 6])
    matrix = rng.standard_normal((dim, dim))
    broken = FunctionOperator(
        dim, dim, lambda v: matrix @ v, lambda w: -(matrix.T @ w)
    )
    defect = _adjoint_defect(broken, rng, n_pairs=10)
    return CheckResult(
        "self-test-injected-sign-error",
        defect < 1e-10,
        f"defect {defect:.3e} (failure here is the expected detection)",
    )


def run_oracle_suite(
    dim: int = 12, draws: int = 20_000, seed: int = 0, self_test: bool = False
) -> list[CheckResult]:
    checks = [
        check_adjoints(dim, seed),
        check_spd_floor(dim, seed),
        check_cg_vs_dense(dim, seed),
        check_sample_covariance(dim, draws, seed),
    ]
    if self_test:
        checks.append(broken_adjoint_check(dim, seed))
    return checks
