"""Likelihood energies, gradients, Fisher metrics and metric-noise samplers.

Energies are negative log-likelihoods up to additive data-dependent
constants (factorial and binomial terms are dropped consistently across
families, so cross-method comparisons stay valid).  All families have
diagonal Fisher metrics, which is what keeps the posterior sampling
scheme matrix-free: the metric must be cheap to sample from in its
eigenbasis, and independently sampled data points guarantee that.

Masking lives here rather than in the model response: masked-out points
contribute zero energy, zero gradient and a zero metric row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linop import Diagonal
from .transforms import DomainError

LAMBDA_FLOOR = 1e-12
MU_EPS = 1e-12

FAMILIES = ("gaussian", "poisson", "bernoulli")


@dataclass(frozen=True)
class Dataset:
    """Observed values plus the observation mask (True = observed)."""

    values: np.ndarray
    mask: np.ndarray
    noise_variance: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64).ravel()
        )
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool).ravel())
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask must have the same length")

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class Likelihood:
    """One of the three supported data families over a masked dataset."""

    family: str
    data: Dataset
    _metric_floor: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        d = self.data
        if self.family == "poisson":
            obs = d.values[d.mask]
            if np.any(obs < 0) or np.any(obs != np.rint(obs)):
                raise ValueError("poisson data must be non-negative integers")
        elif self.family == "bernoulli":
            obs = d.values[d.mask]
            if not np.all(np.isin(obs, (0.0, 1.0))):
                raise ValueError("bernoulli data must lie in {0, 1}")
        elif self.family == "gaussian":
            if d.noise_variance is None or d.noise_variance <= 0:
                raise ValueError("gaussian data needs a positive noise_variance")

    @property
    def n_points(self) -> int:
        return self.data.n_points

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).ravel()
        if theta.size != self.data.n_points:
            raise ValueError(
                f"theta has size {theta.size}, data has {self.data.n_points} points"
            )
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta contains non-finite values")
        return theta

    def _clamped(self, theta: np.ndarray) -> np.ndarray:
        if self.family == "poisson":
            return np.maximum(theta, LAMBDA_FLOOR)
        if self.family == "bernoulli":
            return np.clip(theta, MU_EPS, 1.0 - MU_EPS)
        return theta

    def energy(self, theta) -> float:
        """Negative log-likelihood of the masked-in points, constants dropped."""
        theta = self._clamped(self._check_theta(theta))
        m = self.data.mask
        d = self.data.values
        if self.family == "poisson":
            lam = theta[m]
            return float(np.sum(lam - d[m] * np.log(lam)))
        if self.family == "bernoulli":
            mu = theta[m]
            dm = d[m]
            return float(-np.sum(dm * np.log(mu) + (1.0 - dm) * np.log(1.0 - mu)))
        resid = (d[m] - theta[m]) ** 2
        return float(0.5 * np.sum(resid) / self.data.noise_variance)

    def grad_energy(self, theta) -> np.ndarray:
        theta = self._clamped(self._check_theta(theta))
        m = self.data.mask
        d = self.data.values
        grad = np.zeros(self.data.n_points)
        if self.family == "poisson":
            grad[m] = 1.0 - d[m] / theta[m]
        elif self.family == "bernoulli":
            mu = theta[m]
            grad[m] = (mu - d[m]) / (mu * (1.0 - mu))
        else:
            grad[m] = (theta[m] - d[m]) / self.data.noise_variance
        return grad

    def metric_diagonal(self, theta) -> np.ndarray:
        theta = self._clamped(self._check_theta(theta))
        m = self.data.mask
        diag = np.zeros(self.data.n_points)
        if self.family == "poisson":
            diag[m] = 1.0 / theta[m]
        elif self.family == "bernoulli":
            mu = theta[m]
            diag[m] = 1.0 / (mu * (1.0 - mu))
        else:
            diag[m] = 1.0 / self.data.noise_variance
        return diag

    def fisher_metric(self, theta) -> Diagonal:
        """The likelihood Fisher metric as a PSD diagonal operator."""
        return Diagonal(self.metric_diagonal(theta))

    def sample_metric_noise(self, theta, rng: np.random.Generator) -> np.ndarray:
        """A zero-mean draw whose covariance is the Fisher metric.

        Masked-out entries are exactly zero so they never leak into the
        sampled posterior residuals.
        """
        diag = self.metric_diagonal(theta)
        out = np.zeros(self.data.n_points)
        m = self.data.mask
        out[m] = rng.standard_normal(int(m.sum())) * np.sqrt(diag[m])
        return out

    def resample_data(self, theta, rng: np.random.Generator) -> np.ndarray:
        """Synthetic data drawn from the family at theta (oracle helper)."""
        theta = self._clamped(self._check_theta(theta))
        if self.family == "poisson":
            return rng.poisson(theta).astype(np.float64)
        if self.family == "bernoulli":
            return (rng.random(theta.size) < theta).astype(np.float64)
        return theta + rng.standard_normal(theta.size) * np.sqrt(
            self.data.noise_variance
        )


def gaussian_likelihood(values, noise_variance: float, mask=None) -> Likelihood:
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.size, dtype=bool) if mask is None else mask
    return Likelihood("gaussian", Dataset(values, mask, float(noise_variance)))


def poisson_likelihood(counts, mask=None) -> Likelihood:
    counts = np.asarray(counts, dtype=np.float64)
    mask = np.ones(counts.size, dtype=bool) if mask is None else mask
    return Likelihood("poisson", Dataset(counts, mask))


def bernoulli_likelihood(outcomes, mask=None) -> Likelihood:
    outcomes = np.asarray(outcomes, dtype=np.float64)
    mask = np.ones(outcomes.size, dtype=bool) if mask is None else mask
    return Likelihood("bernoulli", Dataset(outcomes, mask))


def masked_out(likelihood: Likelihood) -> Likelihood:
    """The same data with every point masked out (prior-only limit)."""
    d = likelihood.data
    return Likelihood(
        likelihood.family,
        Dataset(d.values, np.zeros(d.n_points, dtype=bool), d.noise_variance),
    )
