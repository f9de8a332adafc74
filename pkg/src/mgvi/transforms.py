"""Numerical transforms: harmonic transform and distributional transforms.

The harmonic transform used throughout is the discrete Hartley transform
with unitary normalization.  It is real, orthogonal and involutory
(applying it twice returns the input), which removes all complex
bookkeeping.  Since only spectra binned on the mode magnitude ever enter,
it produces the same stationary-kernel covariances as a Fourier transform
would.
"""

from __future__ import annotations

import numpy as np
from scipy import special


class DomainError(ValueError):
    """Argument outside the mathematical domain of a transform."""


def hartley(x: np.ndarray, axes=None) -> np.ndarray:
    """Unitary discrete Hartley transform along ``axes`` (default: all)."""
    x = np.asarray(x, dtype=np.float64)
    if axes is None:
        axes = range(x.ndim)
    out = x
    for ax in axes:
        f = np.fft.fft(out, axis=ax)
        out = (f.real - f.imag) / np.sqrt(out.shape[ax])
    return out


def gaussian_cdf(x) -> np.ndarray | float:
    """Standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("gaussian_cdf requires finite arguments")
    out = special.ndtr(x)
    return out if out.ndim else float(out)


def gaussian_cdf_inv(p) -> np.ndarray | float:
    """Inverse standard normal CDF on the open interval (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("gaussian_cdf_inv requires arguments in (0, 1)")
    out = special.ndtri(p)
    return out if out.ndim else float(out)


def gaussian_pdf(x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return out if out.ndim else float(out)


def gamma_standardize(xi, alpha: float, beta: float):
    """Map standard normal draws onto Gamma(alpha, beta) draws.

    Returns the x with  F_Gamma(x; alpha, beta) = Phi(xi),  evaluated
    through the tail-appropriate branch of the inverse regularized
    incomplete gamma function so the identity holds to high accuracy in
    CDF space across the whole usable range of xi.
    """
    if alpha <= 0 or beta <= 0:
        raise DomainError("gamma_standardize requires alpha > 0 and beta > 0")
    xi = np.asarray(xi, dtype=np.float64)
    scalar = xi.ndim == 0
    xi = np.atleast_1d(xi)
    if not np.all(np.isfinite(xi)):
        raise DomainError("gamma_standardize requires finite xi")
    x = np.empty_like(xi)
    lower = xi <= 0
    # lower branch uses P(xi), upper branch the survivor Q(-xi) = 1 - P(xi)
    x[lower] = special.gammaincinv(alpha, special.ndtr(xi[lower]))
    x[~lower] = special.gammainccinv(alpha, special.ndtr(-xi[~lower]))
    x /= beta
    if not np.all(np.isfinite(x)):
        raise DomainError("gamma quantile inversion failed to produce finite values")
    return float(x[0]) if scalar else x


def gamma_standardize_grad(xi, alpha: float, beta: float):
    """The transform together with its derivative dx/dxi.

    The derivative comes from the inverse-function rule,
    phi(xi) / gamma_pdf(x), rather than from differentiating the
    numerical inversion; the density ratio is evaluated in log space.
    """
    x = np.atleast_1d(np.asarray(gamma_standardize(xi, alpha, beta), dtype=np.float64))
    xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    log_phi = -0.5 * xi * xi - 0.5 * np.log(2.0 * np.pi)
    with np.errstate(divide="ignore"):
        log_gamma_pdf = (
            alpha * np.log(beta)
            + (alpha - 1.0) * np.log(x)
            - beta * x
            - special.gammaln(alpha)
        )
    grad = np.exp(log_phi - log_gamma_pdf)
    return x, grad
