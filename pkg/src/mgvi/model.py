"""Standardized generative models built from composable primitives.

Every model maps a flat vector of a-priori standard normal parameters to
its output through a short chain of primitives: linear operators,
pointwise nonlinearities, distributional transforms, and a few dedicated
multi-block stages.  Each primitive carries an exact forward evaluation,
a Jacobian-vector product and a vector-Jacobian product; chains propagate
these, so every shipped model has exact first derivatives without a
general autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .latent import BlockLayout, LatentVector, as_flat
from .linop import Composition, Dense, Diagonal, LinearOperator, ShapeError
from .transforms import (
    gamma_standardize_grad,
    gaussian_cdf,
    gaussian_pdf,
    hartley,
)


class ModelPart:
    """One differentiable stage: forward, jvp and vjp on flat arrays."""

    input_dim: int
    output_dim: int

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LinearPart(ModelPart):
    def __init__(self, op: LinearOperator):
        self.op = op
        self.input_dim = op.domain_dim
        self.output_dim = op.codomain_dim

    def forward(self, x):
        return self.op.apply(x)

    def jvp(self, x, dx):
        return self.op.apply(dx)

    def vjp(self, x, cotangent):
        return self.op.adjoint_apply(cotangent)


class PointwisePart(ModelPart):
    """Elementwise nonlinearity given by a value-and-slope callable."""

    def __init__(self, dim: int, value_and_slope, label: str = "pointwise"):
        self.input_dim = self.output_dim = int(dim)
        self._value_and_slope = value_and_slope
        self.label = label

    def forward(self, x):
        return self._value_and_slope(x)[0]

    def jvp(self, x, dx):
        return self._value_and_slope(x)[1] * dx

    def vjp(self, x, cotangent):
        return self._value_and_slope(x)[1] * cotangent


def exp_part(dim: int) -> PointwisePart:
    def value_and_slope(x):
        y = np.exp(x)
        return y, y

    return PointwisePart(dim, value_and_slope, "exp")


def tanh_sigmoid_part(dim: int) -> PointwisePart:
    """The rate link s -> (1 + tanh(s)) / 2, mapping reals into (0, 1)."""

    def value_and_slope(x):
        t = np.tanh(x)
        return 0.5 * (1.0 + t), 0.5 * (1.0 - t * t)

    return PointwisePart(dim, value_and_slope, "tanh-sigmoid")


def gamma_reparam_part(dim: int, alpha: float, beta: float) -> PointwisePart:
    def value_and_slope(x):
        return gamma_standardize_grad(x, alpha, beta)

    return PointwisePart(dim, value_and_slope, f"gamma({alpha},{beta})")


class ChainModel(ModelPart):
    """Sequential composition of parts, first part applied first."""

    def __init__(self, parts: list[ModelPart]):
        if not parts:
            raise ValueError("chain needs at least one part")
        for left, right in zip(parts, parts[1:]):
            if left.output_dim != right.input_dim:
                raise ShapeError(
                    f"chain mismatch: {left.output_dim} -> {right.input_dim}"
                )
        self.parts = list(parts)
        self.input_dim = parts[0].input_dim
        self.output_dim = parts[-1].output_dim

    def forward(self, x):
        for part in self.parts:
            x = part.forward(x)
        return x

    def _points(self, x):
        points = [x]
        for part in self.parts:
            points.append(part.forward(points[-1]))
        return points

    def jvp(self, x, dx):
        points = self._points(x)
        for part, point in zip(self.parts, points):
            dx = part.jvp(point, dx)
        return dx

    def vjp(self, x, cotangent):
        points = self._points(x)
        for part, point in zip(reversed(self.parts), reversed(points[:-1])):
            cotangent = part.vjp(point, cotangent)
        return cotangent


class HartleyOperator(LinearOperator):
    """Unitary separable Hartley transform on a periodic grid.

    Self-adjoint and self-inverse, so forward and adjoint coincide.
    """

    kind = "external"

    def __init__(self, grid_shape: tuple[int, ...]):
        self.grid_shape = tuple(int(n) for n in grid_shape)
        dim = int(np.prod(self.grid_shape))
        super().__init__(dim, dim)

    def _apply(self, v):
        return hartley(v.reshape(self.grid_shape)).ravel()

    _adjoint = _apply


def grid_mode_bins(grid_shape: tuple[int, ...]):
    """Mode magnitudes |k| per grid point and their rounded-|k| bins."""
    axes = [np.abs(np.fft.fftfreq(n) * n) for n in grid_shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    kmag = np.sqrt(sum(m * m for m in mesh))
    bin_index = np.rint(kmag).astype(int)
    return kmag, bin_index, int(bin_index.max()) + 1


@dataclass(frozen=True)
class SpectrumModel:
    """Geometry and priors for a field with a learned isotropic spectrum.

    The spectrum lives on a 1-d axis of rounded-|k| bins.  The smooth
    log-spectrum component tau is a process on a regular grid over ln k,
    generated by ``wiener_amplitude`` (mapping its standard normal
    parameters to tau values per nonzero bin); the power-law part adds
    a * ln k + b with Gaussian priors on a and b.  The k = 0 bin carries
    no power-law term and inherits the value of the lowest nonzero bin.
    """

    grid_shape: tuple[int, ...]
    kmag: np.ndarray
    bin_index: np.ndarray
    n_bins: int
    bin_lnk: np.ndarray  # ln k for bins 1 .. n_bins-1
    tau_dim: int
    wiener_amplitude: LinearOperator  # tau params -> tau per nonzero bin
    abar: float
    sigma_a: float
    bbar: float
    sigma_b: float

    @property
    def grid_size(self) -> int:
        return int(np.prod(self.grid_shape))


def _log_axis_interpolation(bin_lnk: np.ndarray, tau_dim: int) -> np.ndarray:
    """Linear interpolation matrix from a regular ln-k grid onto the bins."""
    lo, hi = float(bin_lnk.min()), float(bin_lnk.max())
    if hi <= lo:
        return np.full((bin_lnk.size, tau_dim), 1.0 / tau_dim)
    grid = np.linspace(lo, hi, tau_dim)
    step = grid[1] - grid[0]
    w = np.zeros((bin_lnk.size, tau_dim))
    pos = np.clip((bin_lnk - lo) / step, 0.0, tau_dim - 1.0)
    left = np.minimum(pos.astype(int), tau_dim - 2)
    frac = pos - left
    w[np.arange(bin_lnk.size), left] = 1.0 - frac
    w[np.arange(bin_lnk.size), left + 1] = frac
    return w


def make_spectrum_model(
    grid_shape: tuple[int, ...],
    tau_dim: int = 64,
    abar: float = -3.0,
    sigma_a: float = 0.5,
    bbar: float = 0.0,
    sigma_b: float = 1.0,
    wiener_std: float = 1.0,
) -> SpectrumModel:
    """Set up the learned-spectrum geometry for a periodic grid.

    The tau process follows a power-law kernel with power four on its own
    harmonic axis (an integrated Wiener process on the logarithmic scale);
    ``wiener_std`` fixes its pointwise prior standard deviation.  Its zero
    mode is removed: a constant shift of tau is degenerate with b.
    """
    kmag, bin_index, n_bins = grid_mode_bins(grid_shape)
    if n_bins < 2:
        raise ValueError("grid too small: need at least one nonzero mode bin")
    if tau_dim < 2:
        raise ValueError("tau_dim must be at least 2")
    bin_lnk = np.log(np.arange(1, n_bins, dtype=np.float64))

    q = np.abs(np.fft.fftfreq(tau_dim) * tau_dim)
    power = np.zeros(tau_dim)
    nonzero = q > 0
    power[nonzero] = q[nonzero] ** -4.0
    power *= wiener_std**2 * tau_dim / power.sum()
    tau_on_grid = Composition(HartleyOperator((tau_dim,)), Diagonal(np.sqrt(power)))
    interp = Dense(_log_axis_interpolation(bin_lnk, tau_dim))

    return SpectrumModel(
        grid_shape=tuple(int(n) for n in grid_shape),
        kmag=kmag,
        bin_index=bin_index,
        n_bins=n_bins,
        bin_lnk=bin_lnk,
        tau_dim=int(tau_dim),
        wiener_amplitude=Composition(interp, tau_on_grid),
        abar=float(abar),
        sigma_a=float(sigma_a),
        bbar=float(bbar),
        sigma_b=float(sigma_b),
    )


def spectrum_values(sm: SpectrumModel, xi_a: float, xi_b: float, xi_tau) -> np.ndarray:
    """Spectrum p per bin for given standardized meta parameters."""
    a = sm.abar + sm.sigma_a * float(xi_a)
    b = sm.bbar + sm.sigma_b * float(xi_b)
    tau = sm.wiener_amplitude.apply(np.asarray(xi_tau, dtype=np.float64))
    log_p = a * sm.bin_lnk + b + tau
    p = np.empty(sm.n_bins)
    p[1:] = np.exp(log_p)
    p[0] = p[1]
    return p


def amplitude_operator_from_bins(
    grid_shape: tuple[int, ...], p_bins: np.ndarray
) -> LinearOperator:
    """The amplitude map xi -> F^-1 diag(sqrt p) xi for a fixed spectrum."""
    _, bin_index, n_bins = grid_mode_bins(grid_shape)
    p_bins = np.asarray(p_bins, dtype=np.float64)
    if p_bins.size != n_bins:
        raise ShapeError(f"expected {n_bins} spectrum bins, got {p_bins.size}")
    if np.any(p_bins < 0):
        raise ValueError("spectrum values must be non-negative")
    g = np.sqrt(p_bins)[bin_index].ravel()
    return Composition(HartleyOperator(grid_shape), Diagonal(g))


def build_spectrum_operator(
    sm: SpectrumModel, xi_a: float, xi_b: float, xi_tau
) -> LinearOperator:
    """Amplitude operator for the spectrum frozen at the given parameters."""
    return amplitude_operator_from_bins(
        sm.grid_shape, spectrum_values(sm, xi_a, xi_b, xi_tau)
    )


class ScaledSpectrumField(ModelPart):
    """Field with learned spectrum: (xi_s, xi_a, xi_b, xi_tau) -> grid field.

    forward = H (g(xi_a, xi_b, xi_tau) * xi_s)  with  g the per-mode square
    root of the spectrum and H the unitary harmonic transform.  The product
    structure couples the spectrum blocks to the field block, so jvp/vjp
    carry both branches.
    """

    def __init__(self, sm: SpectrumModel):
        self.sm = sm
        self.input_dim = sm.grid_size + 2 + sm.tau_dim
        self.output_dim = sm.grid_size

    def _split(self, x):
        g = self.sm.grid_size
        return x[:g], float(x[g]), float(x[g + 1]), x[g + 2 :]

    def _sqrt_p(self, xi_a, xi_b, xi_tau):
        sm = self.sm
        a = sm.abar + sm.sigma_a * xi_a
        b = sm.bbar + sm.sigma_b * xi_b
        tau = sm.wiener_amplitude.apply(xi_tau)
        sqrt_p = np.empty(sm.n_bins)
        sqrt_p[1:] = np.exp(0.5 * (a * sm.bin_lnk + b + tau))
        sqrt_p[0] = sqrt_p[1]
        return sqrt_p

    def forward(self, x):
        xs, xa, xb, xtau = self._split(x)
        g = self._sqrt_p(xa, xb, xtau)[self.sm.bin_index].ravel()
        return hartley((g * xs).reshape(self.sm.grid_shape)).ravel()

    def jvp(self, x, dx):
        sm = self.sm
        xs, xa, xb, xtau = self._split(x)
        dxs, dxa, dxb, dxtau = self._split(dx)
        sqrt_p = self._sqrt_p(xa, xb, xtau)
        dlog_p = (
            sm.sigma_a * dxa * sm.bin_lnk
            + sm.sigma_b * dxb
            + sm.wiener_amplitude.apply(dxtau)
        )
        dsqrt = np.empty(sm.n_bins)
        dsqrt[1:] = 0.5 * sqrt_p[1:] * dlog_p
        dsqrt[0] = dsqrt[1]
        g = sqrt_p[sm.bin_index].ravel()
        dg = dsqrt[sm.bin_index].ravel()
        return hartley((g * dxs + dg * xs).reshape(sm.grid_shape)).ravel()

    def vjp(self, x, cotangent):
        sm = self.sm
        xs, xa, xb, xtau = self._split(x)
        sqrt_p = self._sqrt_p(xa, xb, xtau)
        g = sqrt_p[sm.bin_index].ravel()
        v = hartley(cotangent.reshape(sm.grid_shape)).ravel()
        c_bins = np.bincount(
            sm.bin_index.ravel(), weights=v * xs, minlength=sm.n_bins
        )
        c_bins[1] += c_bins[0]  # adjoint of the k=0 copy rule
        dlog_p_cot = 0.5 * sqrt_p[1:] * c_bins[1:]
        out = np.empty(self.input_dim)
        out[: sm.grid_size] = g * v
        out[sm.grid_size] = sm.sigma_a * float(dlog_p_cot @ sm.bin_lnk)
        out[sm.grid_size + 1] = sm.sigma_b * float(dlog_p_cot.sum())
        out[sm.grid_size + 2 :] = sm.wiener_amplitude.adjoint_apply(dlog_p_cot)
        return out


class MatrixProductPart(ModelPart):
    """Bilinear stage (M, C) -> M @ C on flattened matrix blocks."""

    def __init__(self, n_rows: int, n_inner: int, n_cols: int):
        self.n_rows, self.n_inner, self.n_cols = int(n_rows), int(n_inner), int(n_cols)
        self.input_dim = n_rows * n_inner + n_inner * n_cols
        self.output_dim = n_rows * n_cols

    def _split(self, x):
        cut = self.n_rows * self.n_inner
        m = x[:cut].reshape(self.n_rows, self.n_inner)
        c = x[cut:].reshape(self.n_inner, self.n_cols)
        return m, c

    def forward(self, x):
        m, c = self._split(x)
        return (m @ c).ravel()

    def jvp(self, x, dx):
        m, c = self._split(x)
        dm, dc = self._split(dx)
        return (dm @ c + m @ dc).ravel()

    def vjp(self, x, cotangent):
        m, c = self._split(x)
        u = cotangent.reshape(self.n_rows, self.n_cols)
        return np.concatenate([(u @ c.T).ravel(), (m.T @ u).ravel()])


class HierarchicalLogitPart(ModelPart):
    """Linear predictor for the grouped logistic regression model.

    Latent order: intercept, gender, ethnicity, per-state offsets, and one
    scale parameter.  The shared state-offset scale has a uniform prior on
    the unit interval, standardized through the Gaussian CDF, so the
    predictor is  b0 + x_g b_g + x_e b_e + Phi(xi_scale) * xi_state[state].
    """

    def __init__(self, x_gender, x_ethnicity, state_index, n_states: int):
        self.x_gender = np.asarray(x_gender, dtype=np.float64)
        self.x_ethnicity = np.asarray(x_ethnicity, dtype=np.float64)
        self.state_index = np.asarray(state_index, dtype=int)
        if not (self.x_gender.shape == self.x_ethnicity.shape == self.state_index.shape):
            raise ShapeError("record columns must share one length")
        if self.state_index.min() < 0 or self.state_index.max() >= n_states:
            raise ValueError("state index out of range")
        self.n_states = int(n_states)
        self.input_dim = 3 + self.n_states + 1
        self.output_dim = self.x_gender.size

    def _split(self, x):
        s = self.n_states
        return x[0], x[1], x[2], x[3 : 3 + s], float(x[3 + s])

    def forward(self, x):
        b0, bg, be, bs, xs = self._split(x)
        scale = gaussian_cdf(xs)
        return b0 + self.x_gender * bg + self.x_ethnicity * be + scale * bs[self.state_index]

    def jvp(self, x, dx):
        b0, bg, be, bs, xs = self._split(x)
        db0, dbg, dbe, dbs, dxs = self._split(dx)
        scale = gaussian_cdf(xs)
        return (
            db0
            + self.x_gender * dbg
            + self.x_ethnicity * dbe
            + scale * dbs[self.state_index]
            + gaussian_pdf(xs) * dxs * bs[self.state_index]
        )

    def vjp(self, x, cotangent):
        b0, bg, be, bs, xs = self._split(x)
        scale = gaussian_cdf(xs)
        out = np.empty(self.input_dim)
        out[0] = cotangent.sum()
        out[1] = float(self.x_gender @ cotangent)
        out[2] = float(self.x_ethnicity @ cotangent)
        out[3 : 3 + self.n_states] = scale * np.bincount(
            self.state_index, weights=cotangent, minlength=self.n_states
        )
        out[3 + self.n_states] = gaussian_pdf(xs) * float(
            cotangent @ bs[self.state_index]
        )
        return out


class ModelJacobian(LinearOperator):
    """The model linearization frozen at one latent point."""

    kind = "model-jacobian"

    def __init__(self, part: ModelPart, point: np.ndarray):
        super().__init__(part.input_dim, part.output_dim)
        self.part = part
        self.point = np.array(point, dtype=np.float64)
        self.point.flags.writeable = False

    def _apply(self, v):
        return self.part.jvp(self.point, v)

    def _adjoint(self, w):
        return self.part.vjp(self.point, w)


class StandardizedModel:
    """A block layout plus the differentiable map from latents to outputs."""

    def __init__(self, layout: BlockLayout, part: ModelPart):
        if part.input_dim != layout.total_dim:
            raise ShapeError(
                f"model input dim {part.input_dim} != layout dim {layout.total_dim}"
            )
        self.layout = layout
        self.part = part

    @property
    def input_dim(self) -> int:
        return self.part.input_dim

    @property
    def output_dim(self) -> int:
        return self.part.output_dim

    def wrap(self, flat) -> LatentVector:
        return LatentVector(self.layout, np.asarray(flat, dtype=np.float64))

    def forward(self, xi) -> np.ndarray:
        return self.part.forward(as_flat(xi))

    def jvp(self, xi, dxi) -> np.ndarray:
        return self.part.jvp(as_flat(xi), as_flat(dxi))

    def vjp(self, xi, cotangent) -> np.ndarray:
        cot = np.asarray(cotangent, dtype=np.float64).ravel()
        if cot.size != self.output_dim:
            raise ShapeError(
                f"cotangent has size {cot.size}, model output is {self.output_dim}"
            )
        return self.part.vjp(as_flat(xi), cot)

    def vjp_blocks(self, xi, cotangent) -> LatentVector:
        return self.wrap(self.vjp(xi, cotangent))

    def jacobian_operator(self, xi) -> ModelJacobian:
        return ModelJacobian(self.part, as_flat(xi))


def linear_model(layout: BlockLayout, op: LinearOperator) -> StandardizedModel:
    return StandardizedModel(layout, LinearPart(op))


def single_block_layout(name: str, shape: tuple[int, ...]) -> BlockLayout:
    return BlockLayout.of((name, shape))
