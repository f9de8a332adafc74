"""Benchmark problem builders at desk scale.

Each builder assembles a standardized model, draws synthetic ground truth
and data from it, splits off held-out points, and returns everything
bundled as a :class:`Problem`.  Generation is bit-reproducible from the
spec seed.  ``tiny_problem`` provides shrunken instances (latent
dimension <= 16) of every problem for dense-matrix oracle checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baselines import MAPConfig, MeanFieldConfig
from .inference import MGVIConfig, derived_rng
from .latent import BlockLayout, LatentVector
from .likelihood import (
    Dataset,
    Likelihood,
    bernoulli_likelihood,
    gaussian_likelihood,
    poisson_likelihood,
)
from .linop import Dense, Identity
from .model import (
    ChainModel,
    HierarchicalLogitPart,
    LinearPart,
    MatrixProductPart,
    ScaledSpectrumField,
    StandardizedModel,
    amplitude_operator_from_bins,
    exp_part,
    gamma_reparam_part,
    grid_mode_bins,
    make_spectrum_model,
    tanh_sigmoid_part,
)
from .solver import CGConfig

_TAG_TRUTH = 11
_TAG_DATA = 12
_TAG_MASK = 13

PRESET_NAMES = (
    "poisson_lognormal",
    "binary_gp",
    "nmf",
    "logistic_regression",
    "linear_gaussian",
    "zero_data",
    "conjugate_1d",
)


class IngestionError(ValueError):
    """Malformed tabular input, reported with the offending row."""


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dims: dict
    priors: dict
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass
class Problem:
    """A built benchmark instance: model, data splits and ground truth."""

    name: str
    spec: ProblemSpec
    model: StandardizedModel
    likelihood: Likelihood
    heldout: Likelihood
    truth: dict
    field_label: str = "field"
    field_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def field(self, xi) -> np.ndarray:
        """The reported derived field for a latent vector."""
        x = xi.values if isinstance(xi, LatentVector) else np.asarray(xi, float)
        if self.field_fn is not None:
            return self.field_fn(x)
        return self.model.forward(x)

    def field_stats(self, samples: list[LatentVector]):
        stack = np.stack([self.field(s) for s in samples])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 else np.zeros_like(mean)
        return mean, std


def _holdout_split(n_points: int, fraction: float, rng) -> np.ndarray:
    """Boolean held-out mask covering round(fraction * n) random points."""
    heldout = np.zeros(n_points, dtype=bool)
    n_held = int(round(fraction * n_points))
    if n_held > 0:
        heldout[rng.choice(n_points, size=n_held, replace=False)] = True
    return heldout


def squared_exponential_spectrum(n_bins: int, sigma: float, length_scale: float):
    """Gaussian-kernel spectral density on integer mode bins."""
    k = np.arange(n_bins, dtype=np.float64)
    return np.sqrt(2.0 * np.pi) * sigma**2 * length_scale * np.exp(
        -2.0 * np.pi * length_scale**2 * k**2
    )


def default_spec(name: str, seed: int = 0) -> ProblemSpec:
    """The shipped desk-scale configuration for each preset."""
    if name == "poisson_lognormal":
        return ProblemSpec(
            name,
            dims={"grid": 128},
            priors={"sigma": 1.0, "length_scale": 0.05},
            holdout_fraction=0.1,
            seed=seed,
        )
    if name == "binary_gp":
        return ProblemSpec(
            name,
            dims={"grid": 128, "tau": 64, "tile": 16},
            priors={
                "abar": -3.0,
                "sigma_a": 0.5,
                "bbar": 0.0,
                "sigma_b": 1.0,
                "wiener_std": 1.0,
            },
            holdout_fraction=0.0,
            seed=seed,
        )
    if name == "nmf":
        return ProblemSpec(
            name,
            dims={"frames": 50, "pixels": 64, "components": 3},
            priors={"alpha": 1.0, "beta": 1.0},
            holdout_fraction=0.1,
            seed=seed,
        )
    if name == "logistic_regression":
        return ProblemSpec(
            name,
            dims={"states": 12, "records": 1200},
            priors={
                "beta0": 0.4,
                "beta_gender": -0.5,
                "beta_ethnicity": 0.8,
                "state_scale": 0.3,
            },
            holdout_fraction=0.1,
            seed=seed,
        )
    if name == "linear_gaussian":
        return ProblemSpec(
            name,
            dims={"dim": 32},
            priors={"noise_variance": 0.1},
            holdout_fraction=0.0,
            seed=seed,
        )
    if name == "zero_data":
        return ProblemSpec(
            name,
            dims={"dim": 64},
            priors={"noise_variance": 1.0},
            holdout_fraction=0.0,
            seed=seed,
        )
    if name == "conjugate_1d":
        return ProblemSpec(
            name,
            dims={"dim": 1},
            priors={"noise_variance": 1.0, "data_value": 1.0},
            holdout_fraction=0.0,
            seed=seed,
        )
    raise ValueError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")


def build_poisson_lognormal(spec: ProblemSpec) -> Problem:
    """Count data with a log-Gaussian rate and a fixed squared-exponential kernel."""
    n = int(spec.dims["grid"])
    if n < 2 or n & (n - 1):
        raise ValueError("grid size must be a power of two")
    sigma = float(spec.priors.get("sigma", 1.0))
    length_scale = float(spec.priors.get("length_scale", 0.05))
    _, _, n_bins = grid_mode_bins((n,))
    p_bins = squared_exponential_spectrum(n_bins, sigma, length_scale)
    amplitude = amplitude_operator_from_bins((n,), p_bins)
    layout = BlockLayout.of(("s", (n,)))
    model = StandardizedModel(layout, ChainModel([LinearPart(amplitude), exp_part(n)]))

    xi_true = derived_rng(spec.seed, _TAG_TRUTH).standard_normal(n)
    rate_true = model.forward(xi_true)
    counts = derived_rng(spec.seed, _TAG_DATA).poisson(rate_true).astype(np.float64)
    heldout_mask = _holdout_split(
        n, spec.holdout_fraction, derived_rng(spec.seed, _TAG_MASK)
    )
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=poisson_likelihood(counts, mask=~heldout_mask),
        heldout=poisson_likelihood(counts, mask=heldout_mask),
        truth={
            "xi_true": xi_true,
            "rate": rate_true,
            "field": np.log(rate_true),
            "spectrum": p_bins,
        },
        field_label="log_rate",
        field_fn=lambda x, _m=model: np.log(_m.forward(x)),
    )


def _checkerboard(side: int, tile: int) -> np.ndarray:
    ix, iy = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return ((ix // tile + iy // tile) % 2 == 0).ravel()


def build_binary_gp(spec: ProblemSpec) -> Problem:
    """Binary classification on a 2-d grid with a learned isotropic kernel.

    Observations cover half the grid in checkerboard tiles; the held-out
    likelihood is the complementary half, so predictivity measures how
    well the unobserved tiles are filled in.
    """
    side = int(spec.dims["grid"])
    if side < 2 or side & (side - 1):
        raise ValueError("grid side must be a power of two")
    tau_dim = int(spec.dims.get("tau", 64))
    tile = int(spec.dims.get("tile", max(side // 8, 1)))
    sm = make_spectrum_model(
        (side, side),
        tau_dim=tau_dim,
        abar=float(spec.priors.get("abar", -3.0)),
        sigma_a=float(spec.priors.get("sigma_a", 0.5)),
        bbar=float(spec.priors.get("bbar", 0.0)),
        sigma_b=float(spec.priors.get("sigma_b", 1.0)),
        wiener_std=float(spec.priors.get("wiener_std", 1.0)),
    )
    layout = BlockLayout.of(
        ("s", (side, side)), ("a", (1,)), ("b", (1,)), ("tau", (tau_dim,))
    )
    model = StandardizedModel(
        layout, ChainModel([ScaledSpectrumField(sm), tanh_sigmoid_part(side * side)])
    )

    xi_true = derived_rng(spec.seed, _TAG_TRUTH).standard_normal(layout.total_dim)
    rate_true = model.forward(xi_true)
    draws = derived_rng(spec.seed, _TAG_DATA).random(rate_true.size)
    data = (draws < rate_true).astype(np.float64)
    observed = _checkerboard(side, tile)
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=bernoulli_likelihood(data, mask=observed),
        heldout=bernoulli_likelihood(data, mask=~observed),
        truth={"xi_true": xi_true, "field": rate_true, "observed": observed},
        field_label="rate",
    )


def build_nmf(spec: ProblemSpec) -> Problem:
    """Gamma-Poisson matrix factorization on a small synthetic instance.

    Ten percent of the entries are masked at random for the predictive
    metric and the bottom half of the first frame is covered entirely;
    training sees the remainder.
    """
    n_frames = int(spec.dims["frames"])
    n_pixels = int(spec.dims["pixels"])
    n_comp = int(spec.dims["components"])
    if min(n_frames, n_pixels, n_comp) < 1:
        raise ValueError("nmf dimensions must be positive")
    alpha = float(spec.priors.get("alpha", 1.0))
    beta = float(spec.priors.get("beta", 1.0))
    layout = BlockLayout.of(("mix", (n_frames, n_comp)), ("comp", (n_comp, n_pixels)))
    total = layout.total_dim
    model = StandardizedModel(
        layout,
        ChainModel(
            [
                gamma_reparam_part(total, alpha, beta),
                MatrixProductPart(n_frames, n_comp, n_pixels),
            ]
        ),
    )

    xi_true = derived_rng(spec.seed, _TAG_TRUTH).standard_normal(total)
    intensity = model.forward(xi_true)
    counts = derived_rng(spec.seed, _TAG_DATA).poisson(intensity).astype(np.float64)

    n_entries = n_frames * n_pixels
    masked = _holdout_split(
        n_entries, spec.holdout_fraction, derived_rng(spec.seed, _TAG_MASK)
    )
    covered = np.zeros((n_frames, n_pixels), dtype=bool)
    covered[0, n_pixels // 2 :] = True  # bottom part of one frame fully covered
    masked |= covered.ravel()
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=poisson_likelihood(counts, mask=~masked),
        heldout=poisson_likelihood(counts, mask=masked),
        truth={"xi_true": xi_true, "field": intensity},
        field_label="intensity",
    )


def synthetic_poll_records(
    n_records: int,
    n_states: int,
    seed: int,
    beta0: float = 0.4,
    beta_gender: float = -0.5,
    beta_ethnicity: float = 0.8,
    state_scale: float = 0.3,
) -> dict:
    """Records shaped like the 1988 polling table, drawn from known coefficients."""
    rng = derived_rng(seed, _TAG_DATA, 1)
    gender = (rng.random(n_records) < 0.5).astype(np.float64)
    ethnicity = (rng.random(n_records) < 0.2).astype(np.float64)
    state = rng.integers(1, n_states + 1, size=n_records)
    beta_state = state_scale * rng.standard_normal(n_states)
    eta = (
        beta0
        + gender * beta_gender
        + ethnicity * beta_ethnicity
        + beta_state[state - 1]
    )
    mu = 0.5 * (1.0 + np.tanh(eta))
    vote = (rng.random(n_records) < mu).astype(np.float64)
    return {
        "gender": gender,
        "ethnicity": ethnicity,
        "state": state,
        "vote": vote,
        "beta_state": beta_state,
    }


def read_records_csv(path) -> dict:
    """Comma-delimited records with a header row; unknown columns ignored."""
    required = ("gender", "ethnicity", "state", "vote")
    rows = {name: [] for name in required}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or any(
            c not in reader.fieldnames for c in required
        ):
            raise IngestionError(
                f"header must name the columns {', '.join(required)}; "
                f"got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            try:
                gender = int(row["gender"])
                ethnicity = int(row["ethnicity"])
                state = int(row["state"])
                vote = int(row["vote"])
                if gender not in (0, 1) or ethnicity not in (0, 1):
                    raise ValueError("gender and ethnicity must be 0 or 1")
                if vote not in (0, 1):
                    raise ValueError("vote must be 0 or 1")
                if state < 1:
                    raise ValueError("state labels start at 1")
            except (TypeError, ValueError) as exc:
                raise IngestionError(f"row {line_no}: {exc} ({row})") from exc
            rows["gender"].append(gender)
            rows["ethnicity"].append(ethnicity)
            rows["state"].append(state)
            rows["vote"].append(vote)
    if not rows["gender"]:
        raise IngestionError("no data rows found")
    return {k: np.asarray(v, dtype=np.float64) for k, v in rows.items()}


def write_records_csv(path, records: dict) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["gender", "ethnicity", "state", "vote"])
        for g, e, s, v in zip(
            records["gender"], records["ethnicity"], records["state"], records["vote"]
        ):
            writer.writerow([int(g), int(e), int(s), int(v)])


def build_logistic_regression(spec: ProblemSpec, records: dict | None = None) -> Problem:
    """Grouped logistic regression with a shared state-offset scale."""
    if records is None:
        records = synthetic_poll_records(
            int(spec.dims["records"]),
            int(spec.dims["states"]),
            spec.seed,
            beta0=float(spec.priors.get("beta0", 0.4)),
            beta_gender=float(spec.priors.get("beta_gender", -0.5)),
            beta_ethnicity=float(spec.priors.get("beta_ethnicity", 0.8)),
            state_scale=float(spec.priors.get("state_scale", 0.3)),
        )
    state = np.asarray(records["state"], dtype=int)
    n_states = max(int(spec.dims.get("states", state.max())), int(state.max()))
    n_records = state.size
    layout = BlockLayout.of(
        ("intercept", (1,)),
        ("gender", (1,)),
        ("ethnicity", (1,)),
        ("state", (n_states,)),
        ("state_scale", (1,)),
    )
    part = HierarchicalLogitPart(
        records["gender"], records["ethnicity"], state - 1, n_states
    )
    model = StandardizedModel(
        layout, ChainModel([part, tanh_sigmoid_part(n_records)])
    )
    heldout_mask = _holdout_split(
        n_records, spec.holdout_fraction, derived_rng(spec.seed, _TAG_MASK)
    )
    vote = np.asarray(records["vote"], dtype=np.float64)
    truth = {"records": records}
    for key in ("beta_state",):
        if key in records:
            truth[key] = records[key]
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=bernoulli_likelihood(vote, mask=~heldout_mask),
        heldout=bernoulli_likelihood(vote, mask=heldout_mask),
        truth=truth,
        field_label="rate",
    )


def build_linear_gaussian(spec: ProblemSpec) -> Problem:
    """Conjugate check problem: d = R xi + n with known posterior."""
    dim = int(spec.dims["dim"])
    noise_variance = float(spec.priors.get("noise_variance", 0.1))
    rng = derived_rng(spec.seed, _TAG_TRUTH)
    response = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    xi_true = rng.standard_normal(dim)
    data = response @ xi_true + np.sqrt(noise_variance) * derived_rng(
        spec.seed, _TAG_DATA
    ).standard_normal(dim)

    precision = response.T @ response / noise_variance + np.eye(dim)
    covariance = np.linalg.inv(precision)
    posterior_mean = covariance @ (response.T @ data / noise_variance)

    layout = BlockLayout.of(("xi", (dim,)))
    model = StandardizedModel(layout, LinearPart(Dense(response)))
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=gaussian_likelihood(data, noise_variance),
        heldout=gaussian_likelihood(data, noise_variance, mask=np.zeros(dim, bool)),
        truth={
            "xi_true": xi_true,
            "field": posterior_mean,
            "posterior_mean": posterior_mean,
            "posterior_cov": covariance,
            "response": response,
        },
        field_label="latent",
        field_fn=lambda x: x.copy(),
    )


def build_zero_data(spec: ProblemSpec) -> Problem:
    """Fully masked likelihood: the posterior is the standard normal prior."""
    dim = int(spec.dims["dim"])
    layout = BlockLayout.of(("xi", (dim,)))
    model = StandardizedModel(layout, LinearPart(Identity(dim)))
    none = np.zeros(dim, dtype=bool)
    lik = gaussian_likelihood(np.zeros(dim), spec.priors.get("noise_variance", 1.0), none)
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=lik,
        heldout=lik,
        truth={"xi_true": np.zeros(dim), "field": np.zeros(dim)},
        field_label="latent",
        field_fn=lambda x: x.copy(),
    )


def build_conjugate_1d(spec: ProblemSpec) -> Problem:
    """One data point d = xi + n with unit noise: mean d/2, std 1/sqrt(2)."""
    data_value = float(spec.priors.get("data_value", 1.0))
    noise_variance = float(spec.priors.get("noise_variance", 1.0))
    layout = BlockLayout.of(("xi", (1,)))
    model = StandardizedModel(layout, LinearPart(Identity(1)))
    return Problem(
        name=spec.name,
        spec=spec,
        model=model,
        likelihood=gaussian_likelihood(np.array([data_value]), noise_variance),
        heldout=gaussian_likelihood(
            np.array([data_value]), noise_variance, mask=np.zeros(1, bool)
        ),
        truth={
            "xi_true": np.array([data_value / 2.0]),
            "field": np.array([data_value / 2.0]),
            "posterior_mean": data_value / 2.0,
            "posterior_std": 1.0 / np.sqrt(2.0),
        },
        field_label="latent",
        field_fn=lambda x: x.copy(),
    )


_BUILDERS = {
    "poisson_lognormal": build_poisson_lognormal,
    "binary_gp": build_binary_gp,
    "nmf": build_nmf,
    "logistic_regression": build_logistic_regression,
    "linear_gaussian": build_linear_gaussian,
    "zero_data": build_zero_data,
    "conjugate_1d": build_conjugate_1d,
}


def build_problem(spec: ProblemSpec, records: dict | None = None) -> Problem:
    if spec.name not in _BUILDERS:
        raise ValueError(f"unknown problem {spec.name!r}")
    if spec.name == "logistic_regression":
        return build_logistic_regression(spec, records)
    return _BUILDERS[spec.name](spec)


def build_preset(name: str, seed: int = 0) -> Problem:
    return build_problem(default_spec(name, seed))


def tiny_spec(name: str, seed: int = 0) -> ProblemSpec:
    """Shrunken instances with latent dimension <= 16 for dense oracles."""
    base = default_spec(name, seed)
    if name == "poisson_lognormal":
        dims = {"grid": 16}
    elif name == "binary_gp":
        dims = {"grid": 2, "tau": 4, "tile": 1}
    elif name == "nmf":
        dims = {"frames": 2, "pixels": 3, "components": 1}
    elif name == "logistic_regression":
        dims = {"states": 2, "records": 24}
    else:
        dims = {"dim": min(base.dims.get("dim", 16), 16)}
    return ProblemSpec(
        name, dims=dims, priors=base.priors, holdout_fraction=base.holdout_fraction,
        seed=seed,
    )


def tiny_problem(name: str, seed: int = 0) -> Problem:
    return build_problem(tiny_spec(name, seed))


def _growth_schedule(start_value: int, grow_from: int, grow_for: int):
    """+1 per iteration starting at ``grow_from``, for ``grow_for`` steps."""
    entries = [(0, start_value)]
    entries += [(grow_from + j, start_value + 1 + j) for j in range(grow_for)]
    return tuple(entries)


def preset_mgvi_config(name: str, seed: int = 0) -> MGVIConfig:
    """The shipped sample/step/CG schedules, following the run-time
    heuristics of the reference experiments: start with a single
    antithetic pair and few steps, grow both after twenty global
    iterations, and tighten the sampling accuracy by a factor of four."""
    if name == "poisson_lognormal":
        return MGVIConfig(
            global_iterations=35,
            samples_schedule=_growth_schedule(1, 20, 10),
            sampling_cg=(
                (0, CGConfig(max_iterations=25)),
                (22, CGConfig(max_iterations=50)),
                (26, CGConfig(max_iterations=75)),
                (30, CGConfig(max_iterations=100)),
            ),
            natural_gradient_steps_schedule=_growth_schedule(3, 20, 10),
            natural_gradient_cg=CGConfig(
                max_iterations=100, relative_residual_tolerance=1e-7
            ),
            seed=seed,
        )
    if name == "binary_gp":
        return MGVIConfig(
            global_iterations=20,
            samples_schedule=((0, 1), (12, 2), (16, 3)),
            sampling_cg=(
                (0, CGConfig(max_iterations=30)),
                (12, CGConfig(max_iterations=60)),
                (16, CGConfig(max_iterations=100)),
            ),
            natural_gradient_steps_schedule=((0, 3),),
            natural_gradient_cg=CGConfig(
                max_iterations=60, relative_residual_tolerance=1e-6
            ),
            convergence_tolerance=0.0,
            seed=seed,
        )
    if name == "nmf":
        return MGVIConfig(
            global_iterations=30,
            samples_schedule=_growth_schedule(1, 20, 6),
            sampling_cg=(
                (0, CGConfig(max_iterations=50)),
                (20, CGConfig(max_iterations=100)),
                (26, CGConfig(max_iterations=200)),
            ),
            natural_gradient_steps_schedule=((0, 10),),
            natural_gradient_cg=CGConfig(
                max_iterations=150, relative_residual_tolerance=1e-7
            ),
            seed=seed,
        )
    if name == "logistic_regression":
        return MGVIConfig(
            global_iterations=30,
            samples_schedule=_growth_schedule(1, 20, 8),
            sampling_cg=(
                (0, CGConfig(max_iterations=25)),
                (22, CGConfig(max_iterations=50)),
                (28, CGConfig(max_iterations=100)),
            ),
            natural_gradient_steps_schedule=_growth_schedule(3, 20, 8),
            natural_gradient_cg=CGConfig(
                max_iterations=100, relative_residual_tolerance=1e-7
            ),
            seed=seed,
        )
    if name == "linear_gaussian":
        tight = CGConfig(max_iterations=128, relative_residual_tolerance=1e-12)
        return MGVIConfig(
            global_iterations=6,
            samples_schedule=((0, 2),),
            sampling_cg=((0, tight),),
            natural_gradient_steps_schedule=((0, 3),),
            natural_gradient_cg=tight,
            convergence_tolerance=1e-10,
            seed=seed,
        )
    if name in ("zero_data", "conjugate_1d"):
        tight = CGConfig(max_iterations=80, relative_residual_tolerance=1e-12)
        return MGVIConfig(
            global_iterations=4,
            samples_schedule=((0, 1),),
            sampling_cg=((0, tight),),
            natural_gradient_steps_schedule=((0, 2),),
            natural_gradient_cg=tight,
            convergence_tolerance=1e-9,
            seed=seed,
        )
    raise ValueError(f"no mgvi preset for {name!r}")


def preset_map_config(name: str, seed: int = 0) -> MAPConfig:
    return MAPConfig(max_steps=200, gradient_tolerance=1e-8, seed=seed)


def preset_meanfield_config(name: str, seed: int = 0) -> MeanFieldConfig:
    if name == "conjugate_1d":
        return MeanFieldConfig(
            steps=50_000,
            draws_per_step=4,
            average_tail_fraction=0.5,
            trace_every=500,
            seed=seed,
        )
    if name in ("zero_data", "linear_gaussian"):
        return MeanFieldConfig(
            steps=20_000, average_tail_fraction=0.3, trace_every=200, seed=seed
        )
    if name == "binary_gp":
        return MeanFieldConfig(steps=2_000, trace_every=20, seed=seed)
    return MeanFieldConfig(steps=4_000, trace_every=50, seed=seed)
