"""Batch command line: run presets or config files, write reports and traces.

Subcommands: ``run``, ``compare``, ``oracle-check``, ``list-presets``.
Configuration files are flat ``key = value`` text with one section per
module config; every field has a default, so presets run with zero
edits.  Report files contain only seed-deterministic fields; wall-clock
timings go to the trace files, one record per natural-gradient step (or
per trace interval for the stochastic baseline).
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
import traceback
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .baselines import (
    MAPConfig,
    MeanFieldConfig,
    laplace_samples,
    map_estimate,
    meanfield_samples,
    meanfield_vi,
)
from .inference import MGVIConfig, LineSearchConfig, derived_rng, run
from .latent import LatentVector
from .metrics import avg_significance, predictive_likelihood, rms
from .oracle_suite import run_oracle_suite
from .problems import (
    PRESET_NAMES,
    IngestionError,
    Problem,
    ProblemSpec,
    build_problem,
    default_spec,
    preset_map_config,
    preset_meanfield_config,
    preset_mgvi_config,
    read_records_csv,
)
from .serialization import (
    read_report,
    write_field_csv,
    write_report,
    write_samples,
    write_trace,
)
from .solver import CGConfig

METHODS = ("mgvi", "map", "laplace", "meanfield")
EMIT_CHOICES = ("report", "samples", "trace", "field_csv")
TRACE_COLUMNS = [
    "method",
    "wall_time_s",
    "global_iteration",
    "step_index",
    "kl",
    "gradient_norm",
    "step_size",
    "cg_iterations",
    "rms",
    "avg_significance",
    "predictive_ll_samples",
    "predictive_ll_mean",
]

_STD_FLOOR = 1e-12  # trace-only guard against zero sample spread


class ConfigError(ValueError):
    """Invalid run configuration (bad field, value or section)."""


@dataclass
class LaplaceConfig:
    map_config: MAPConfig
    n_samples: int = 100
    cg: CGConfig = CGConfig(max_iterations=200, relative_residual_tolerance=1e-10)


@dataclass
class RunSetup:
    spec: ProblemSpec
    method: str
    seed: int
    threads: int
    out_dir: Path
    emit: tuple[str, ...]
    overrides: dict
    records_path: str | None = None


def _parse_schedule(text: str, name: str):
    entries = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            left, _, right = chunk.partition(":")
            entries.append((int(left), int(right)))
        except ValueError as exc:
            raise ConfigError(
                f"{name}: expected 'iteration:value' pairs, got {chunk!r}"
            ) from exc
    if not entries:
        raise ConfigError(f"{name}: empty schedule")
    return tuple(entries)


def _coerce(section: str, key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind == "schedule":
            return _parse_schedule(raw, f"{section}.{key}")
        return raw
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected {kind}, got {raw!r}") from exc


_MGVI_KEYS = {
    "global_iterations": "int",
    "samples_schedule": "schedule",
    "antithetic": "bool",
    "sampling_cg": "schedule",
    "sampling_cg_rtol": "float",
    "natural_gradient_steps_schedule": "schedule",
    "natural_gradient_cg_max_iterations": "int",
    "natural_gradient_cg_rtol": "float",
    "convergence_tolerance": "float",
    "init_scale": "float",
    "line_search_initial_step": "float",
    "line_search_shrink_factor": "float",
    "line_search_max_trials": "int",
    "line_search_sufficient_decrease": "float",
}
_MAP_KEYS = {
    "max_steps": "int",
    "gradient_tolerance": "float",
    "init_scale": "float",
    "cg_max_iterations": "int",
    "cg_rtol": "float",
}
_MEANFIELD_KEYS = {
    "steps": "int",
    "draws_per_step": "int",
    "step_size": "float",
    "step_decay_tau": "float",
    "log_std_init": "float",
    "average_tail_fraction": "float",
    "trace_every": "int",
}
_LAPLACE_KEYS = dict(_MAP_KEYS, n_samples="int")


def _read_section(parser: configparser.ConfigParser, name: str, allowed: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in allowed:
            raise ConfigError(
                f"[{name}] unknown field {key!r}; allowed: {', '.join(sorted(allowed))}"
            )
        out[key] = _coerce(name, key, raw, allowed[key])
    return out


def load_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    sections: dict = {}
    sections["problem"] = _read_section(
        parser,
        "problem",
        {
            "preset": "str",
            "seed": "int",
            "holdout_fraction": "float",
            "records": "str",
        },
    )
    for sub in ("problem.dims", "problem.priors"):
        if parser.has_section(sub):
            kind = "int" if sub.endswith("dims") else "float"
            sections[sub] = {
                k: _coerce(sub, k, v, kind) for k, v in parser.items(sub)
            }
    sections["method"] = _read_section(
        parser, "method", {"name": "str", "threads": "int"}
    )
    sections["mgvi"] = _read_section(parser, "mgvi", _MGVI_KEYS)
    sections["map"] = _read_section(parser, "map", _MAP_KEYS)
    sections["meanfield"] = _read_section(parser, "meanfield", _MEANFIELD_KEYS)
    sections["laplace"] = _read_section(parser, "laplace", _LAPLACE_KEYS)
    sections["output"] = _read_section(
        parser, "output", {"dir": "str", "emit": "str"}
    )
    known = {
        "problem",
        "problem.dims",
        "problem.priors",
        "method",
        "mgvi",
        "map",
        "meanfield",
        "laplace",
        "output",
    }
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown config section [{name}]")
    return sections


def resolve_setup(args) -> RunSetup:
    sections = load_config_file(args.config) if args.config else {}
    problem_section = sections.get("problem", {})

    preset = args.preset or problem_section.get("preset")
    if preset is None:
        raise ConfigError("no problem selected: pass --preset or a config file")
    if preset not in PRESET_NAMES:
        raise ConfigError(
            f"unknown preset {preset!r}; known: {', '.join(PRESET_NAMES)}"
        )
    seed = args.seed if args.seed is not None else problem_section.get("seed", 0)
    spec = default_spec(preset, seed=seed)
    if "holdout_fraction" in problem_section:
        spec = replace(spec, holdout_fraction=problem_section["holdout_fraction"])
    if sections.get("problem.dims"):
        spec = replace(spec, dims={**spec.dims, **sections["problem.dims"]})
    if sections.get("problem.priors"):
        spec = replace(spec, priors={**spec.priors, **sections["problem.priors"]})

    method_section = sections.get("method", {})
    method = args.method or method_section.get("name", "mgvi")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; known: {', '.join(METHODS)}")
    threads = args.threads or method_section.get("threads") or os.cpu_count() or 1

    output_section = sections.get("output", {})
    out_dir = Path(args.out or output_section.get("dir", "mgvi_out"))
    emit_raw = output_section.get("emit", "report,samples,trace")
    if getattr(args, "emit", None):
        emit_raw = args.emit
    emit = tuple(e.strip() for e in emit_raw.split(",") if e.strip())
    for e in emit:
        if e not in EMIT_CHOICES:
            raise ConfigError(f"unknown emit target {e!r}; allowed: {EMIT_CHOICES}")

    return RunSetup(
        spec=spec,
        method=method,
        seed=seed,
        threads=int(threads),
        out_dir=out_dir,
        emit=emit,
        overrides=sections,
        records_path=problem_section.get("records"),
    )


def make_mgvi_config(setup: RunSetup) -> MGVIConfig:
    config = preset_mgvi_config(setup.spec.name, seed=setup.seed)
    o = setup.overrides.get("mgvi", {})
    if not o:
        return config
    kwargs = {}
    for key in ("global_iterations", "antithetic", "convergence_tolerance", "init_scale"):
        if key in o:
            kwargs[key] = o[key]
    if "samples_schedule" in o:
        kwargs["samples_schedule"] = o["samples_schedule"]
    if "natural_gradient_steps_schedule" in o:
        kwargs["natural_gradient_steps_schedule"] = o["natural_gradient_steps_schedule"]
    if "sampling_cg" in o:
        rtol = o.get("sampling_cg_rtol", 0.0)
        kwargs["sampling_cg"] = tuple(
            (i, CGConfig(max_iterations=n, relative_residual_tolerance=rtol))
            for i, n in o["sampling_cg"]
        )
    if "natural_gradient_cg_max_iterations" in o or "natural_gradient_cg_rtol" in o:
        kwargs["natural_gradient_cg"] = CGConfig(
            max_iterations=o.get(
                "natural_gradient_cg_max_iterations",
                config.natural_gradient_cg.max_iterations,
            ),
            relative_residual_tolerance=o.get(
                "natural_gradient_cg_rtol",
                config.natural_gradient_cg.relative_residual_tolerance,
            ),
        )
    ls_keys = {
        "line_search_initial_step": "initial_step",
        "line_search_shrink_factor": "shrink_factor",
        "line_search_max_trials": "max_trials",
        "line_search_sufficient_decrease": "sufficient_decrease",
    }
    if any(k in o for k in ls_keys):
        ls = {dst: o[src] for src, dst in ls_keys.items() if src in o}
        kwargs["line_search"] = replace(config.line_search, **ls)
    return replace(config, **kwargs)


def make_map_config(setup: RunSetup, section: str = "map") -> MAPConfig:
    config = replace(preset_map_config(setup.spec.name), seed=setup.seed)
    o = setup.overrides.get(section, {})
    kwargs = {
        k: o[k] for k in ("max_steps", "gradient_tolerance", "init_scale") if k in o
    }
    if "cg_max_iterations" in o or "cg_rtol" in o:
        kwargs["cg"] = CGConfig(
            max_iterations=o.get("cg_max_iterations", config.cg.max_iterations),
            relative_residual_tolerance=o.get(
                "cg_rtol", config.cg.relative_residual_tolerance
            ),
        )
    return replace(config, **kwargs)


def make_meanfield_config(setup: RunSetup) -> MeanFieldConfig:
    config = replace(preset_meanfield_config(setup.spec.name), seed=setup.seed)
    o = setup.overrides.get("meanfield", {})
    return replace(config, **{k: v for k, v in o.items()})


class TraceCollector:
    """Accumulates one metrics row per optimizer step for the trace file."""

    def __init__(self, problem: Problem, method: str):
        self.problem = problem
        self.method = method
        self.rows: list[dict] = []

    def _metric_fields(self, samples: list[LatentVector]) -> dict:
        problem = self.problem
        fields: dict = {}
        truth = problem.truth.get("field")
        mean, std = problem.field_stats(samples)
        if truth is not None:
            fields["rms"] = rms(truth, mean)
            if len(samples) > 1:
                fields["avg_significance"] = avg_significance(
                    truth, mean, np.maximum(std, _STD_FLOOR)
                )
        if problem.heldout.data.n_observed > 0:
            ll_samples, ll_mean = predictive_likelihood(
                problem.heldout, problem.model, samples
            )
            fields["predictive_ll_samples"] = ll_samples
            fields["predictive_ll_mean"] = ll_mean
        return fields

    def on_mgvi_step(self, record, xi_bar, residuals):
        wrap = self.problem.model.wrap
        samples = [wrap(xi_bar + r) for r in residuals]
        row = {
            "method": self.method,
            "wall_time_s": record.wall_time_s,
            "global_iteration": record.global_iteration,
            "step_index": record.step_index,
            "kl": record.kl,
            "gradient_norm": record.gradient_norm,
            "step_size": record.step_size,
            "cg_iterations": record.cg_iterations,
        }
        row.update(self._metric_fields(samples))
        self.rows.append(row)

    def on_map_step(self, record, xi):
        samples = [self.problem.model.wrap(xi)]
        row = {
            "method": self.method,
            "wall_time_s": record.wall_time_s,
            "global_iteration": record.global_iteration,
            "step_index": 0,
            "kl": record.kl,
            "gradient_norm": record.gradient_norm,
            "step_size": record.step_size,
            "cg_iterations": record.cg_iterations,
        }
        row.update(self._metric_fields(samples))
        self.rows.append(row)

    def on_meanfield_step(self, step, wall_time, elbo, mean, log_std):
        wrap = self.problem.model.wrap
        rng = derived_rng(self.problem.spec.seed, 90, step)
        std = np.exp(log_std)
        samples = [
            wrap(mean + std * rng.standard_normal(mean.size)) for _ in range(8)
        ]
        row = {
            "method": self.method,
            "wall_time_s": wall_time,
            "global_iteration": step,
            "step_index": 0,
            "kl": -elbo,
        }
        row.update(self._metric_fields(samples))
        self.rows.append(row)


def execute_method(problem: Problem, setup: RunSetup):
    """Run one method; returns (mean, posterior samples, trace rows)."""
    collector = TraceCollector(problem, setup.method)
    if setup.method == "mgvi":
        config = make_mgvi_config(setup)
        posterior = run(
            problem.model,
            problem.likelihood,
            config,
            threads=setup.threads,
            observer=collector.on_mgvi_step,
        )
        return posterior.mean, posterior.samples(), collector.rows
    if setup.method == "map":
        config = make_map_config(setup)
        mean = map_estimate(
            problem.model, problem.likelihood, config, observer=collector.on_map_step
        )
        return mean, [mean], collector.rows
    if setup.method == "laplace":
        map_config = make_map_config(setup, section="laplace")
        o = setup.overrides.get("laplace", {})
        lap = LaplaceConfig(map_config=map_config, n_samples=o.get("n_samples", 100))
        mean = map_estimate(
            problem.model,
            problem.likelihood,
            lap.map_config,
            observer=collector.on_map_step,
        )
        residuals = laplace_samples(
            problem.model,
            problem.likelihood,
            mean,
            lap.n_samples,
            lap.cg,
            seed=setup.seed,
        )
        return mean, [mean + r for r in residuals], collector.rows
    if setup.method == "meanfield":
        config = make_meanfield_config(setup)
        state, _ = meanfield_vi(
            problem.model,
            problem.likelihood,
            config,
            observer=collector.on_meanfield_step,
        )
        samples = meanfield_samples(state, 100, seed=setup.seed)
        return state.mean, samples, collector.rows
    raise ConfigError(f"unknown method {setup.method!r}")


def report_fields(
    problem: Problem, setup: RunSetup, mean: LatentVector, samples: list[LatentVector]
) -> dict:
    fields = {
        "preset": problem.name,
        "method": setup.method,
        "seed": setup.seed,
        "n_samples": len(samples),
    }
    truth = problem.truth.get("field")
    field_mean, field_std = problem.field_stats(samples)
    if truth is not None:
        fields["rms"] = rms(truth, field_mean)
        if len(samples) > 1:
            fields["avg_significance"] = avg_significance(
                truth, field_mean, np.maximum(field_std, _STD_FLOOR)
            )
    if problem.heldout.data.n_observed > 0:
        ll_samples, ll_mean = predictive_likelihood(
            problem.heldout, problem.model, samples
        )
        fields["predictive_log_likelihood_samples"] = ll_samples
        fields["predictive_log_likelihood_mean"] = ll_mean
    if problem.name == "linear_gaussian":
        target = problem.truth["posterior_mean"]
        fields["mean_rel_err"] = float(
            np.linalg.norm(mean.values - target) / np.linalg.norm(target)
        )
    if problem.name == "zero_data":
        fields["mean_norm_over_sqrt_dim"] = float(
            np.linalg.norm(mean.values) / np.sqrt(mean.total_dim)
        )
    return fields


def cmd_run(args) -> int:
    setup = resolve_setup(args)
    records = read_records_csv(setup.records_path) if setup.records_path else None
    problem = build_problem(setup.spec, records)
    setup.out_dir.mkdir(parents=True, exist_ok=True)
    mean, samples, trace_rows = execute_method(problem, setup)

    if "report" in setup.emit:
        write_report(
            setup.out_dir / "report.txt", report_fields(problem, setup, mean, samples)
        )
    if "trace" in setup.emit:
        write_trace(setup.out_dir / "trace.csv", trace_rows, TRACE_COLUMNS)
    if "samples" in setup.emit:
        write_samples(setup.out_dir / "samples.csv", mean, samples)
    if "field_csv" in setup.emit:
        truth = problem.truth.get("field")
        field_mean, field_std = problem.field_stats(samples)
        if truth is None:
            truth = np.full_like(field_mean, np.nan)
        write_field_csv(setup.out_dir / "field.csv", truth, field_mean, field_std)
    return 0


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if len(methods) < 2:
        raise ConfigError("compare needs at least two methods")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")

    base = resolve_setup(args)
    merged: list[dict] = []
    base.out_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(base.spec)
    for method in methods:
        setup = replace(base, method=method)
        check = build_problem(setup.spec)
        if check.name != problem.name or check.spec.seed != problem.spec.seed:
            raise ConfigError("compare requires runs sharing a problem and seed")
        mean, samples, rows = execute_method(problem, setup)
        write_report(
            base.out_dir / f"report_{method}.txt",
            report_fields(problem, setup, mean, samples),
        )
        merged.extend(rows)
    merged.sort(key=lambda r: (r["method"], r["wall_time_s"]))
    write_trace(base.out_dir / "compare_trace.csv", merged, TRACE_COLUMNS)
    return 0


def cmd_oracle_check(args) -> int:
    results = run_oracle_suite(
        dim=args.dim, draws=args.draws, seed=args.seed, self_test=args.self_test
    )
    width = max(len(r.name) for r in results)
    all_passed = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        all_passed &= r.passed
    return 0 if all_passed else 1


def cmd_list_presets(_args) -> int:
    blurbs = {
        "poisson_lognormal": "1-d count data, log-Gaussian rate, fixed kernel",
        "binary_gp": "2-d binary classification with learned spectrum",
        "nmf": "gamma-Poisson matrix factorization (synthetic)",
        "logistic_regression": "grouped logistic regression (synthetic polls)",
        "linear_gaussian": "conjugate check: closed-form posterior",
        "zero_data": "fully masked likelihood: prior-only posterior",
        "conjugate_1d": "single data point, 1-d conjugate check",
    }
    for name in PRESET_NAMES:
        print(f"{name:<22} {blurbs[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgvi", description="Metric Gaussian variational inference batch runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--preset", help="problem preset name")
        p.add_argument("--config", help="configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", help="output directory")

    run_p = sub.add_parser("run", help="run one method on one problem")
    add_common(run_p)
    run_p.add_argument("--method", choices=METHODS, default=None)
    run_p.add_argument("--emit", help="comma list of report,samples,trace,field_csv")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="run several methods on one problem")
    add_common(cmp_p)
    cmp_p.add_argument(
        "--methods", default="mgvi,meanfield", help="comma-separated method list"
    )
    cmp_p.set_defaults(func=cmd_compare, method=None, emit=None)

    oc = sub.add_parser("oracle-check", help="dense-materialization oracle suite")
    oc.add_argument("--dim", type=int, default=12)
    oc.add_argument("--draws", type=int, default=20_000)
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--self-test", action="store_true", dest="self_test")
    oc.set_defaults(func=cmd_oracle_check)

    lp = sub.add_parser("list-presets", help="list shipped problem presets")
    lp.set_defaults(func=cmd_list_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: leave a diagnostic trail
        out_dir = Path(getattr(args, "out", None) or "mgvi_out")
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            failure_path = out_dir / "failure.txt"
            failure_path.write_text(traceback.format_exc())
            print(f"error: {exc} (diagnostics: {failure_path})", file=sys.stderr)
        except OSError:
            print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
