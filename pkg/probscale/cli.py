#!/usr/bin/env python3
"""
probscale - Command-line front end
- sample-size: (N, r) from the lemma, max, explicit or exact rule
- calibrate:   fixed or conditioned bound for an oracle or kernel predictor
- family:      calibrate a lambda family with the delta/n_F split and select one member
- validate:    violation ratio of a saved calibration on fresh data
- coverage:    Monte-Carlo check of the 1 - delta guarantee
- synth-data:  write running-example datasets
- audit-stats: summarize the run ledger

Exit codes: 0 success, 1 coverage check failed, 2 usage/config error,
3 contract violation, 4 numerical failure.
"""
import argparse
import json
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from . import config
from .audit import get_operation_stats, track_operation
from .errors import ContractError, DomainError, EvaluationError, NumericalError
from .io import (
    bound_rows,
    config_hash,
    dumps_report,
    file_sha256,
    read_dataset_csv,
    read_json_report,
    write_bounds_csv,
    write_dataset_csv,
    write_json_report,
)
from .models import (
    CoverageConfig,
    Dataset,
    ExampleConfig,
    ExperimentConfig,
    KernelConfig,
    ProbabilityLevels,
    SampleSpec,
    WeightConfig,
)
from .services.calibration import (
    calibrate_conditioned,
    calibrate_family,
    calibrate_fixed,
    evaluate_predictor,
    evaluate_sigma,
    evaluate_violation,
    fixed_bound_fn,
    markov_bound,
    scaled_bound_fn,
)
from .services.kernel_predictor import LocalKernelModel, build_family, family_models
from .services.sample_complexity import (
    binomial_tail,
    exact_spec,
    explicit_spec,
    max_spec,
    min_samples_exact,
    min_samples_family,
    sample_size_table,
    validate_spec,
)
from .services.synthetic import (
    STREAM_IDS,
    exact_bound_fn,
    exact_sigma_handle,
    oracle_predictor,
    run_coverage_experiment,
    sample_example,
)

EXIT_OK = 0
EXIT_COVERAGE_FAILED = 1
EXIT_USAGE = 2
EXIT_CONTRACT = 3
EXIT_NUMERICAL = 4

DEFAULT_VALIDATION_SIZE = 2065
REPORT_KEYS = ["epsilon", "delta", "mode", "predictor_config", "sigma_config", "config_hash", "calibration_source"]


# Simple colored terminal output
class Colors:
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    MAGENTA = '\033[95m'
    BOLD = '\033[1m'
    DIM = '\033[2m'
    END = '\033[0m'


# ============================================================================
# Display Helpers
# ============================================================================

def print_header(text):
    print(f"\n{Colors.BOLD}{Colors.CYAN}{'='*70}{Colors.END}")
    print(f"{Colors.BOLD}{Colors.CYAN}{text.center(70)}{Colors.END}")
    print(f"{Colors.BOLD}{Colors.CYAN}{'='*70}{Colors.END}\n")


def print_section(emoji, title):
    print(f"\n{Colors.BOLD}{Colors.YELLOW}{emoji} {title}{Colors.END}")
    print(f"{Colors.YELLOW}{'─'*70}{Colors.END}")


def print_value(label, value):
    print(f"  {Colors.DIM}{label:<28}{Colors.END}{value}")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ============================================================================
# Argument types
# ============================================================================

def probability(text: str) -> float:
    """argparse type: a number strictly inside (0, 1)"""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"{value} must lie strictly between 0 and 1")
    return value


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"{value} must be positive")
    return value


def constant_choice(text: str):
    """'rounded' (7.47), 'exact' ((1+sqrt(3))^2) or a number"""
    if text in ("rounded", "exact"):
        return text
    return positive_float(text)


def float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of numbers")


def truncation_choice(text: str):
    """Neighborhood size m, or 'none' to keep every training point"""
    if text.lower() == "none":
        return "none"
    return positive_int(text)


# ============================================================================
# Experiment config
# ============================================================================

def load_experiment(args) -> ExperimentConfig:
    """--config JSON (if any) with command-line flags layered on top.

    Raises:
        DomainError: config file missing or not JSON
        ValidationError: a value outside its documented range
    """
    base: Dict[str, Any] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise DomainError(f"config file {path} not found")
        try:
            base = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DomainError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(base, dict):
            raise DomainError(f"config file {path} must hold a JSON object")

    merged = ExperimentConfig.model_validate(base).model_dump(by_alias=True)

    def flag(name):
        return getattr(args, name, None)

    for name in ("epsilon", "delta", "constant", "seed", "data", "train_data",
                 "training_size", "lambdas", "residual_mode", "output"):
        if flag(name) is not None:
            merged[name] = flag(name)
    if flag("amplitude") is not None:
        merged["kernel"]["amplitude"] = flag("amplitude")
    if flag("lengthscale_sq") is not None:
        merged["kernel"]["lengthscale_sq"] = flag("lengthscale_sq")
    if flag("lam") is not None:
        merged["weight"]["lambda"] = flag("lam")
    if flag("norm") is not None:
        merged["weight"]["norm"] = flag("norm")
    if flag("truncation") is not None:
        merged["truncation"]["m"] = None if flag("truncation") == "none" else flag("truncation")

    return ExperimentConfig.model_validate(merged)


def resolve_spec(args, exp: ExperimentConfig, n_family: int = 1) -> SampleSpec:
    """SampleSpec from --rule/--r/--n-samples (default: lemma rule, split over n_family)"""
    levels = exp.levels
    n_samples = getattr(args, "n_samples", None)
    r = getattr(args, "r", None)
    rule = getattr(args, "rule", None)

    if n_samples is not None:
        if r is None:
            raise DomainError("--n-samples needs --r")
        return SampleSpec(n_samples=n_samples, discard_rank=r, rule="manual", levels=levels, n_family=n_family)

    if rule is None:
        rule = "explicit" if r is not None else "lemma"
    if rule == "lemma":
        if r is not None:
            raise DomainError("--r is chosen by the lemma rule; use --rule explicit or --rule exact")
        return min_samples_family(levels, n_family, config.resolve_constant(exp.constant))
    if rule == "max":
        return max_spec(levels, n_family)
    if r is None:
        raise DomainError(f"--rule {rule} needs --r")
    if rule == "explicit":
        return explicit_spec(levels, r, n_family)
    return exact_spec(levels, r, n_family)


def _require_valid_spec(spec: SampleSpec, levels: ProbabilityLevels) -> None:
    if not validate_spec(spec, levels, spec.n_family):
        raise ContractError(
            f"N={spec.n_samples}, r={spec.discard_rank} gives "
            f"B(r-1; N, eps) = {binomial_tail(spec.discard_rank - 1, spec.n_samples, levels.epsilon):.3e} "
            f"> delta/{spec.n_family}; the guarantee would be void"
        )


def _spec_fields(spec: SampleSpec, levels: ProbabilityLevels) -> Dict[str, Any]:
    return {
        "epsilon": levels.epsilon,
        "delta": levels.delta,
        "n_samples": spec.n_samples,
        "discard_rank": spec.discard_rank,
        "rule": spec.rule,
        "n_family": spec.n_family,
        "constant": spec.constant,
        "binomial_tail": binomial_tail(spec.discard_rank - 1, spec.n_samples, levels.epsilon),
    }


# ============================================================================
# Data and predictor construction
# ============================================================================

def _example(exp: ExperimentConfig) -> ExampleConfig:
    return ExampleConfig(seed=exp.seed)


def load_data(path: Optional[str], count: int, exp: ExperimentConfig, stream: str) -> Dataset:
    """CSV file when given, otherwise `count` draws from a synthetic stream"""
    if path:
        return read_dataset_csv(path)
    return sample_example(count, _example(exp), stream=stream)


def training_config(exp: ExperimentConfig) -> Dict[str, Any]:
    if exp.train_data:
        path = Path(exp.train_data).resolve()
        if not path.exists():
            raise DomainError(f"training data {path} not found")
        return {"source": "csv", "path": str(path), "sha256": file_sha256(path)}
    return {"source": "synthetic", "seed": exp.seed, "size": exp.training_size}


def kernel_predictor_config(exp: ExperimentConfig, lam: float) -> Dict[str, Any]:
    return {
        "kind": "kernel",
        "kernel": exp.kernel.model_dump(),
        "lambda": float(lam),
        "norm": exp.weight.norm,
        "truncation": exp.truncation.m,
        "residual_mode": exp.residual_mode,
        "training": training_config(exp),
    }


def load_training(training: Dict[str, Any]) -> Dataset:
    if training["source"] == "csv":
        if file_sha256(training["path"]) != training["sha256"]:
            raise ContractError(f"training data {training['path']} changed since calibration")
        return read_dataset_csv(training["path"])
    return sample_example(training["size"], ExampleConfig(seed=training["seed"]), stream="training")


def sigma_config(choice: Optional[str]) -> Dict[str, Any]:
    """Parse --sigma: none | constant:<v> | parzen | exact"""
    if choice is None or choice == "none":
        return {"kind": "none"}
    if choice in ("parzen", "exact"):
        return {"kind": choice}
    if choice.startswith("constant:"):
        try:
            value = float(choice.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"--sigma {choice}: constant must be a number")
        if not (value > 0 and math.isfinite(value)):
            raise DomainError(f"--sigma {choice}: constant must be positive and finite")
        return {"kind": "constant", "value": value}
    raise DomainError(f"--sigma must be none, constant:<v>, parzen or exact; got {choice!r}")


def build_handles(predictor_cfg: Dict[str, Any], sigma_cfg: Dict[str, Any]):
    """(predictor, sigma or None, kernel model or None) for a report's configs"""
    model = None
    if predictor_cfg["kind"] == "oracle":
        predictor = oracle_predictor()
    else:
        model = LocalKernelModel(
            load_training(predictor_cfg["training"]),
            KernelConfig(**predictor_cfg["kernel"]),
            WeightConfig(lam=predictor_cfg["lambda"], norm=predictor_cfg["norm"]),
            truncation=predictor_cfg["truncation"],
            residual_mode=predictor_cfg["residual_mode"],
        )
        predictor = model.predict

    kind = sigma_cfg["kind"]
    if kind == "none":
        sigma = None
    elif kind == "constant":
        value = sigma_cfg["value"]
        sigma = lambda X: np.full(np.asarray(X).shape[0], value)  # noqa: E731
    elif kind == "exact":
        sigma = exact_sigma_handle(ExampleConfig())
    else:
        if model is None:
            raise DomainError("--sigma parzen needs --predictor kernel")
        sigma = model.sigma
    return predictor, sigma, model


def _predictor_config(args, exp: ExperimentConfig) -> Dict[str, Any]:
    if (args.predictor or "oracle") == "oracle":
        return {"kind": "oracle"}
    return kernel_predictor_config(exp, exp.weight.lam)


def _hash_of(predictor_cfg, sigma_cfg) -> str:
    return config_hash({"predictor": predictor_cfg, "sigma": sigma_cfg})


def _output_path(exp: ExperimentConfig, default_name: Optional[str]) -> Optional[Path]:
    if exp.output:
        return Path(exp.output)
    if default_name:
        return config.OUTPUT_DIR / default_name
    return None


def _one_dimensional(data: Dataset, what: str) -> np.ndarray:
    if data.n_features != 1:
        raise DomainError(f"{what} needs 1-D inputs, data has {data.n_features} columns")
    return data.X[:, 0]


# ============================================================================
# Commands
# ============================================================================

def cmd_sample_size(args) -> Tuple[Dict[str, Any], int]:
    """N and r from the requested rule"""
    exp = load_experiment(args)
    levels = exp.levels
    n_family = args.n_family or 1

    if args.table:
        rows = sample_size_table(levels, args.table, n_family)
        report = {"epsilon": levels.epsilon, "delta": levels.delta, "n_family": n_family, "table": rows}
        if not args.json:
            print_header("Sample Size Table")
            print(f"  {'r':>5} {'N explicit':>12} {'N exact':>10} {'B(r-1;N,eps)':>16}")
            for row in rows:
                print(f"  {row['r']:>5} {row['n_explicit']:>12} {row['n_exact']:>10} {row['tail_exact']:>16.6e}")
        return report, EXIT_OK

    spec = resolve_spec(args, exp, n_family)
    report = _spec_fields(spec, levels)
    report["delta_effective"] = levels.delta / n_family
    if args.exact:
        split = ProbabilityLevels(epsilon=levels.epsilon, delta=levels.delta / n_family)
        n_exact = min_samples_exact(split, spec.discard_rank)
        report["exact_n_samples"] = n_exact
        report["exact_binomial_tail"] = binomial_tail(spec.discard_rank - 1, n_exact, levels.epsilon)

    if not args.json:
        print_header("Sample Size")
        print_value("rule", spec.rule)
        print_value("epsilon / delta", f"{levels.epsilon:g} / {levels.delta:g}")
        if n_family > 1:
            print_value("family size n_F", n_family)
        print_value("N", spec.n_samples)
        print_value("r", spec.discard_rank)
        print_value("B(r-1; N, eps)", f"{report['binomial_tail']:.6e}")
        if args.exact:
            print_section("🎯", "Exact binomial minimum")
            print_value("N (exact)", report["exact_n_samples"])
            print_value("B(r-1; N, eps)", f"{report['exact_binomial_tail']:.6e}")
    return report, EXIT_OK


def cmd_calibrate(args) -> Tuple[Dict[str, Any], int]:
    """Fixed (no sigma) or conditioned calibration on a CSV or synthetic sample"""
    exp = load_experiment(args)
    levels = exp.levels
    spec = resolve_spec(args, exp)
    _require_valid_spec(spec, levels)

    predictor_cfg = _predictor_config(args, exp)
    sigma_cfg = sigma_config(args.sigma)
    predictor, sigma, model = build_handles(predictor_cfg, sigma_cfg)

    data = load_data(exp.data, spec.n_samples, exp, "calibration")
    report = _spec_fields(spec, levels)
    if sigma is None:
        fixed = calibrate_fixed(predictor, data, spec, levels)
        report.update({"mode": "fixed", "rho": fixed.rho})
    else:
        scaled = calibrate_conditioned(predictor, sigma, data, spec, levels)
        report.update({"mode": "conditioned", "gamma_bar": scaled.gamma_bar})
    report.update({
        "seed": exp.seed,
        "predictor_config": predictor_cfg,
        "sigma_config": sigma_cfg,
        "config_hash": _hash_of(predictor_cfg, sigma_cfg),
        "calibration_source": data.source,
    })
    if model is not None:
        report["parzen_fallbacks"] = model.fallback_count

    out = write_json_report(_output_path(exp, "calibration.json"), report)
    if args.emit_bounds:
        _emit_grid_bounds(args.emit_bounds, data, report, predictor, sigma, args.grid_points)

    if not args.json:
        print_header("Calibration")
        print_value("mode", report["mode"])
        print_value("N / r", f"{spec.n_samples} / {spec.discard_rank}")
        print_value("data", data.source)
        key = "rho" if report["mode"] == "fixed" else "gamma_bar"
        print(f"\n  {Colors.GREEN}✅ {key} = {report[key]:.6g}{Colors.END}")
        print(f"  {Colors.DIM}report: {out}{Colors.END}")
    return report, EXIT_OK


def _emit_grid_bounds(path, data: Dataset, report, predictor, sigma, grid_points: int) -> None:
    x = _one_dimensional(data, "--emit-bounds")
    grid = np.linspace(float(x.min()), float(x.max()), grid_points).reshape(-1, 1)
    center = evaluate_predictor(predictor, grid)
    if report["mode"] == "fixed":
        half = report["rho"]
    else:
        half = report["gamma_bar"] * evaluate_sigma(sigma, grid)
    write_bounds_csv(path, bound_rows(grid[:, 0], center, center, half, report["mode"]))


def cmd_family(args) -> Tuple[Dict[str, Any], int]:
    """Calibrate one kernel model per lambda and select the sharpest"""
    exp = load_experiment(args)
    levels = exp.levels
    lambdas = list(exp.lambdas)

    train_cfg = training_config(exp)
    members = build_family(
        load_training(train_cfg),
        exp.kernel,
        lambdas,
        residual_mode=exp.residual_mode,
        truncation=exp.truncation.m,
        norm=exp.weight.norm,
    )
    spec = resolve_spec(args, exp, n_family=len(members))
    data = load_data(exp.data, spec.n_samples, exp, "calibration")
    family = calibrate_family(members, data, levels, spec)

    selected_lambda = lambdas[family.selected_index]
    predictor_cfg = kernel_predictor_config(exp, selected_lambda)
    sigma_cfg = {"kind": "parzen"}
    fallbacks = {label: model.fallback_count for label, model in family_models(members).items()}

    report = _spec_fields(spec, levels)
    report.update({
        "mode": "family",
        "lambdas": lambdas,
        "labels": family.labels,
        "gamma_bars": family.gamma_bars,
        "criterion_values": family.criterion_values,
        "selected_index": family.selected_index,
        "selected_lambda": selected_lambda,
        "gamma_bar": family.selected_gamma_bar,
        "seed": exp.seed,
        "predictor_config": predictor_cfg,
        "sigma_config": sigma_cfg,
        "config_hash": _hash_of(predictor_cfg, sigma_cfg),
        "calibration_source": data.source,
        "parzen_fallbacks": fallbacks,
    })
    out = write_json_report(_output_path(exp, "family.json"), report)

    if not args.json:
        print_header("Family Calibration")
        print_value("N / r", f"{spec.n_samples} / {spec.discard_rank}")
        print_value("n_F", len(members))
        print_section("📊", "Members")
        for j, (label, gamma_bar, crit) in enumerate(zip(family.labels, family.gamma_bars, family.criterion_values)):
            marker = f"{Colors.GREEN}◀ selected{Colors.END}" if j == family.selected_index else ""
            print(f"  {label:<14} gamma_bar={gamma_bar:<10.5g} criterion={crit:<12.6g} {marker}")
        print(f"\n  {Colors.GREEN}✅ lambda={selected_lambda:g}, gamma_bar = {family.selected_gamma_bar:.6g}{Colors.END}")
        print(f"  {Colors.DIM}report: {out}{Colors.END}")
    return report, EXIT_OK


def cmd_validate(args) -> Tuple[Dict[str, Any], int]:
    """Violation ratio of a saved calibration on fresh data"""
    saved = read_json_report(args.report, required=REPORT_KEYS)
    predictor_cfg = saved["predictor_config"]
    sigma_cfg = saved["sigma_config"]
    if _hash_of(predictor_cfg, sigma_cfg) != saved["config_hash"]:
        raise ContractError(f"report {args.report}: predictor config does not match its hash")

    exp = load_experiment(args)
    if args.predictor is not None or args.sigma is not None:
        invoked = _hash_of(_predictor_config(args, exp), sigma_config(args.sigma))
        if invoked != saved["config_hash"]:
            raise ContractError(
                f"predictor config hash {invoked[:12]} differs from the calibrated {saved['config_hash'][:12]}"
            )

    seed = args.seed if args.seed is not None else saved.get("seed", exp.seed)
    if exp.data:
        data = read_dataset_csv(exp.data)
    else:
        data = sample_example(args.validation_size, ExampleConfig(seed=seed), stream="validation")
    if data.source == saved["calibration_source"]:
        raise ContractError(f"validation data {data.source} is the calibration data")

    predictor, sigma, _ = build_handles(predictor_cfg, sigma_cfg)
    mode = saved["mode"]
    if mode == "fixed":
        bound = fixed_bound_fn(saved["rho"])
    else:
        if sigma is None:
            raise ContractError(f"report mode {mode} needs a sigma source")
        bound = scaled_bound_fn(saved["gamma_bar"], sigma)

    violation = evaluate_violation(bound, predictor, data)
    report = {
        "epsilon": saved["epsilon"],
        "delta": saved["delta"],
        "n_samples": saved.get("n_samples"),
        "discard_rank": saved.get("discard_rank"),
        "method": mode,
        "total": violation.total,
        "violations": violation.violations,
        "violation_ratio": violation.ratio,
        "mean_bound_width": violation.mean_bound_width,
        "config_hash": saved["config_hash"],
        "calibration_source": saved["calibration_source"],
        "validation_source": data.source,
        "comparisons": {},
    }
    for key in ("rho", "gamma_bar", "selected_lambda"):
        if key in saved:
            report[key] = saved[key]

    rows: List[Dict[str, Any]] = []
    if args.emit_bounds:
        x = _one_dimensional(data, "--emit-bounds")
        center = evaluate_predictor(predictor, data.X)
        rows += bound_rows(x, data.y, center, bound(data.X), mode)

    if args.compare_exact:
        if not data.source.startswith("synthetic"):
            raise DomainError("--compare-exact needs synthetic validation data")
        exact = exact_bound_fn(saved["epsilon"], ExampleConfig(seed=seed))
        oracle = oracle_predictor()
        report["comparisons"]["exact"] = _comparison(evaluate_violation(exact, oracle, data))
        if args.emit_bounds:
            rows += bound_rows(data.X[:, 0], data.y, oracle(data.X), exact(data.X), "exact")

    if args.compare_markov:
        if sigma is None:
            raise DomainError("--compare-markov needs a calibration with a sigma source")
        factor = markov_bound(1.0, saved["epsilon"])
        markov = lambda X: factor * evaluate_sigma(sigma, X)  # noqa: E731
        report["comparisons"]["markov"] = _comparison(evaluate_violation(markov, predictor, data))
        if args.emit_bounds:
            center = evaluate_predictor(predictor, data.X)
            rows += bound_rows(data.X[:, 0], data.y, center, markov(data.X), "markov")

    if args.emit_bounds:
        write_bounds_csv(args.emit_bounds, rows)
    if exp.output:
        write_json_report(exp.output, report)

    if not args.json:
        print_header("Validation")
        print_value("method", mode)
        print_value("observations", violation.total)
        print_value("violations", violation.violations)
        print_value("violation ratio", f"{violation.ratio:.4f}  (eps = {saved['epsilon']:g})")
        print_value("mean bound width", _fmt(violation.mean_bound_width))
        for name, comp in report["comparisons"].items():
            print_value(f"{name} ratio / width", f"{comp['violation_ratio']:.4f} / {_fmt(comp['mean_bound_width'])}")
        status = "✅" if violation.ratio <= saved["epsilon"] else "⚠️ "
        print(f"\n  {status} {violation.violations}/{violation.total} outside the bound")
    return report, EXIT_OK


def _comparison(violation) -> Dict[str, Any]:
    return {
        "violations": violation.violations,
        "violation_ratio": violation.ratio,
        "mean_bound_width": violation.mean_bound_width,
    }


def cmd_coverage(args) -> Tuple[Dict[str, Any], int]:
    """Repeated independent calibrations; exit 1 when failures exceed delta plus slack"""
    exp = load_experiment(args)
    levels = exp.levels
    spec = resolve_spec(args, exp)
    _require_valid_spec(spec, levels)

    cfg = CoverageConfig(
        repetitions=args.reps,
        levels=levels,
        validation_size=args.validation_size,
        constant=config.resolve_constant(exp.constant),
        spec=spec,
        conditioned=args.conditioned,
        example=_example(exp),
    )
    outcome = run_coverage_experiment(cfg)
    allowed = levels.delta + 3.0 * math.sqrt(levels.delta * (1.0 - levels.delta) / cfg.repetitions)
    passed = outcome.failure_fraction <= allowed

    report = _spec_fields(spec, levels)
    report.update(outcome.model_dump())
    report.update({"seed": exp.seed, "allowed_failure_fraction": allowed, "passed": passed})
    if exp.output:
        write_json_report(exp.output, report)

    if not args.json:
        print_header("Coverage")
        print_value("N / r", f"{spec.n_samples} / {spec.discard_rank}")
        print_value("repetitions", cfg.repetitions)
        print_value("mode", "conditioned" if cfg.conditioned else "fixed")
        print_value("ratio threshold", f"{outcome.threshold:.4f}")
        print_value("failures", f"{outcome.failures} ({outcome.failure_fraction:.4f})")
        print_value("allowed fraction", f"{allowed:.4f}")
        if passed:
            print(f"\n  {Colors.GREEN}✅ guarantee holds{Colors.END}")
        else:
            print(f"\n  {Colors.RED}❌ failure fraction above delta + slack{Colors.END}")
    return report, EXIT_OK if passed else EXIT_COVERAGE_FAILED


def cmd_synth_data(args) -> Tuple[Dict[str, Any], int]:
    """Write running-example observations from one named stream"""
    exp = load_experiment(args)
    data = sample_example(args.count, _example(exp), stream=args.stream)
    path = _output_path(exp, f"{args.stream}_seed{exp.seed}.csv")
    write_dataset_csv(path, data)
    report = {"count": len(data), "stream": args.stream, "seed": exp.seed, "path": str(path), "source": data.source}
    if not args.json:
        print(f"{Colors.GREEN}✓ Wrote {len(data)} observations ({data.source}) to: {path}{Colors.END}")
    return report, EXIT_OK


def cmd_audit_stats(args) -> Tuple[Dict[str, Any], int]:
    """Counts and durations from the run ledger"""
    db_path = Path(args.audit_db) if args.audit_db else config.AUDIT_DB_PATH
    if db_path is None:
        raise DomainError("run ledger disabled: set PROBSCALE_AUDIT_DB or pass --audit-db")
    stats = get_operation_stats(args.operation, args.days, db_path)
    if not args.json:
        print_header("Run Ledger")
        for key, value in stats.items():
            print_value(key, value)
    return stats, EXIT_OK


COMMANDS = {
    "sample-size": cmd_sample_size,
    "calibrate": cmd_calibrate,
    "family": cmd_family,
    "validate": cmd_validate,
    "coverage": cmd_coverage,
    "synth-data": cmd_synth_data,
    "audit-stats": cmd_audit_stats,
}


# ============================================================================
# Parser
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Experiment config JSON (flags override it)')
    common.add_argument('--json', action='store_true', help='Print only the JSON report')
    common.add_argument('--output', help='Where to write the report / dataset')
    common.add_argument('--audit-db', help='Run ledger sqlite file (default: PROBSCALE_AUDIT_DB)')

    levels = argparse.ArgumentParser(add_help=False)
    levels.add_argument('--epsilon', type=probability, help='Accuracy level (default 0.05)')
    levels.add_argument('--delta', type=probability, help='Confidence level (default 1e-6)')
    levels.add_argument('--constant', type=constant_choice, help="Lemma constant: rounded (7.47), exact, or a number")

    spec = argparse.ArgumentParser(add_help=False)
    spec.add_argument('--rule', choices=['lemma', 'max', 'explicit', 'exact'], help='Sample-size rule')
    spec.add_argument('--r', type=positive_int, help='Discard rank for the explicit / exact rules')
    spec.add_argument('--n-samples', type=positive_int, help='Use N as given (with --r) instead of a rule')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--seed', type=int, help='Seed for every synthetic stream')
    data.add_argument('--data', help='Dataset CSV with header x1,...,xn,y')

    kernel = argparse.ArgumentParser(add_help=False)
    kernel.add_argument('--train-data', help='Training CSV for the kernel predictor')
    kernel.add_argument('--training-size', type=positive_int, help='Synthetic training size M (default 2065)')
    kernel.add_argument('--amplitude', type=positive_float, help='Kernel amplitude (default 50)')
    kernel.add_argument('--lengthscale-sq', type=positive_float, help='Squared kernel lengthscale (default 0.2)')
    kernel.add_argument('--lambda', dest='lam', type=positive_float, help='Locality weight lambda (default 1)')
    kernel.add_argument('--norm', choices=['euclidean', 'manhattan', 'chebyshev'], help='Norm in the locality weight')
    kernel.add_argument('--truncation', type=truncation_choice, help="Neighborhood size m, or 'none'")
    kernel.add_argument('--residual-mode', choices=['local', 'fixed-T'], help='Residuals used by the Parzen sigma')

    predictor = argparse.ArgumentParser(add_help=False)
    predictor.add_argument('--predictor', choices=['oracle', 'kernel'], help='Central estimate T (default oracle)')
    predictor.add_argument('--sigma', help='none | constant:<v> | parzen | exact')

    parser = argparse.ArgumentParser(
        prog='probscale',
        description='Probabilistic error bounds for black-box predictors',
    )
    subparsers = parser.add_subparsers(dest='command', help='Command')

    p = subparsers.add_parser('sample-size', parents=[common, levels, spec], help='Compute N and r')
    p.add_argument('--n-family', type=positive_int, help='Split delta over a family of this size')
    p.add_argument('--exact', action='store_true', help='Also print the minimal binomial-solved N')
    p.add_argument('--table', type=positive_int, metavar='R', help='N for r = 1..R, explicit vs exact')

    p = subparsers.add_parser('calibrate', parents=[common, levels, spec, data, kernel, predictor],
                              help='Calibrate a fixed or conditioned bound')
    p.add_argument('--emit-bounds', help='Write a grid bound CSV here')
    p.add_argument('--grid-points', type=positive_int, default=201, help='Grid size for --emit-bounds')

    p = subparsers.add_parser('family', parents=[common, levels, spec, data, kernel],
                              help='Calibrate a lambda family and select one member')
    p.add_argument('--lambdas', type=float_list, help='Comma-separated lambda values (default 1..10)')

    p = subparsers.add_parser('validate', parents=[common, data, kernel, predictor],
                              help='Violation ratio of a saved calibration')
    p.add_argument('--report', required=True, help='Report written by calibrate or family')
    p.add_argument('--validation-size', type=positive_int, default=DEFAULT_VALIDATION_SIZE,
                   help='Synthetic validation size')
    p.add_argument('--compare-exact', action='store_true', help='Add the exact Gaussian bound (synthetic data)')
    p.add_argument('--compare-markov', action='store_true', help='Add the Markov bound with the same sigma')
    p.add_argument('--emit-bounds', help='Write per-observation bound rows here')

    p = subparsers.add_parser('coverage', parents=[common, levels, spec],
                              help='Monte-Carlo check of the 1 - delta guarantee')
    p.add_argument('--reps', type=positive_int, default=200, help='Independent repetitions')
    p.add_argument('--seed', type=int, help='Seed for the repetition streams')
    p.add_argument('--validation-size', type=positive_int, default=10_000, help='Validation draws per repetition')
    p.add_argument('--conditioned', action='store_true', help='Use gamma_bar * exact sigma instead of rho')

    p = subparsers.add_parser('synth-data', parents=[common], help='Write running-example observations')
    p.add_argument('--count', type=positive_int, required=True, help='Number of observations')
    p.add_argument('--stream', choices=sorted(STREAM_IDS), default='calibration', help='Named random stream')
    p.add_argument('--seed', type=int, help='Seed')

    p = subparsers.add_parser('audit-stats', parents=[common], help='Summarize the run ledger')
    p.add_argument('--operation', choices=sorted(COMMANDS), help='Filter by command')
    p.add_argument('--days', type=positive_int, default=7, help='Days to look back')

    return parser


# ============================================================================
# Main
# ============================================================================

def _fail(error: Exception, code: int) -> int:
    print(f"{Colors.RED}❌ {type(error).__name__}: {error}{Colors.END}", file=sys.stderr)
    return code


def run(args) -> int:
    handler = COMMANDS[args.command]
    params = {k: v for k, v in vars(args).items() if k != "json"}
    db_path = Path(args.audit_db) if args.audit_db else None

    try:
        if args.command == "audit-stats":
            report, code = handler(args)
        else:
            with track_operation(args.command, params, db_path=db_path) as tracker:
                report, code = handler(args)
                tracker.set_result(report)
    except ContractError as e:
        return _fail(e, EXIT_CONTRACT)
    except (NumericalError, EvaluationError) as e:
        return _fail(e, EXIT_NUMERICAL)
    except ValidationError as e:
        return _fail(e, EXIT_USAGE)
    except ValueError as e:
        # DomainError and plain range errors
        return _fail(e, EXIT_USAGE)

    if args.json:
        print(dumps_report(report))
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    return run(args)


if __name__ == '__main__':
    sys.exit(main())
