"""Command-line front end: batch explanation, case studies, benchmarks.

Exit codes: 0 success, 2 usage error, 3 computation error. Output files are
written atomically (temp file + rename), so a failing run never leaves a
partially written artifact.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import synth
from .baselines import BackgroundSpec, LimeConfig, kernelshap, lime
from .bench import (
    BenchmarkConfig,
    emit_report,
    explainer_from_attribution,
    load_benchmark_config,
    rank_methods,
    run_benchmark,
    write_scores_csv,
)
from .core import (
    Attribution,
    Dataset,
    atomic_write_text,
    load_attribution,
    load_dataset,
    load_model,
    rng_stream,
    derive_stream_id,
    save_attribution,
    save_dataset,
    train_test_split_indices,
)
from .metrics import (
    METRIC_NAMES,
    MetricConfig,
    MetricRow,
    MetricValue,
    complexity,
    effective_complexity,
    faithfulness_correlation,
    faithfulness_estimate,
    local_lipschitz_estimate,
    max_sensitivity,
    monotonicity_correlation,
    relative_input_stability,
    sparseness,
    write_metric_csv,
)
from .perturb import PerturbationSpec
from .shapley import VarianceGameConfig, varshap_exact, varshap_sampled
from .svgplot import bar_chart_svg, grouped_bar_chart_svg

SEED_ENV = "VARSHAP_SEED"


class UsageError(Exception):
    """Bad flags or flag combinations; exits with code 2."""


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {exc}", file=sys.stderr)
        return 3


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varshap",
        description="Local feature attributions from variance reduction, with "
        "KernelSHAP/LIME baselines and an explanation-quality benchmark.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("explain", help="attribute one prediction and write it as JSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model file (JSON)")
    src.add_argument("--gtm", choices=synth.GTM_NAMES, help="built-in ground-truth model")
    p.add_argument("--data", help="dataset CSV used to estimate feature spreads")
    p.add_argument("--instance", help="comma-separated feature values")
    p.add_argument("--instance-index", type=int, help="row index into --data")
    p.add_argument(
        "--method", required=True, choices=("varshap", "kernelshap", "lime")
    )
    p.add_argument("--sigma", type=float, default=1.0, help="perturbation scale (std multiplier)")
    p.add_argument("--samples", type=int, default=2048, help="samples per coalition")
    p.add_argument("--coalitions", type=int, default=0,
                   help="coalition budget; selects the sampled estimator for varshap")
    p.add_argument("--no-paired", action="store_true", help="disable common random numbers")
    p.add_argument("--sign-convention", default="reduction_positive",
                   choices=("reduction_positive", "eq1_literal"))
    p.add_argument("--background", default="data", choices=("zero", "data"),
                   help="kernelshap background mode")
    p.add_argument("--sparsity", type=float, default=1.5, help="lime L1 coefficient")
    p.add_argument("--kernel-width", type=float, default=None, help="lime proximity width")
    p.add_argument("--n-samples", type=int, default=1000, help="lime neighborhood size")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("-o", "--out", default="attribution.json")
    p.add_argument("--svg", help="also write a bar chart of the attribution")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("casestudy", help="reproduce a synthetic case study")
    p.add_argument("--case", type=int, required=True, help="1 or 2")
    p.add_argument("--sigma", type=float, default=0.3,
                   help="perturbation scale; the tight default keeps the "
                   "explanation strictly local")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--samples", type=int, default=200_000, help="samples per coalition")
    p.add_argument("-o", "--outdir", default=".")
    p.set_defaults(func=cmd_casestudy)

    p = sub.add_parser("benchmark", help="run the method/metric grid and rank methods")
    p.add_argument("-c", "--config", help="benchmark config JSON; defaults to the preset grid")
    p.add_argument("-o", "--outdir", default=".")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("metrics", help="score a stored attribution on all nine metrics")
    p.add_argument("--attribution", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model file (JSON)")
    src.add_argument("--gtm", choices=synth.GTM_NAMES)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--target", default=None, help="target column name to exclude (default: Y if present)")
    p.add_argument("--instance", help="explained point, if not recorded in the attribution")
    p.add_argument("--instance-index", type=int)
    p.add_argument("--baseline", default="uniform", choices=("uniform", "black"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--out", default="metrics.csv")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    p.add_argument("--dataset", required=True, help="1, 2, 3 or dataset1..dataset3")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--write", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen)
    return parser


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

def _parse_instance(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError:
        raise UsageError(f"--instance must be comma-separated numbers, got {text!r}") from None


def _positive(value: float, flag: str) -> float:
    if not value > 0:
        raise UsageError(f"{flag} must be positive, got {value}")
    return value


def cmd_explain(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    _positive(args.sigma, "--sigma")
    if args.data:
        data = load_dataset(args.data, target_column=_sniff_target(args.data, None))
        model = load_model(args.model) if args.model else synth.gtm(args.gtm)
    elif args.gtm:
        # No CSV given: regenerate the matching dataset and explain the raw
        # point in its normalized coordinate space.
        data = synth.generate_dataset(args.gtm, seed)
        model = synth.normalized_view(synth.gtm(args.gtm), data)
    else:
        raise UsageError("--data is required when --model is used")
    if args.instance is not None:
        x = _parse_instance(args.instance)
        if args.data is None and args.gtm and data.norm_mean is not None:
            x = synth.normalize_rows(x, data.norm_mean, data.norm_std)
    elif args.instance_index is not None:
        if not 0 <= args.instance_index < data.n_rows:
            raise UsageError(f"--instance-index out of range [0, {data.n_rows})")
        x = data.rows[args.instance_index]
    else:
        raise UsageError("one of --instance / --instance-index is required")
    if x.size != model.arity:
        raise UsageError(f"instance has {x.size} features, model expects {model.arity}")

    spec = PerturbationSpec.from_dataset(data, sigma=args.sigma)
    if args.method == "varshap":
        cfg = VarianceGameConfig(
            samples_per_coalition=args.samples,
            paired_sampling=not args.no_paired,
            sign_convention=args.sign_convention,
        )
        if args.coalitions:
            att = varshap_sampled(model, x, spec, cfg, n_coalitions=args.coalitions,
                                  master_seed=seed)
        else:
            att = varshap_exact(model, x, spec, cfg, master_seed=seed)
    elif args.method == "kernelshap":
        if args.background == "zero":
            background = BackgroundSpec.zero()
        else:
            background = BackgroundSpec.from_dataset(data)
        budget = args.coalitions or min(2**model.arity, max(model.arity + 2, 4 * model.arity + 16))
        att = kernelshap(model, x, background, n_coalitions=budget, master_seed=seed)
    else:
        cfg = LimeConfig(sparsity=args.sparsity, kernel_width=args.kernel_width,
                         n_samples=args.n_samples)
        att = lime(model, x, spec, cfg, master_seed=seed)
    params = dict(att.params)
    params["instance"] = [float(v) for v in x]
    att = Attribution(phi=att.phi, method=att.method, params=params, seed=att.seed,
                      base_variance=att.base_variance)
    save_attribution(att, args.out)
    if args.svg:
        labels = list(data.feature_names)
        atomic_write_text(args.svg, bar_chart_svg(labels, att.phi, title=att.method) + "\n")
    return 0


def _sniff_target(path: str, explicit: str | None) -> str | None:
    if explicit is not None:
        return explicit
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return "Y" if "Y" in header else None


# ---------------------------------------------------------------------------
# casestudy
# ---------------------------------------------------------------------------

def _case_methods(data: Dataset, model, sigma: float, samples: int, seed: int):
    spec = PerturbationSpec.from_dataset(data, sigma=sigma)
    cfg = VarianceGameConfig(samples_per_coalition=samples)
    lime_cfg = LimeConfig(sparsity=1.5, n_samples=2000)
    background = BackgroundSpec.from_dataset(data)
    n_coal = 2**model.arity
    return {
        "VARSHAP": lambda x: varshap_exact(model, x, spec, cfg, master_seed=seed),
        "KernelSHAP": lambda x: kernelshap(model, x, background, n_coalitions=n_coal,
                                           master_seed=seed),
        "LIME": lambda x: lime(model, x, spec, lime_cfg, master_seed=seed),
    }


def cmd_casestudy(args) -> int:
    if args.case not in (1, 2):
        raise UsageError(f"--case must be 1 or 2, got {args.case}")
    seed = args.seed if args.seed is not None else _default_seed()
    _positive(args.sigma, "--sigma")
    outdir = args.outdir
    os.makedirs(outdir, exist_ok=True)
    rows = ["dataset,method,feature,phi"]
    if args.case == 1:
        raw_point = np.array([0.0, 0.0])
        for name in ("dataset1", "dataset2"):
            data = synth.generate_dataset(name, seed)
            model = synth.normalized_view(synth.gtm(name), data)
            x = synth.normalize_rows(raw_point, data.norm_mean, data.norm_std)
            series = {}
            for method, runner in _case_methods(data, model, args.sigma, args.samples, seed).items():
                att = runner(x)
                series[method] = list(att.phi)
                for fname, v in zip(data.feature_names, att.phi):
                    rows.append(f"{name},{method},{fname},{v!r}")
            svg = grouped_bar_chart_svg(list(data.feature_names), series,
                                        title=f"Attributions at [0, 0] ({name})")
            atomic_write_text(os.path.join(outdir, f"case1_{name}.svg"), svg + "\n")
        atomic_write_text(os.path.join(outdir, "case1_attributions.csv"),
                          "\n".join(rows) + "\n")
    else:
        raw_point = np.array([0.5, -0.5, 0.3])  # on the fold of |x1 + x2|
        data = synth.generate_dataset("dataset3", seed)
        model = synth.normalized_view(synth.gtm("dataset3"), data)
        x = synth.normalize_rows(raw_point, data.norm_mean, data.norm_std)
        series = {}
        for method, runner in _case_methods(data, model, args.sigma, args.samples, seed).items():
            att = runner(x)
            series[method] = list(att.phi)
            for fname, v in zip(data.feature_names, att.phi):
                rows.append(f"dataset3,{method},{fname},{v!r}")
        svg = grouped_bar_chart_svg(list(data.feature_names), series,
                                    title="Attributions near the fold (dataset3)")
        atomic_write_text(os.path.join(outdir, "case2_dataset3.svg"), svg + "\n")
        atomic_write_text(os.path.join(outdir, "case2_attributions.csv"),
                          "\n".join(rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# benchmark / metrics / gen
# ---------------------------------------------------------------------------

def cmd_benchmark(args) -> int:
    cfg = load_benchmark_config(args.config) if args.config else BenchmarkConfig()
    os.makedirs(args.outdir, exist_ok=True)
    rows = run_benchmark(cfg)
    write_scores_csv(rows, os.path.join(args.outdir, "scores.csv"))
    table = rank_methods(rows)
    emit_report(table, "csv", os.path.join(args.outdir, "ranking.csv"))
    emit_report(table, "json", os.path.join(args.outdir, "ranking.json"))
    emit_report(table, "svg", os.path.join(args.outdir, "ranking.svg"))
    return 0


def cmd_metrics(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    att = load_attribution(args.attribution)
    data = load_dataset(args.data, target_column=_sniff_target(args.data, args.target))
    model = load_model(args.model) if args.model else synth.gtm(args.gtm)
    if args.instance is not None:
        x = _parse_instance(args.instance)
    elif args.instance_index is not None:
        x = data.rows[args.instance_index]
    elif "instance" in att.params:
        x = np.asarray(att.params["instance"], dtype=np.float64)
    else:
        raise UsageError("attribution does not record its instance; pass --instance")
    if x.size != model.arity or att.n_features != model.arity:
        raise UsageError("instance, attribution, and model dimensions must agree")

    train_idx, _ = train_test_split_indices(data.n_rows)
    train_rows = data.rows[train_idx]
    cfg = MetricConfig(
        perturb_baseline=args.baseline,
        feature_low=train_rows.min(axis=0),
        feature_high=train_rows.max(axis=0),
    )
    explain = explainer_from_attribution(att, model, data)

    def handle(z, s):
        return explain(z, s).phi

    phi = att.phi
    computations = {
        "faithfulness_correlation": lambda s: faithfulness_correlation(model, x, phi, cfg, s),
        "faithfulness_estimate": lambda s: faithfulness_estimate(model, x, phi, cfg, s),
        "monotonicity_correlation": lambda s: monotonicity_correlation(model, x, phi, cfg, s),
        "local_lipschitz_estimate": lambda s: local_lipschitz_estimate(handle, x, cfg, s),
        "max_sensitivity": lambda s: max_sensitivity(handle, x, cfg, s),
        "relative_input_stability": lambda s: relative_input_stability(handle, x, cfg, s),
        "sparseness": lambda s: sparseness(phi),
        "complexity": lambda s: complexity(phi),
        "effective_complexity": lambda s: effective_complexity(phi, cfg),
    }
    out_rows = []
    for metric in METRIC_NAMES:
        stream = rng_stream(seed, derive_stream_id("cli-metrics", metric))
        result = computations[metric](stream)
        if not isinstance(result, MetricValue):
            result = MetricValue(float(result))
        out_rows.append(
            MetricRow(metric, att.method, model.name or (args.model or args.gtm),
                      data.name, args.instance_index or 0, result.value, result.flagged)
        )
    write_metric_csv(out_rows, args.out)
    return 0


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    name = args.dataset if args.dataset.startswith("dataset") else f"dataset{args.dataset}"
    if name not in synth.GTM_NAMES:
        raise UsageError(f"--dataset must name dataset1..dataset3, got {args.dataset!r}")
    save_dataset(synth.generate_dataset(name, seed), args.write)
    return 0


if __name__ == "__main__":
    sys.exit(main())
