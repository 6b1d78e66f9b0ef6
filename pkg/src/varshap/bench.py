"""Benchmark grid: (method x model x dataset x instance x metric) scores,
median-based per-metric rankings, and aggregated rank tables.

Scores are computed cell by cell with streams keyed by the cell coordinates,
so output is bitwise reproducible under a fixed master seed regardless of
evaluation order. Rankings take each method's median score per metric,
rank with the metric's direction (ties averaged), and aggregate by the
arithmetic mean of ranks.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from . import synth
from .baselines import BackgroundSpec, LimeConfig, kernelshap, lime
from .core import (
    Attribution,
    Dataset,
    Model,
    atomic_write_text,
    derive_stream_id,
    load_dataset,
    load_model,
    rng_stream,
    train_test_split_indices,
)
from .metrics import (
    METRIC_DIRECTIONS,
    METRIC_NAMES,
    HIGHER_BETTER,
    MetricConfig,
    MetricValue,
    complexity,
    effective_complexity,
    faithfulness_correlation,
    faithfulness_estimate,
    local_lipschitz_estimate,
    max_sensitivity,
    monotonicity_correlation,
    rank_with_average_ties,
    relative_input_stability,
    sparseness,
)
from .perturb import PerturbationSpec
from .shapley import EXACT_FEATURE_LIMIT, VarianceGameConfig, varshap_exact, varshap_sampled
from .svgplot import bar_chart_svg

__all__ = [
    "MethodPreset",
    "BenchmarkConfig",
    "RankingTable",
    "ScoreRow",
    "default_method_presets",
    "load_benchmark_config",
    "run_benchmark",
    "rank_methods",
    "emit_report",
    "write_scores_csv",
    "load_ranking_json",
    "make_explainer",
    "explainer_from_attribution",
    "COMPLEXITY_FAMILY",
]

COMPLEXITY_FAMILY = ("sparseness", "complexity", "effective_complexity")


@dataclass(frozen=True)
class MethodPreset:
    """One row of the method grid: an explainer family plus its knobs."""

    name: str
    kind: str  # varshap | kernelshap | lime
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("varshap", "kernelshap", "lime"):
            raise ValueError(f"unknown method kind {self.kind!r}")


def default_method_presets() -> tuple[MethodPreset, ...]:
    """The standard eight-method grid used for ranking tables."""
    presets = [
        MethodPreset(f"VARSHAP (sigma={s})", "varshap", {"sigma": s}) for s in (0.3, 0.6, 1.0)
    ]
    presets.append(MethodPreset("KernelSHAP (data sampling)", "kernelshap", {"background": "data"}))
    presets.append(MethodPreset("KernelSHAP (baseline 0)", "kernelshap", {"background": "zero"}))
    presets.extend(
        MethodPreset(f"LIME (sparsity={sp})", "lime", {"sparsity": sp}) for sp in (0.5, 1.5, 5.0)
    )
    return tuple(presets)


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple[MethodPreset, ...] = field(default_factory=default_method_presets)
    datasets: tuple[str, ...] = ("dataset1", "dataset2", "dataset3")
    models: tuple[str, ...] = ("gtm",)
    n_instances: int = 50
    master_seed: int = 0
    metric_cfg: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("method preset names must be distinct")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "models", tuple(self.models))


def load_benchmark_config(path: str | os.PathLike) -> BenchmarkConfig:
    """Read a JSON config whose keys mirror the BenchmarkConfig fields."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    kwargs: dict = {}
    if "methods" in doc:
        kwargs["methods"] = tuple(_preset_from_doc(m) for m in doc["methods"])
    for key in ("datasets", "models"):
        if key in doc:
            kwargs[key] = tuple(doc[key])
    for key in ("n_instances", "master_seed"):
        if key in doc:
            kwargs[key] = int(doc[key])
    if "metric_cfg" in doc:
        kwargs["metric_cfg"] = MetricConfig(**doc["metric_cfg"])
    return BenchmarkConfig(**kwargs)


def _preset_from_doc(doc) -> MethodPreset:
    if isinstance(doc, MethodPreset):
        return doc
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError(f"method entry must be an object with a 'kind' key: {doc!r}")
    params = {k: v for k, v in doc.items() if k not in ("kind", "name")}
    kind = doc["kind"]
    if "name" in doc:
        name = doc["name"]
    elif kind == "varshap":
        name = f"VARSHAP (sigma={params.get('sigma', 1.0)})"
    elif kind == "kernelshap":
        label = "data sampling" if params.get("background", "data") == "data" else "baseline 0"
        name = f"KernelSHAP ({label})"
    else:
        name = f"LIME (sparsity={params.get('sparsity', 1.5)})"
    return MethodPreset(name, kind, params)


class ScoreRow(NamedTuple):
    method: str
    model: str
    dataset: str
    instance_index: int
    metric: str
    score: float
    flagged: bool


# ---------------------------------------------------------------------------
# Explainers
# ---------------------------------------------------------------------------

def make_explainer(
    preset: MethodPreset,
    model: Model,
    feature_std: np.ndarray,
    train_rows: np.ndarray,
) -> Callable[[np.ndarray, int], Attribution]:
    """Bind a method preset to a model/dataset pair.

    Returns a handle (x, seed) -> Attribution that robustness metrics can
    re-invoke with derived seeds.
    """
    d = model.arity
    p = preset.params
    if preset.kind == "varshap":
        spec = PerturbationSpec(feature_std, float(p.get("sigma", 1.0)))
        cfg = VarianceGameConfig(
            samples_per_coalition=int(p.get("samples_per_coalition", 1024)),
            paired_sampling=bool(p.get("paired_sampling", True)),
        )
        n_coalitions = int(p.get("n_coalitions", 0))
        if d <= 12 and not n_coalitions:
            return lambda x, seed: varshap_exact(model, x, spec, cfg, master_seed=seed)
        budget = n_coalitions or min(2**d, 4 * d + 16)
        return lambda x, seed: varshap_sampled(
            model, x, spec, cfg, n_coalitions=budget, master_seed=seed
        )
    if preset.kind == "kernelshap":
        if p.get("background", "data") == "zero":
            background = BackgroundSpec.zero()
        else:
            background = BackgroundSpec(
                mode="data_sampling",
                background_rows=train_rows,
                n_background=int(p.get("n_background", 100)),
            )
        budget = int(p.get("n_coalitions", 0)) or min(2**d, max(d + 2, 4 * d + 16))
        return lambda x, seed: kernelshap(
            model, x, background, n_coalitions=budget, master_seed=seed
        )
    spec = PerturbationSpec(feature_std, float(p.get("sigma", 1.0)))
    cfg = LimeConfig(
        sparsity=float(p.get("sparsity", 1.5)),
        kernel_width=p.get("kernel_width"),
        n_samples=int(p.get("n_samples", 1000)),
    )
    return lambda x, seed: lime(model, x, spec, cfg, master_seed=seed)


def explainer_from_attribution(
    att: Attribution, model: Model, data: Dataset
) -> Callable[[np.ndarray, int], Attribution]:
    """Rebuild the explainer that produced an attribution from its metadata."""
    params = dict(att.params)
    kind = att.method
    if kind == "kernelshap":
        params.setdefault(
            "background",
            "zero" if params.get("background_mode") == "zero_baseline" else "data",
        )
    preset = MethodPreset(name=att.method, kind=kind, params=params)
    train_idx, _ = train_test_split_indices(data.n_rows)
    train_rows = data.rows[train_idx]
    feature_std = np.sqrt(np.var(train_rows, axis=0, ddof=1))
    return make_explainer(preset, model, feature_std, train_rows)


# ---------------------------------------------------------------------------
# Grid execution
# ---------------------------------------------------------------------------

def _resolve_pairs(cfg: BenchmarkConfig) -> list[tuple[str, str, Model, Dataset]]:
    pairs = []
    for ds_name in cfg.datasets:
        if ds_name in synth.GTM_NAMES:
            data = synth.generate_dataset(ds_name, cfg.master_seed)
        else:
            data = load_dataset(ds_name)
        for model_name in cfg.models:
            if model_name == "gtm":
                if data.name not in synth.GTM_NAMES:
                    raise ValueError(
                        f"'gtm' model requires a generated dataset, got {ds_name!r}"
                    )
                model = synth.normalized_view(synth.gtm(data.name), data)
                label = f"gtm-{data.name}"
            else:
                model = load_model(model_name)
                label = os.path.basename(model_name)
            if model.arity != data.n_features:
                raise ValueError(
                    f"model {label!r} expects {model.arity} features but dataset "
                    f"{data.name!r} has {data.n_features}"
                )
            pairs.append((label, data.name or ds_name, model, data))
    return pairs


def _select_instances(n_rows: int, n_instances: int) -> np.ndarray:
    _, test_idx = train_test_split_indices(n_rows)
    stride = max(1, len(test_idx) // n_instances)
    return test_idx[::stride][:n_instances]


def run_benchmark(cfg: BenchmarkConfig) -> list[ScoreRow]:
    """Score every (method, model, dataset, instance, metric) cell.

    A failed explanation or metric is recorded as a flagged NaN row, never a
    crash. Rows come back sorted lexicographically by
    (method, model, dataset, instance, metric).
    """
    rows: list[ScoreRow] = []
    for model_label, ds_label, model, data in _resolve_pairs(cfg):
        train_idx, _ = train_test_split_indices(data.n_rows)
        train_rows = data.rows[train_idx]
        feature_std = np.sqrt(np.var(train_rows, axis=0, ddof=1))
        metric_cfg = dataclasses.replace(
            cfg.metric_cfg,
            feature_low=train_rows.min(axis=0),
            feature_high=train_rows.max(axis=0),
        )
        instances = _select_instances(data.n_rows, cfg.n_instances)
        for preset in cfg.methods:
            explain = make_explainer(preset, model, feature_std, train_rows)

            def handle(x, seed, _explain=explain):
                return _explain(x, seed).phi
            for row_idx in instances:
                rows.extend(
                    _score_cell(
                        cfg, preset, model_label, ds_label, model,
                        int(row_idx), data.rows[int(row_idx)], explain, handle, metric_cfg,
                    )
                )
    rows.sort(key=lambda r: (r.method, r.model, r.dataset, r.instance_index, r.metric))
    return rows


def _score_cell(
    cfg, preset, model_label, ds_label, model, row_idx, x, explain, handle, metric_cfg
) -> list[ScoreRow]:
    out: list[ScoreRow] = []

    def emit(metric: str, result):
        if isinstance(result, MetricValue):
            out.append(
                ScoreRow(preset.name, model_label, ds_label, row_idx, metric,
                         result.value, result.flagged)
            )
        else:
            out.append(
                ScoreRow(preset.name, model_label, ds_label, row_idx, metric,
                         float(result), False)
            )

    def stream_for(metric: str) -> np.random.Generator:
        return rng_stream(
            cfg.master_seed,
            derive_stream_id("bench", preset.name, model_label, ds_label, row_idx, metric),
        )

    explain_seed = derive_stream_id(
        "bench-explain", preset.name, model_label, ds_label, row_idx, cfg.master_seed
    )
    try:
        phi = explain(x, explain_seed).phi
    except Exception:
        return [
            ScoreRow(preset.name, model_label, ds_label, row_idx, metric, float("nan"), True)
            for metric in METRIC_NAMES
        ]
    per_metric = {
        "faithfulness_correlation": lambda s: faithfulness_correlation(model, x, phi, metric_cfg, s),
        "faithfulness_estimate": lambda s: faithfulness_estimate(model, x, phi, metric_cfg, s),
        "monotonicity_correlation": lambda s: monotonicity_correlation(model, x, phi, metric_cfg, s),
        "local_lipschitz_estimate": lambda s: local_lipschitz_estimate(handle, x, metric_cfg, s),
        "max_sensitivity": lambda s: max_sensitivity(handle, x, metric_cfg, s),
        "relative_input_stability": lambda s: relative_input_stability(handle, x, metric_cfg, s),
        "sparseness": lambda s: sparseness(phi),
        "complexity": lambda s: complexity(phi),
        "effective_complexity": lambda s: effective_complexity(phi, metric_cfg),
    }
    for metric in METRIC_NAMES:
        try:
            emit(metric, per_metric[metric](stream_for(metric)))
        except Exception:
            out.append(
                ScoreRow(preset.name, model_label, ds_label, row_idx, metric, float("nan"), True)
            )
    return out


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankingTable:
    """Per-metric ranks (1 = best, ties averaged) and their mean per method."""

    methods: tuple[str, ...]
    metrics: tuple[str, ...]
    per_metric_ranks: dict[str, dict[str, float]]
    aggregate: dict[str, float]
    medians: dict[str, dict[str, float]]


def rank_methods(
    rows: Iterable[ScoreRow], directions: dict[str, str] | None = None
) -> RankingTable:
    """Rank methods by median score per metric; aggregate by mean rank.

    A metric where any method has only flagged scores cannot be ranked and is
    excluded with a warning.
    """
    directions = directions or METRIC_DIRECTIONS
    rows = list(rows)
    methods = sorted({r.method for r in rows})
    if len(methods) < 2:
        raise ValueError("ranking needs at least 2 methods")
    metrics_present = sorted({r.metric for r in rows})
    scores: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        if not r.flagged and math.isfinite(r.score):
            scores.setdefault((r.metric, r.method), []).append(r.score)
    usable_metrics: list[str] = []
    medians: dict[str, dict[str, float]] = {m: {} for m in methods}
    for metric in metrics_present:
        per_method = {}
        for method in methods:
            vals = scores.get((metric, method))
            if vals:
                per_method[method] = float(_median_low(vals))
        if len(per_method) < len(methods):
            missing = sorted(set(methods) - set(per_method))
            warnings.warn(
                f"metric {metric!r} has only flagged scores for {missing}; excluded from ranking"
            )
            continue
        usable_metrics.append(metric)
        for method in methods:
            medians[method][metric] = per_method[method]
    if not usable_metrics:
        raise ValueError("no metric has a full set of valid scores")
    per_metric_ranks: dict[str, dict[str, float]] = {m: {} for m in methods}
    for metric in usable_metrics:
        vals = np.array([medians[m][metric] for m in methods])
        ranks = rank_with_average_ties(
            vals, descending=directions.get(metric, HIGHER_BETTER) == HIGHER_BETTER
        )
        for m, rank in zip(methods, ranks):
            per_metric_ranks[m][metric] = float(rank)
    aggregate = {
        m: float(np.mean([per_metric_ranks[m][metric] for metric in usable_metrics]))
        for m in methods
    }
    return RankingTable(
        methods=tuple(methods),
        metrics=tuple(usable_metrics),
        per_metric_ranks=per_metric_ranks,
        aggregate=aggregate,
        medians=medians,
    )


def _median_low(values: list[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def write_scores_csv(rows: Iterable[ScoreRow], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ScoreRow._fields)
    for r in rows:
        writer.writerow(
            [r.method, r.model, r.dataset, r.instance_index, r.metric,
             repr(float(r.score)), str(bool(r.flagged)).lower()]
        )
    atomic_write_text(path, buf.getvalue())


def read_scores_csv(path) -> list[ScoreRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ScoreRow._fields:
            raise ValueError(f"{path}: unexpected score CSV header {header}")
        return [
            ScoreRow(m, mo, ds, int(i), metric, float(s), flag == "true")
            for m, mo, ds, i, metric, s, flag in reader
        ]


def emit_report(table: RankingTable, fmt: str, path) -> None:
    """Write the ranking table as csv, json, or an svg bar chart."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", *table.metrics, "average_ranking"])
        for method in sorted(table.methods, key=lambda m: table.aggregate[m]):
            writer.writerow(
                [method]
                + [repr(table.per_metric_ranks[method][x]) for x in table.metrics]
                + [repr(table.aggregate[method])]
            )
        atomic_write_text(path, buf.getvalue())
    elif fmt == "json":
        doc = {
            "methods": list(table.methods),
            "metrics": list(table.metrics),
            "per_metric_ranks": table.per_metric_ranks,
            "aggregate": table.aggregate,
            "medians": table.medians,
        }
        atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
    elif fmt == "svg":
        order = sorted(table.methods, key=lambda m: table.aggregate[m])
        svg = bar_chart_svg(
            order,
            [table.aggregate[m] for m in order],
            title="Average ranking (lower is better)",
        )
        atomic_write_text(path, svg + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_ranking_json(path) -> RankingTable:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return RankingTable(
        methods=tuple(doc["methods"]),
        metrics=tuple(doc["metrics"]),
        per_metric_ranks=doc["per_metric_ranks"],
        aggregate=doc["aggregate"],
        medians=doc["medians"],
    )
