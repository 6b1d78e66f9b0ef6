"""Local feature attribution by variance reduction, with baselines and a
benchmark harness for explanation quality.

The estimators explain one prediction of a black-box scalar model by playing
a cooperative game over feature coalitions: a coalition's value is the local
output variance when its features are pinned to the explained instance and
the rest are perturbed around it. Shapley values of that game are the
attributions. KernelSHAP and LIME are included for comparison, along with
nine faithfulness/robustness/complexity metrics and a ranking benchmark.
"""

from .core import (
    Attribution,
    Coalition,
    Dataset,
    DatasetLoadError,
    Instance,
    Model,
    ModelLoadError,
    load_attribution,
    load_dataset,
    load_model,
    rng_stream,
    save_attribution,
    save_dataset,
)
from .perturb import PerturbationSpec, estimate_feature_stats, sample_perturbed
from .shapley import (
    VarianceGame,
    VarianceGameConfig,
    shapley_kernel_weight,
    variance_given_coalition,
    varshap_exact,
    varshap_sampled,
    verify_attribution_axioms,
)
from .baselines import BackgroundSpec, LimeConfig, kernelshap, lime
from .metrics import (
    METRIC_DIRECTIONS,
    METRIC_NAMES,
    MetricConfig,
    MetricReport,
    complexity,
    effective_complexity,
    faithfulness_correlation,
    faithfulness_estimate,
    local_lipschitz_estimate,
    max_sensitivity,
    monotonicity_correlation,
    relative_input_stability,
    sparseness,
)
from .synth import gen_dataset1, gen_dataset2, gen_dataset3, gtm, normalized_view
from .bench import (
    BenchmarkConfig,
    MethodPreset,
    RankingTable,
    default_method_presets,
    rank_methods,
    run_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "Attribution",
    "BackgroundSpec",
    "BenchmarkConfig",
    "Coalition",
    "Dataset",
    "DatasetLoadError",
    "Instance",
    "LimeConfig",
    "METRIC_DIRECTIONS",
    "METRIC_NAMES",
    "MethodPreset",
    "MetricConfig",
    "MetricReport",
    "Model",
    "ModelLoadError",
    "PerturbationSpec",
    "RankingTable",
    "VarianceGame",
    "VarianceGameConfig",
    "complexity",
    "default_method_presets",
    "effective_complexity",
    "estimate_feature_stats",
    "faithfulness_correlation",
    "faithfulness_estimate",
    "gen_dataset1",
    "gen_dataset2",
    "gen_dataset3",
    "gtm",
    "kernelshap",
    "lime",
    "load_attribution",
    "load_dataset",
    "load_model",
    "local_lipschitz_estimate",
    "max_sensitivity",
    "monotonicity_correlation",
    "normalized_view",
    "rank_methods",
    "relative_input_stability",
    "rng_stream",
    "run_benchmark",
    "sample_perturbed",
    "save_attribution",
    "save_dataset",
    "shapley_kernel_weight",
    "sparseness",
    "variance_given_coalition",
    "varshap_exact",
    "varshap_sampled",
    "verify_attribution_axioms",
]
