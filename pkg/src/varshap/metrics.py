"""Attribution-quality metrics: faithfulness, robustness, complexity.

Three families of three. Faithfulness metrics perturb the instance toward a
baseline and compare output changes against the attribution; robustness
metrics re-invoke the explainer on jittered inputs and measure how much the
attribution moves; complexity metrics look only at the attribution vector.

Degenerate inputs (zero-variance series, all-tied ranks, all-zero
attributions) yield a flagged score, never a silent number; flagged scores
are excluded from medians and counted in the report.
"""
from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .core import Model, as_vector, atomic_write_text

__all__ = [
    "MetricConfig",
    "MetricValue",
    "MetricReport",
    "MetricRow",
    "faithfulness_correlation",
    "faithfulness_estimate",
    "monotonicity_correlation",
    "local_lipschitz_estimate",
    "max_sensitivity",
    "relative_input_stability",
    "relative_stability_ratio",
    "sparseness",
    "complexity",
    "effective_complexity",
    "rank_with_average_ties",
    "write_metric_csv",
    "METRIC_NAMES",
    "METRIC_DIRECTIONS",
    "HIGHER_BETTER",
    "LOWER_BETTER",
]

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"

BASELINE_BLACK = "black"
BASELINE_UNIFORM = "uniform"

# Guard for elementwise relative changes in the stability metric.
EPS_STABILITY = 1e-6

METRIC_NAMES = (
    "faithfulness_correlation",
    "faithfulness_estimate",
    "monotonicity_correlation",
    "local_lipschitz_estimate",
    "max_sensitivity",
    "relative_input_stability",
    "sparseness",
    "complexity",
    "effective_complexity",
)

METRIC_DIRECTIONS = {
    "faithfulness_correlation": HIGHER_BETTER,
    "faithfulness_estimate": HIGHER_BETTER,
    "monotonicity_correlation": HIGHER_BETTER,
    "local_lipschitz_estimate": LOWER_BETTER,
    "max_sensitivity": LOWER_BETTER,
    "relative_input_stability": LOWER_BETTER,
    "sparseness": HIGHER_BETTER,
    "complexity": LOWER_BETTER,
    "effective_complexity": LOWER_BETTER,
}

# An explainer handle re-invocable with a derived seed: (x, seed) -> phi.
Explainer = Callable[[np.ndarray, int], np.ndarray]


class MetricValue(NamedTuple):
    value: float
    flagged: bool = False


@dataclass(frozen=True)
class MetricConfig:
    """Shared metric hyperparameters.

    ``feature_low``/``feature_high`` give each feature's observed range and
    are required only by the uniform baseline.
    """

    runs: int = 100
    subset_size: int = 6
    perturb_baseline: str = BASELINE_UNIFORM
    n_metric_samples: int = 10
    noise_std: float = 0.2
    lower_bound: float = 0.02
    epsilon: float = 0.05
    feature_low: np.ndarray | None = None
    feature_high: np.ndarray | None = None

    def __post_init__(self):
        if self.perturb_baseline not in (BASELINE_BLACK, BASELINE_UNIFORM):
            raise ValueError(f"unknown perturbation baseline {self.perturb_baseline!r}")
        if self.runs < 2 or self.n_metric_samples < 1:
            raise ValueError("runs must be >= 2 and n_metric_samples >= 1")
        for attr in ("feature_low", "feature_high"):
            val = getattr(self, attr)
            if val is not None:
                object.__setattr__(self, attr, np.asarray(val, dtype=np.float64))

    def baseline_values(self, features: np.ndarray, stream: np.random.Generator) -> np.ndarray:
        """One baseline value per requested feature index."""
        if self.perturb_baseline == BASELINE_BLACK:
            return np.zeros(len(features))
        if self.feature_low is None or self.feature_high is None:
            raise ValueError("uniform baseline needs feature_low/feature_high ranges")
        lo = self.feature_low[features]
        hi = self.feature_high[features]
        return lo + (hi - lo) * stream.random(len(features))


def _pearson(a: np.ndarray, b: np.ndarray) -> MetricValue:
    a = a - a.mean()
    b = b - b.mean()
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        return MetricValue(0.0, flagged=True)
    return MetricValue(float(np.clip((a @ b) / (na * nb), -1.0, 1.0)))


def rank_with_average_ties(values: np.ndarray, descending: bool = False) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    v = np.asarray(values, dtype=np.float64)
    if descending:
        v = -v
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# Faithfulness
# ---------------------------------------------------------------------------

def faithfulness_correlation(
    model: Model, x, phi: np.ndarray, cfg: MetricConfig, stream: np.random.Generator
) -> MetricValue:
    """Correlate summed attributions of random subsets with the output drop.

    Each run replaces a random feature subset by baseline values and records
    (sum of phi over the subset, model(x) - model(x_perturbed)); the score is
    the Pearson correlation across runs.
    """
    x = as_vector(x)
    phi = np.asarray(phi, dtype=np.float64)
    d = x.size
    if cfg.subset_size > d:
        raise ValueError(f"subset_size {cfg.subset_size} exceeds {d} features")
    f_x = model(x)
    attr_sums = np.empty(cfg.runs)
    perturbed = np.tile(x, (cfg.runs, 1))
    for r in range(cfg.runs):
        subset = stream.choice(d, size=cfg.subset_size, replace=False)
        perturbed[r, subset] = cfg.baseline_values(subset, stream)
        attr_sums[r] = phi[subset].sum()
    drops = f_x - model.predict_batch(perturbed)
    return _pearson(attr_sums, drops)


def faithfulness_estimate(
    model: Model, x, phi: np.ndarray, cfg: MetricConfig, stream: np.random.Generator
) -> MetricValue:
    """Correlate per-feature output changes (single-feature steps) with phi."""
    x = as_vector(x)
    phi = np.asarray(phi, dtype=np.float64)
    d = x.size
    if d < 2:
        raise ValueError("faithfulness_estimate needs at least 2 features")
    f_x = model(x)
    perturbed = np.tile(x, (d, 1))
    for i in range(d):
        perturbed[i, i] = cfg.baseline_values(np.array([i]), stream)[0]
    drops = f_x - model.predict_batch(perturbed)
    return _pearson(phi, drops)


def monotonicity_correlation(
    model: Model, x, phi: np.ndarray, cfg: MetricConfig, stream: np.random.Generator
) -> MetricValue:
    """Spearman correlation between |phi| ranks and mean squared output change.

    Each feature is perturbed alone to ``n_metric_samples`` baseline draws;
    its effect is the mean squared output change. Fully tied ranks on either
    side flag the score as degenerate.
    """
    x = as_vector(x)
    phi = np.abs(np.asarray(phi, dtype=np.float64))
    d = x.size
    if d < 2:
        raise ValueError("monotonicity_correlation needs at least 2 features")
    f_x = model(x)
    k = cfg.n_metric_samples
    perturbed = np.tile(x, (d * k, 1))
    for i in range(d):
        draws = cfg.baseline_values(np.full(k, i), stream)
        perturbed[i * k : (i + 1) * k, i] = draws
    sq = (f_x - model.predict_batch(perturbed)) ** 2
    effect = sq.reshape(d, k).mean(axis=1)
    if np.all(phi == phi[0]) or np.all(effect == effect[0]):
        return MetricValue(0.0, flagged=True)
    return _pearson(rank_with_average_ties(phi), rank_with_average_ties(effect))


# ---------------------------------------------------------------------------
# Robustness
# ---------------------------------------------------------------------------

def _derived_seed(stream: np.random.Generator) -> int:
    return int(stream.integers(0, 1 << 63))


def local_lipschitz_estimate(
    explainer: Explainer, x, cfg: MetricConfig, stream: np.random.Generator
) -> MetricValue:
    """Max ratio ||phi(x') - phi(x)|| / ||x' - x|| over Gaussian jitters."""
    x = as_vector(x)
    phi0 = np.asarray(explainer(x, _derived_seed(stream)), dtype=np.float64)
    worst = 0.0
    for _ in range(cfg.n_metric_samples):
        delta = stream.normal(0.0, cfg.noise_std, size=x.size)
        denom = float(np.linalg.norm(delta))
        if denom == 0.0:
            continue
        phi1 = np.asarray(explainer(x + delta, _derived_seed(stream)), dtype=np.float64)
        worst = max(worst, float(np.linalg.norm(phi1 - phi0)) / denom)
    return MetricValue(worst)


def max_sensitivity(
    explainer: Explainer, x, cfg: MetricConfig, stream: np.random.Generator
) -> MetricValue:
    """Max attribution displacement over a uniform max-norm ball of jitters."""
    x = as_vector(x)
    phi0 = np.asarray(explainer(x, _derived_seed(stream)), dtype=np.float64)
    radius = cfg.lower_bound
    worst = 0.0
    for _ in range(cfg.n_metric_samples):
        delta = stream.uniform(-radius, radius, size=x.size)
        phi1 = np.asarray(explainer(x + delta, _derived_seed(stream)), dtype=np.float64)
        worst = max(worst, float(np.linalg.norm(phi1 - phi0)))
    return MetricValue(worst)


def relative_stability_ratio(
    phi0: np.ndarray, phi1: np.ndarray, x0: np.ndarray, x1: np.ndarray, eps: float = EPS_STABILITY
) -> float:
    """||(phi1 - phi0) / phi0|| / max(||(x1 - x0) / x0||, eps), zero-guarded."""
    phi_denom = np.where(phi0 != 0.0, phi0, eps)
    x_denom = np.where(x0 != 0.0, x0, eps)
    num = float(np.linalg.norm((phi1 - phi0) / phi_denom))
    den = max(float(np.linalg.norm((x1 - x0) / x_denom)), eps)
    return num / den


def relative_input_stability(
    explainer: Explainer, x, cfg: MetricConfig, stream: np.random.Generator
) -> MetricValue:
    """Max relative attribution change per relative input change."""
    x = as_vector(x)
    phi0 = np.asarray(explainer(x, _derived_seed(stream)), dtype=np.float64)
    if np.all(phi0 == 0.0):
        return MetricValue(0.0, flagged=True)
    worst = 0.0
    for _ in range(cfg.n_metric_samples):
        delta = stream.normal(0.0, cfg.noise_std, size=x.size)
        phi1 = np.asarray(explainer(x + delta, _derived_seed(stream)), dtype=np.float64)
        worst = max(worst, relative_stability_ratio(phi0, phi1, x, x + delta))
    return MetricValue(worst)


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------

def sparseness(phi: np.ndarray) -> MetricValue:
    """Gini index of |phi|: 0 for uniform magnitudes, -> 1 for one-hot."""
    a = np.sort(np.abs(np.asarray(phi, dtype=np.float64)))
    total = a.sum()
    d = a.size
    if total == 0.0:
        return MetricValue(0.0, flagged=True)
    i = np.arange(1, d + 1)
    return MetricValue(float(((2 * i - d - 1) @ a) / (d * total)))


def complexity(phi: np.ndarray) -> MetricValue:
    """Shannon entropy (nats) of the normalized attribution magnitudes."""
    a = np.abs(np.asarray(phi, dtype=np.float64))
    total = a.sum()
    if total == 0.0:
        return MetricValue(0.0, flagged=True)
    p = a / total
    nz = p[p > 0]
    return MetricValue(float(-(nz @ np.log(nz))))


def effective_complexity(phi: np.ndarray, cfg: MetricConfig) -> int:
    """Number of attributions strictly above the magnitude threshold."""
    return int(np.sum(np.abs(np.asarray(phi, dtype=np.float64)) > cfg.epsilon))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    """Per-instance scores of one metric plus their lower-middle median."""

    metric_name: str
    per_instance: tuple[float, ...]
    flagged: tuple[bool, ...]
    direction: str

    def __post_init__(self):
        if len(self.per_instance) != len(self.flagged):
            raise ValueError("per_instance and flagged lengths differ")
        if self.direction not in (HIGHER_BETTER, LOWER_BETTER):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def valid_scores(self) -> tuple[float, ...]:
        return tuple(v for v, f in zip(self.per_instance, self.flagged) if not f)

    @property
    def n_flagged(self) -> int:
        return sum(self.flagged)

    @property
    def median(self) -> float:
        """Median of unflagged scores; lower of the two middles for even counts."""
        scores = self.valid_scores
        if not scores:
            return float("nan")
        return float(statistics.median_low(scores))


class MetricRow(NamedTuple):
    metric_name: str
    method: str
    model: str
    dataset: str
    instance_index: int
    score: float
    flagged: bool


def write_metric_csv(rows: Iterable[MetricRow], path) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MetricRow._fields)
    for row in rows:
        writer.writerow(
            [
                row.metric_name,
                row.method,
                row.model,
                row.dataset,
                row.instance_index,
                repr(float(row.score)),
                str(bool(row.flagged)).lower(),
            ]
        )
    atomic_write_text(path, buf.getvalue())
