"""KernelSHAP and LIME, for head-to-head comparison with the variance game.

KernelSHAP explains the expected-output game: a coalition's value is the
mean model output with in-coalition features pinned to the instance and the
rest replaced by background values. LIME fits an L1-regularized weighted
linear surrogate on a Gaussian neighborhood of the instance. Both reuse the
perturbation and regression machinery of the other estimators so all methods
share one locality definition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Attribution, Coalition, Dataset, Model, as_vector, derive_stream_id, rng_stream
from .perturb import PerturbationSpec, sample_perturbed
from .shapley import draw_coalition_masks, solve_shapley_wls

__all__ = ["BackgroundSpec", "LimeConfig", "kernelshap", "lime"]

ZERO_BASELINE = "zero_baseline"
DATA_SAMPLING = "data_sampling"


@dataclass(frozen=True)
class BackgroundSpec:
    """How feature absence is simulated: a zero vector or sampled data rows."""

    mode: str
    background_rows: np.ndarray | None = None
    n_background: int = 100

    def __post_init__(self):
        if self.mode not in (ZERO_BASELINE, DATA_SAMPLING):
            raise ValueError(f"unknown background mode {self.mode!r}")
        if self.mode == DATA_SAMPLING:
            rows = np.asarray(self.background_rows, dtype=np.float64)
            if rows.ndim != 2 or rows.shape[0] < 1:
                raise ValueError("data_sampling requires at least one background row")
            rows = rows.copy()
            rows.flags.writeable = False
            object.__setattr__(self, "background_rows", rows)
        if self.n_background < 1:
            raise ValueError("n_background must be >= 1")

    @classmethod
    def zero(cls) -> "BackgroundSpec":
        return cls(mode=ZERO_BASELINE)

    @classmethod
    def from_dataset(cls, data: Dataset, n_background: int = 100) -> "BackgroundSpec":
        return cls(mode=DATA_SAMPLING, background_rows=data.rows, n_background=n_background)

    def draw(self, d: int, stream: np.random.Generator) -> np.ndarray:
        """Materialize the background matrix for one explanation."""
        if self.mode == ZERO_BASELINE:
            return np.zeros((1, d))
        rows = self.background_rows
        if rows.shape[1] != d:
            raise ValueError(f"background rows have {rows.shape[1]} features, expected {d}")
        if rows.shape[0] <= self.n_background:
            return rows
        picked = stream.choice(rows.shape[0], size=self.n_background, replace=False)
        return rows[np.sort(picked)]


def kernelshap(
    model: Model,
    x,
    background: BackgroundSpec,
    n_coalitions: int = 0,
    master_seed: int = 0,
) -> Attribution:
    """Shapley values of the expected-output game by constrained WLS.

    v(S) averages the model over background completions of the instance's
    in-coalition values; the fit enforces v(empty) as intercept and local
    accuracy phi0 + sum(phi) = model(x), so the attribution always
    reconstructs the prediction exactly.
    """
    x = as_vector(x)
    d = x.size
    if model.arity != d:
        raise ValueError(f"model arity {model.arity} does not match instance d={d}")
    if n_coalitions < d + 2:
        raise ValueError(f"need n_coalitions >= d + 2 = {d + 2}, got {n_coalitions}")
    bg = background.draw(d, rng_stream(master_seed, derive_stream_id("kernelshap-background")))
    sampler = rng_stream(master_seed, derive_stream_id("kernelshap-coalition-sampler"))
    masks, weights = draw_coalition_masks(d, n_coalitions - 2, sampler)
    v_empty = float(np.mean(model.predict_batch(bg)))
    v_full = model(x)
    values = np.array([_mean_completion_value(model, x, mask, bg) for mask in masks])
    phi = solve_shapley_wls(masks, values, weights, v_empty, v_full, d)
    return Attribution(
        phi=phi,
        method="kernelshap",
        params={
            "background_mode": background.mode,
            "n_background": int(bg.shape[0]),
            "n_coalitions": len(masks) + 2,
        },
        seed=master_seed,
        base_variance=v_empty,
    )


def _mean_completion_value(model: Model, x: np.ndarray, mask: int, bg: np.ndarray) -> float:
    rows = bg.copy()
    inside = [i for i in range(x.size) if mask >> i & 1]
    rows[:, inside] = x[inside]
    return float(np.mean(model.predict_batch(rows)))


# ---------------------------------------------------------------------------
# LIME
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimeConfig:
    """Surrogate-fit knobs; kernel_width defaults to 0.75 * sqrt(d)."""

    sparsity: float = 1.5
    kernel_width: float | None = None
    n_samples: int = 1000

    def __post_init__(self):
        if self.sparsity < 0:
            raise ValueError("sparsity must be >= 0")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ValueError("kernel_width must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")

    def width_for(self, d: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * math.sqrt(d)


def lime(
    model: Model,
    x,
    spec: PerturbationSpec,
    cfg: LimeConfig,
    master_seed: int = 0,
) -> Attribution:
    """Locally weighted sparse linear surrogate around the instance.

    Neighborhood samples come from the shared Gaussian perturbation;
    proximity weights are exp(-||z - x||^2 / width^2) with distances taken on
    features standardized by their data spread. Coefficients are returned in
    raw feature units; the surrogate intercept lands in ``base_variance``.
    """
    x = as_vector(x)
    d = x.size
    if model.arity != d or spec.n_features != d:
        raise ValueError("model, instance, and perturbation dimensions must agree")
    if cfg.n_samples < d + 2:
        raise ValueError(f"need n_samples >= d + 2 = {d + 2}, got {cfg.n_samples}")
    stream = rng_stream(master_seed, derive_stream_id("lime-neighborhood"))
    z = sample_perturbed(x, Coalition.empty(d), spec, cfg.n_samples, stream)
    y = model.predict_batch(z)
    scale = np.where(spec.feature_std > 0, spec.feature_std, 1.0)
    u = (z - x) / scale  # standardized deviations; exactly 0 for constant features
    width = cfg.width_for(d)
    weights = np.exp(-np.sum(u * u, axis=1) / width**2)
    if not np.any(weights > 0):
        raise ValueError(
            f"all proximity weights underflowed to zero (kernel_width={width}); "
            "increase kernel_width or sigma"
        )
    beta0, beta, _ = weighted_lasso_cd(u, y, weights, cfg.sparsity)
    phi = np.where(spec.feature_std > 0, beta / scale, 0.0)
    return Attribution(
        phi=phi,
        method="lime",
        params={
            "sparsity": cfg.sparsity,
            "kernel_width": width,
            "n_samples": cfg.n_samples,
            "sigma": spec.sigma,
        },
        seed=master_seed,
        base_variance=beta0,
    )


def weighted_lasso_cd(
    features: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_sweeps: int = 1000,
) -> tuple[float, np.ndarray, list[float]]:
    """Coordinate descent for the weighted lasso with unpenalized intercept.

    Minimizes (1 / 2W) * sum_n w_n (y_n - b0 - f_n . beta)^2 + lam * ||beta||_1
    with W = sum_n w_n. Returns (intercept, coefficients, objective per
    sweep); the objective is non-increasing and iteration stops once the
    largest coefficient change in a sweep falls below ``tol``.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    if not total > 0:
        raise ValueError("weights must have positive total mass")
    wn = w / total
    f_mean = wn @ f
    y_mean = float(wn @ y)
    fc = f - f_mean
    yc = y - y_mean
    col_scale = wn @ (fc * fc)  # per-coordinate curvature
    d = f.shape[1]
    beta = np.zeros(d)
    resid = yc.copy()
    objectives: list[float] = []
    for _ in range(max_sweeps):
        max_step = 0.0
        for i in range(d):
            if col_scale[i] <= 0.0:
                continue
            rho = float((wn * fc[:, i]) @ resid) + col_scale[i] * beta[i]
            new = _soft_threshold(rho, lam) / col_scale[i]
            step = new - beta[i]
            if step != 0.0:
                resid -= step * fc[:, i]
                beta[i] = new
                max_step = max(max_step, abs(step))
        objectives.append(0.5 * float(wn @ (resid * resid)) + lam * float(np.abs(beta).sum()))
        if max_step < tol:
            break
    intercept = y_mean - float(beta @ f_mean)
    return intercept, beta, objectives


def _soft_threshold(v: float, lam: float) -> float:
    if v > lam:
        return v - lam
    if v < -lam:
        return v + lam
    return 0.0
