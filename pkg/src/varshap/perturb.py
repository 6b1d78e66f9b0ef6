"""Instance-centered Gaussian perturbation.

A point x is perturbed by independent Gaussians N(x_i, alpha * s_i^2) where
s_i is the per-feature standard deviation estimated from data and alpha
scales the neighborhood size. The user-facing knob is ``sigma``, a multiplier
on standard deviations, with alpha = sigma**2, so sigma = 1 reproduces the
spread observed in the data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Coalition, Dataset, as_vector

__all__ = ["PerturbationSpec", "estimate_feature_stats", "sample_perturbed"]


@dataclass(frozen=True)
class PerturbationSpec:
    """Per-feature standard deviations plus the neighborhood scale."""

    feature_std: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        std = np.asarray(self.feature_std, dtype=np.float64)
        if std.ndim != 1 or std.size < 1:
            raise ValueError("feature_std must be a non-empty vector")
        if not np.all(np.isfinite(std)) or np.any(std < 0):
            raise ValueError("feature_std entries must be finite and >= 0")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError("sigma must be a positive finite number")
        std = std.copy()
        std.flags.writeable = False
        object.__setattr__(self, "feature_std", std)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def alpha(self) -> float:
        """Variance scale: exactly sigma squared."""
        return self.sigma**2

    @property
    def n_features(self) -> int:
        return int(self.feature_std.size)

    @property
    def perturb_std(self) -> np.ndarray:
        """Standard deviation actually applied per feature: sigma * s_i."""
        return self.sigma * self.feature_std

    @classmethod
    def from_dataset(cls, data: Dataset, sigma: float = 1.0) -> "PerturbationSpec":
        return cls(feature_std=np.sqrt(estimate_feature_stats(data)), sigma=sigma)


def estimate_feature_stats(data: Dataset) -> np.ndarray:
    """Unbiased per-column sample variance (divisor n-1) of the dataset rows."""
    if data.n_rows < 2:
        raise ValueError("variance estimation needs at least 2 rows")
    return np.var(data.rows, axis=0, ddof=1)


def sample_perturbed(
    x,
    fixed: Coalition,
    spec: PerturbationSpec,
    m: int,
    stream: np.random.Generator,
) -> np.ndarray:
    """Draw m perturbed copies of x with the coalition's features held fixed.

    Column i equals x_i exactly for i in ``fixed``; every other column is an
    i.i.d. draw from N(x_i, alpha * s_i^2), columns mutually independent.
    Only the free columns consume randomness from ``stream``.
    """
    x = as_vector(x)
    if m < 1:
        raise ValueError("sample count must be >= 1")
    if spec.n_features != x.size or fixed.n_features != x.size:
        raise ValueError(
            f"dimension mismatch: x has {x.size} features, spec {spec.n_features}, "
            f"coalition {fixed.n_features}"
        )
    out = np.tile(x, (m, 1))
    free = list(fixed.complement())
    if free:
        noise = stream.standard_normal((m, len(free)))
        out[:, free] += noise * spec.perturb_std[free]
    return out
