"""Synthetic clustered datasets and their ground-truth models.

Three generators cover the two case studies: two clustered 2-feature
datasets that agree everywhere except in one sub-population, and a
3-feature dataset with a sharp non-linearity plus an irrelevant feature.
Ground-truth models evaluate the generating formulas directly in raw
feature units; pair them with a normalized dataset via
:func:`normalized_view`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, Model, derive_stream_id, rng_stream, train_test_split_indices

__all__ = [
    "ClusterSpec",
    "CLUSTERS",
    "DATASET3_SIZE",
    "gen_dataset1",
    "gen_dataset2",
    "gen_dataset3",
    "generate_dataset",
    "gtm",
    "normalized_view",
    "normalize_rows",
    "denormalize_rows",
    "GTM_NAMES",
]


@dataclass(frozen=True)
class ClusterSpec:
    """One Gaussian sub-population: label, 2-d center, spread, sample count."""

    label: str
    center: tuple[float, float]
    std: float
    n: int

    def __post_init__(self):
        if self.n <= 0 or self.std <= 0:
            raise ValueError("cluster needs n > 0 and std > 0")


# Cluster A sits at the explained point [0, 0]; B and C are distant enough
# that C's formula change in dataset2 is a global, not local, shift.
CLUSTERS: tuple[ClusterSpec, ...] = (
    ClusterSpec("A", (0.0, 0.0), 0.7, 1000),
    ClusterSpec("B", (4.0, 0.0), 0.7, 5000),
    ClusterSpec("C", (0.0, 4.0), 0.7, 5000),
)

DATASET3_SIZE = 10_000

GTM_NAMES = ("dataset1", "dataset2", "dataset3")

_C_CENTER = np.array(CLUSTERS[2].center)


def _shared_formula(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    return x1 + 0.2 * x2


def _group_c_formula(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    return x1 - 0.05 * x1 * x2


def _clustered_features(seed: int) -> tuple[np.ndarray, tuple[str, ...]]:
    """Raw 2-d cluster draws, shuffled; identical for every dataset variant."""
    stream = rng_stream(seed, derive_stream_id("synth-clusters"))
    blocks = []
    labels: list[str] = []
    for c in CLUSTERS:
        blocks.append(np.asarray(c.center) + c.std * stream.standard_normal((c.n, 2)))
        labels.extend([c.label] * c.n)
    raw = np.vstack(blocks)
    order = rng_stream(seed, derive_stream_id("synth-shuffle")).permutation(raw.shape[0])
    return raw[order], tuple(labels[i] for i in order)


def _normalize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """z-score using the training portion of the rows (leading 80%)."""
    train_idx, _ = train_test_split_indices(raw.shape[0])
    mean = raw[train_idx].mean(axis=0)
    std = raw[train_idx].std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (raw - mean) / std, mean, std


def normalize_rows(raw: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(raw, dtype=np.float64) - mean) / std


def denormalize_rows(rows: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return np.asarray(rows, dtype=np.float64) * std + mean


def gen_dataset1(seed: int) -> Dataset:
    """Three clusters, one shared relationship: Y = X1 + 0.2 * X2."""
    raw, labels = _clustered_features(seed)
    target = _shared_formula(raw[:, 0], raw[:, 1])
    rows, mean, std = _normalize(raw)
    return Dataset(
        rows=rows,
        feature_names=("X1", "X2"),
        target=target,
        group_labels=labels,
        norm_mean=mean,
        norm_std=std,
        name="dataset1",
    )


def gen_dataset2(seed: int) -> Dataset:
    """Same feature draws as dataset1; cluster C follows a different formula."""
    raw, labels = _clustered_features(seed)
    in_c = np.array([lab == "C" for lab in labels])
    target = np.where(
        in_c,
        _group_c_formula(raw[:, 0], raw[:, 1]),
        _shared_formula(raw[:, 0], raw[:, 1]),
    )
    rows, mean, std = _normalize(raw)
    return Dataset(
        rows=rows,
        feature_names=("X1", "X2"),
        target=target,
        group_labels=labels,
        norm_mean=mean,
        norm_std=std,
        name="dataset2",
    )


def gen_dataset3(seed: int) -> Dataset:
    """Sharp non-linearity Y = |X1 + X2| plus an uncorrelated feature X3."""
    stream = rng_stream(seed, derive_stream_id("synth-dataset3"))
    raw = stream.standard_normal((DATASET3_SIZE, 3))
    target = np.abs(raw[:, 0] + raw[:, 1])
    rows, mean, std = _normalize(raw)
    return Dataset(
        rows=rows,
        feature_names=("X1", "X2", "X3"),
        target=target,
        norm_mean=mean,
        norm_std=std,
        name="dataset3",
    )


_GENERATORS = {"dataset1": gen_dataset1, "dataset2": gen_dataset2, "dataset3": gen_dataset3}


def generate_dataset(name: str, seed: int) -> Dataset:
    if name not in _GENERATORS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {GTM_NAMES}")
    return _GENERATORS[name](seed)


def gtm(name: str) -> Model:
    """Ground-truth model: the generating formula itself, in raw feature units.

    ``dataset2`` is group-conditional; an arbitrary point is assigned the
    formula of its nearest cluster center.
    """
    if name == "dataset1":
        return Model(
            predict=lambda rows: _shared_formula(rows[:, 0], rows[:, 1]),
            arity=2,
            name="gtm-dataset1",
        )
    if name == "dataset2":

        def predict(rows: np.ndarray) -> np.ndarray:
            centers = np.array([c.center for c in CLUSTERS])
            dist2 = ((rows[:, None, :2] - centers[None, :, :]) ** 2).sum(axis=2)
            nearest_c = dist2.argmin(axis=1) == 2
            return np.where(
                nearest_c,
                _group_c_formula(rows[:, 0], rows[:, 1]),
                _shared_formula(rows[:, 0], rows[:, 1]),
            )

        return Model(predict=predict, arity=2, name="gtm-dataset2")
    if name == "dataset3":
        return Model(
            predict=lambda rows: np.abs(rows[:, 0] + rows[:, 1]),
            arity=3,
            name="gtm-dataset3",
        )
    raise ValueError(f"unknown ground-truth model {name!r}; expected one of {GTM_NAMES}")


def normalized_view(model: Model, data: Dataset) -> Model:
    """Wrap a raw-space model so it consumes the dataset's normalized rows."""
    if data.norm_mean is None or data.norm_std is None:
        return model
    mean, std = data.norm_mean, data.norm_std

    def predict(rows: np.ndarray) -> np.ndarray:
        return model.predict_batch(rows * std + mean)

    return Model(
        predict=predict,
        arity=model.arity,
        output_index=model.output_index,
        name=model.name + "@normalized",
        reentrant=model.reentrant,
    )
