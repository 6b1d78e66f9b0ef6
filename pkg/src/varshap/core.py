"""Domain types, model/dataset loading, and the deterministic randomness contract.

Everything downstream (estimators, baselines, metrics, benchmark) builds on the
types in this module. All types are immutable after construction and safe to
share across threads; arrays are stored read-only.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "ModelLoadError",
    "DatasetLoadError",
    "Instance",
    "Model",
    "Dataset",
    "Coalition",
    "Attribution",
    "load_model",
    "load_dataset",
    "save_dataset",
    "save_attribution",
    "load_attribution",
    "rng_stream",
    "derive_stream_id",
    "train_test_split_indices",
    "atomic_write_text",
]

MASK_FEATURE_LIMIT = 64  # coalitions use an integer bitmask up to this arity


class ModelLoadError(ValueError):
    """Raised when a model file fails to parse or validate."""


class DatasetLoadError(ValueError):
    """Raised when a dataset file fails to parse or validate."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Instance:
    """A single point to be explained: a finite d-vector in feature units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("instance must be a vector with at least one feature")
        if not np.all(np.isfinite(v)):
            raise ValueError("instance contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def n_features(self) -> int:
        return int(self.values.size)


def as_vector(x) -> np.ndarray:
    """Coerce an Instance or array-like into a finite 1-d float64 vector."""
    if isinstance(x, Instance):
        return x.values
    return Instance(np.asarray(x, dtype=np.float64)).values


@dataclass(frozen=True)
class Model:
    """A black-box scalar-output predictor over d-dimensional real inputs.

    ``predict`` maps an (m, d) batch to an (m,) output vector and must be a
    pure function: identical input implies identical output, and evaluation
    never mutates shared state. Models that cannot guarantee re-entrancy set
    ``reentrant=False``; estimators then evaluate sequentially.
    """

    predict: Callable[[np.ndarray], np.ndarray]
    arity: int
    output_index: int | None = None
    name: str = ""
    reentrant: bool = True

    def __call__(self, x) -> float:
        v = as_vector(x)
        self._check_arity(v.size)
        return float(self.predict(v[None, :])[0])

    def predict_batch(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("expected a 2-d batch of rows")
        self._check_arity(rows.shape[1])
        out = np.asarray(self.predict(rows), dtype=np.float64)
        if out.shape != (rows.shape[0],):
            raise ValueError(
                f"model '{self.name}' returned shape {out.shape}, "
                f"expected ({rows.shape[0]},)"
            )
        return out

    def _check_arity(self, d: int):
        if d != self.arity:
            raise ValueError(f"model '{self.name}' expects {self.arity} features, got {d}")

    @staticmethod
    def from_scalar_function(f: Callable[[np.ndarray], float], arity: int, name: str = "") -> "Model":
        """Wrap a scalar-input function; evaluation loops row by row."""

        def batched(rows: np.ndarray) -> np.ndarray:
            return np.array([float(f(r)) for r in rows], dtype=np.float64)

        return Model(predict=batched, arity=arity, name=name)


@dataclass(frozen=True)
class Dataset:
    """An n x d table of finite feature rows plus optional target and groups.

    ``norm_mean``/``norm_std`` record the affine normalization applied to the
    rows when the dataset was produced by a generator (identity when absent).
    """

    rows: np.ndarray
    feature_names: tuple[str, ...]
    target: np.ndarray | None = None
    group_labels: tuple[str, ...] | None = None
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("rows must be an n x d matrix")
        n, d = rows.shape
        if n < 2:
            raise ValueError("dataset needs at least 2 rows to estimate variances")
        if not np.all(np.isfinite(rows)):
            raise ValueError("dataset rows contain non-finite values")
        names = tuple(self.feature_names)
        if len(names) != d:
            raise ValueError("feature_names length does not match row width")
        if len(set(names)) != d:
            raise ValueError("feature_names must be unique")
        object.__setattr__(self, "rows", _readonly(rows))
        object.__setattr__(self, "feature_names", names)
        if self.target is not None:
            t = np.asarray(self.target, dtype=np.float64)
            if t.shape != (n,):
                raise ValueError("target length does not match row count")
            object.__setattr__(self, "target", _readonly(t))
        if self.group_labels is not None:
            g = tuple(str(s) for s in self.group_labels)
            if len(g) != n:
                raise ValueError("group_labels length does not match row count")
            object.__setattr__(self, "group_labels", g)
        for attr in ("norm_mean", "norm_std"):
            val = getattr(self, attr)
            if val is not None:
                val = np.asarray(val, dtype=np.float64)
                if val.shape != (d,):
                    raise ValueError(f"{attr} must have one entry per feature")
                object.__setattr__(self, attr, _readonly(val))

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class Coalition:
    """A subset of feature indices held fixed at the explained instance.

    Stored as a strictly increasing index tuple; ``mask`` gives the bitmask
    form used by the estimators whenever the arity allows it (d <= 64).
    """

    n_features: int
    members: tuple[int, ...]

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("coalition needs n_features >= 1")
        m = tuple(int(i) for i in self.members)
        if any(not 0 <= i < self.n_features for i in m):
            raise ValueError("coalition member out of range")
        if any(b <= a for a, b in zip(m, m[1:])):
            raise ValueError("coalition members must be strictly increasing")
        object.__setattr__(self, "members", m)

    @classmethod
    def empty(cls, n_features: int) -> "Coalition":
        return cls(n_features, ())

    @classmethod
    def full(cls, n_features: int) -> "Coalition":
        return cls(n_features, tuple(range(n_features)))

    @classmethod
    def from_mask(cls, mask: int, n_features: int) -> "Coalition":
        if n_features > MASK_FEATURE_LIMIT:
            raise ValueError(f"mask form only supports d <= {MASK_FEATURE_LIMIT}")
        if mask < 0 or mask >= (1 << n_features):
            raise ValueError("mask out of range for the given arity")
        members = tuple(i for i in range(n_features) if mask >> i & 1)
        return cls(n_features, members)

    @property
    def mask(self) -> int:
        if self.n_features > MASK_FEATURE_LIMIT:
            raise ValueError(f"mask form only supports d <= {MASK_FEATURE_LIMIT}")
        m = 0
        for i in self.members:
            m |= 1 << i
        return m

    @property
    def size(self) -> int:
        return len(self.members)

    def __contains__(self, feature: int) -> bool:
        return feature in set(self.members)

    def complement(self) -> tuple[int, ...]:
        inside = set(self.members)
        return tuple(i for i in range(self.n_features) if i not in inside)


@dataclass(frozen=True)
class Attribution:
    """A per-feature importance vector with the metadata needed to reproduce it.

    ``base_variance`` holds the empty-coalition variance for variance-game
    methods and the surrogate intercept for LIME/KernelSHAP.
    """

    phi: np.ndarray
    method: str
    params: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0
    base_variance: float = 0.0

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim != 1 or phi.size < 1:
            raise ValueError("phi must be a non-empty vector")
        if not np.all(np.isfinite(phi)):
            raise ValueError("phi contains non-finite values")
        object.__setattr__(self, "phi", _readonly(phi))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "base_variance", float(self.base_variance))

    @property
    def n_features(self) -> int:
        return int(self.phi.size)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def rng_stream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Return an independent, reproducible stream for (master_seed, stream_id).

    Counter-based derivation: the pair keys a Philox generator directly, so
    the same pair always yields the same sequence and distinct pairs yield
    statistically independent streams regardless of creation order. This is
    what makes estimates identical under any worker count.
    """
    key = np.array([master_seed & _U64, stream_id & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


_U64 = (1 << 64) - 1


def derive_stream_id(*parts: int | str) -> int:
    """Hash a tuple of labels/indices into a 64-bit stream id.

    Used to key sub-streams by structured coordinates (coalition mask,
    column, metric name, ...) without collisions between namespaces.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            b = p.encode("utf-8")
            tag = b"s"
        else:
            p = int(p)
            b = p.to_bytes((p.bit_length() + 8) // 8, "little", signed=True)
            tag = b"i"
        h.update(tag + struct.pack("<Q", len(b)) + b)
    return int.from_bytes(h.digest(), "little")


def train_test_split_indices(n_rows: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic contiguous split: first 80% train, rest test (file order)."""
    if n_rows < 2:
        raise ValueError("need at least 2 rows to split")
    cut = max(1, min(n_rows - 1, int(math.floor(n_rows * train_fraction))))
    idx = np.arange(n_rows)
    return idx[:cut], idx[cut:]


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": lambda h: np.maximum(h, 0.0),
    "identity": lambda h: h,
}


def load_model(path: str | os.PathLike) -> Model:
    """Load a model description (JSON) into an evaluator.

    Supported types: ``linear`` (w.x + b), ``mlp`` (alternating affine maps
    and activations, dropout ignored at inference), and ``gtm`` (a named
    built-in ground-truth model from :mod:`varshap.synth`).
    """
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"{path}: cannot parse model file: {exc}") from exc
    if not isinstance(doc, dict) or "type" not in doc:
        raise ModelLoadError(f"{path}: model file must be an object with a 'type' key")
    kind = doc["type"]
    if kind == "linear":
        return _load_linear(doc, path)
    if kind == "mlp":
        return _load_mlp(doc, path)
    if kind == "gtm":
        from . import synth

        name = doc.get("name")
        try:
            return synth.gtm(name)
        except ValueError as exc:
            raise ModelLoadError(f"{path}: {exc}") from exc
    raise ModelLoadError(f"{path}: unknown model type {kind!r}")


def _load_linear(doc: dict, path: str) -> Model:
    try:
        w = np.asarray(doc["w"], dtype=np.float64)
        b = float(doc.get("b", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"{path}: bad linear model: {exc}") from exc
    if w.ndim != 1 or w.size < 1:
        raise ModelLoadError(f"{path}: linear weight must be a non-empty vector")
    w.flags.writeable = False

    def predict(rows: np.ndarray) -> np.ndarray:
        return rows @ w + b

    return Model(predict=predict, arity=int(w.size), name=os.path.basename(path))


def _load_mlp(doc: dict, path: str) -> Model:
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelLoadError(f"{path}: mlp needs a non-empty 'layers' list")
    layers: list[tuple[np.ndarray, np.ndarray, Callable]] = []
    width = None
    for i, layer in enumerate(raw_layers):
        if not isinstance(layer, dict):
            raise ModelLoadError(f"{path}: layer {i}: expected an object")
        if "w" not in layer:
            if "dropout" in layer:  # inference ignores dropout-only layers
                continue
            raise ModelLoadError(f"{path}: layer {i}: missing weights")
        try:
            w = np.asarray(layer["w"], dtype=np.float64)
            b = np.asarray(layer.get("b", np.zeros(w.shape[0])), dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ModelLoadError(f"{path}: layer {i}: bad weights: {exc}") from exc
        if w.ndim != 2:
            raise ModelLoadError(f"{path}: layer {i}: weight must be a matrix (n_out x n_in)")
        if b.shape != (w.shape[0],):
            raise ModelLoadError(
                f"{path}: layer {i}: bias shape {b.shape} does not match {w.shape[0]} outputs"
            )
        if width is not None and w.shape[1] != width:
            raise ModelLoadError(
                f"{path}: layer {i}: expects {w.shape[1]} inputs but previous layer emits {width}"
            )
        act_name = layer.get("activation", "identity")
        if act_name not in _ACTIVATIONS:
            raise ModelLoadError(f"{path}: layer {i}: unknown activation {act_name!r}")
        w.flags.writeable = False
        b.flags.writeable = False
        layers.append((w, b, _ACTIVATIONS[act_name]))
        width = w.shape[0]
    if not layers:
        raise ModelLoadError(f"{path}: mlp has no affine layers")
    arity = layers[0][0].shape[1]
    out_width = layers[-1][0].shape[0]
    output_index = int(doc.get("output_index", 0))
    if not 0 <= output_index < out_width:
        raise ModelLoadError(
            f"{path}: output_index {output_index} out of range for {out_width} outputs"
        )

    def predict(rows: np.ndarray) -> np.ndarray:
        h = rows
        for w, b, act in layers:
            h = act(h @ w.T + b)
        return h[:, output_index]

    return Model(
        predict=predict, arity=arity, output_index=output_index, name=os.path.basename(path)
    )


# ---------------------------------------------------------------------------
# Dataset files (CSV, UTF-8, header row, '.' decimal separator)
# ---------------------------------------------------------------------------

GROUP_COLUMN = "group"


def load_dataset(path: str | os.PathLike, target_column: str | None = None) -> Dataset:
    """Load a CSV dataset; extract the target and a literal 'group' column."""
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetLoadError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        if any(not h for h in header):
            raise DatasetLoadError(f"{path}: header contains an empty column name")
        if target_column is not None and target_column not in header:
            raise DatasetLoadError(f"{path}: target column {target_column!r} not found")
        group_col = header.index(GROUP_COLUMN) if GROUP_COLUMN in header else None
        target_col = header.index(target_column) if target_column is not None else None
        feature_cols = [
            j for j in range(len(header)) if j not in (group_col, target_col)
        ]
        if not feature_cols:
            raise DatasetLoadError(f"{path}: no feature columns")
        rows: list[list[float]] = []
        target: list[float] = []
        groups: list[str] = []
        for r, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise DatasetLoadError(
                    f"{path}: row {r} has {len(record)} cells, expected {len(header)}"
                )
            parsed = []
            for j in feature_cols + ([target_col] if target_col is not None else []):
                cell = record[j]
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DatasetLoadError(
                        f"{path}: non-numeric cell at row {r} col {j + 1}"
                        f" (column {header[j]!r}): {cell!r}"
                    ) from None
            if target_col is not None:
                target.append(parsed.pop())
            rows.append(parsed)
            if group_col is not None:
                groups.append(record[group_col])
    if len(rows) < 2:
        raise DatasetLoadError(f"{path}: need at least 2 data rows, got {len(rows)}")
    return Dataset(
        rows=np.array(rows, dtype=np.float64),
        feature_names=tuple(header[j] for j in feature_cols),
        target=np.array(target) if target_col is not None else None,
        group_labels=tuple(groups) if group_col is not None else None,
        name=os.path.basename(path),
    )


def save_dataset(data: Dataset, path: str | os.PathLike, target_name: str = "Y") -> None:
    """Write a Dataset to CSV in the format :func:`load_dataset` reads."""
    header = list(data.feature_names)
    if data.target is not None:
        header.append(target_name)
    if data.group_labels is not None:
        header.append(GROUP_COLUMN)
    lines = [",".join(header)]
    for i in range(data.n_rows):
        cells = [repr(v) for v in data.rows[i]]
        if data.target is not None:
            cells.append(repr(float(data.target[i])))
        if data.group_labels is not None:
            cells.append(data.group_labels[i])
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Attribution files (JSON, keys lower_snake_case)
# ---------------------------------------------------------------------------

def save_attribution(att: Attribution, path: str | os.PathLike) -> None:
    doc = {
        "phi": [float(v) for v in att.phi],
        "method": att.method,
        "params": dict(att.params),
        "seed": att.seed,
        "base_variance": att.base_variance,
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_attribution(path: str | os.PathLike) -> Attribution:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return Attribution(
            phi=np.array(doc["phi"], dtype=np.float64),
            method=doc["method"],
            params=doc.get("params", {}),
            seed=int(doc.get("seed", 0)),
            base_variance=float(doc.get("base_variance", 0.0)),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: attribution file missing key {exc}") from exc


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write to a temp file in the target directory, then rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
