"""Shapley attribution of the local output-variance game.

The characteristic function assigns each coalition S the variance of the
model output when the features in S are pinned to the explained instance and
the rest are perturbed around it. A feature's attribution is the Shapley
value of that game: the kernel-weighted average, over all coalitions not
containing it, of how much fixing the feature shrinks the local output
variance.

Two estimators are provided: exact enumeration over all 2^d coalitions
(small d) and a constrained weighted-least-squares fit over a sampled subset
of coalitions (any d). Both read coalition variances from a
:class:`VarianceGame`, which caches each coalition's estimate so marginal
differences share values and the efficiency identity holds to rounding.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Attribution,
    Coalition,
    Model,
    as_vector,
    derive_stream_id,
    rng_stream,
)
from .perturb import PerturbationSpec, sample_perturbed

__all__ = [
    "VarianceGameConfig",
    "CoalitionSample",
    "VarianceGame",
    "shapley_kernel_weight",
    "regression_kernel_weight",
    "variance_given_coalition",
    "varshap_exact",
    "varshap_sampled",
    "verify_attribution_axioms",
    "solve_shapley_wls",
    "draw_coalition_masks",
    "AxiomCheck",
    "AxiomReport",
    "EXACT_FEATURE_LIMIT",
]

EXACT_FEATURE_LIMIT = 20  # 2^d coalition evaluations beyond this are refused

REDUCTION_POSITIVE = "reduction_positive"
EQ1_LITERAL = "eq1_literal"
_SIGN_CONVENTIONS = (REDUCTION_POSITIVE, EQ1_LITERAL)

# Rows per chunk when streaming large sample counts through the model.
_CHUNK_ROWS = 1 << 20


@dataclass(frozen=True)
class VarianceGameConfig:
    """Estimator knobs for coalition variances.

    ``paired_sampling`` reuses one base perturbation matrix for every
    coalition (common random numbers): fixed columns are overwritten per
    coalition, so a feature the model ignores contributes exactly zero. With
    it off, each coalition draws from its own stream keyed by the coalition,
    which keeps results independent of evaluation order and worker count.

    ``sign_convention`` selects the orientation of the attribution:
    ``reduction_positive`` (default) reports variance *reduction*, so
    important features get positive values summing to the empty-coalition
    variance; ``eq1_literal`` flips every sign.
    """

    samples_per_coalition: int = 2048
    paired_sampling: bool = True
    sign_convention: str = REDUCTION_POSITIVE

    def __post_init__(self):
        if self.samples_per_coalition < 2:
            raise ValueError("samples_per_coalition must be >= 2 (sample variance)")
        if self.sign_convention not in _SIGN_CONVENTIONS:
            raise ValueError(f"sign_convention must be one of {_SIGN_CONVENTIONS}")


@dataclass(frozen=True)
class CoalitionSample:
    """One regression row: a coalition, its estimated variance, its weight."""

    coalition: Coalition
    value: float
    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        if self.value < -1e-12:
            raise ValueError("coalition variance must be >= 0 up to rounding")


def shapley_kernel_weight(s: int, k: int) -> float:
    """Weight of one coalition of size s in a k-feature marginal sum.

    omega(s) = s! (k - s - 1)! / k!; exact rationals for small k,
    log-factorials beyond to avoid huge integers.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= s <= k - 1:
        raise ValueError(f"coalition size {s} out of range for k={k}")
    if k <= 20:
        return math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k)
    return math.exp(math.lgamma(s + 1) + math.lgamma(k - s) - math.lgamma(k + 1))


def regression_kernel_weight(s: int, k: int) -> float:
    """Row weight making the constrained WLS fit recover exact Shapley values.

    pi(s) = (k - 1) / (C(k, s) * s * (k - s)) for 0 < s < k. The empty and
    full coalitions are handled as hard constraints, not weighted rows.
    """
    if not 0 < s < k:
        raise ValueError("regression weight defined for interior sizes only")
    if k <= 30:
        return (k - 1) / (math.comb(k, s) * s * (k - s))
    log_comb = math.lgamma(k + 1) - math.lgamma(s + 1) - math.lgamma(k - s + 1)
    return math.exp(math.log(k - 1) - log_comb - math.log(s) - math.log(k - s))


# ---------------------------------------------------------------------------
# Coalition variance estimation
# ---------------------------------------------------------------------------

def _moments_from_power_sums(n: int, s1: float, s2: float, s3: float, s4: float):
    """(variance, stderr) from power sums of outputs shifted by their first value.

    The shift makes the sums well conditioned and yields an exact 0.0 for
    constant outputs. The standard error of the sample variance uses the
    distribution-free asymptotic Var(s^2) = (m4 - s^4 (n-3)/(n-1)) / n.
    """
    mean = s1 / n
    m2 = max(s2 - n * mean * mean, 0.0)
    var = m2 / (n - 1)
    m4 = max(s4 - 4 * mean * s3 + 6 * mean**2 * s2 - 3 * n * mean**4, 0.0) / n
    se2 = (m4 - var * var * (n - 3) / (n - 1)) / n
    return var, math.sqrt(max(se2, 0.0))


def _accumulate_outputs(y: np.ndarray, shift: float, sums: list[float]) -> None:
    z = y - shift
    sums[0] += float(np.sum(z))
    z2 = z * z
    sums[1] += float(np.sum(z2))
    sums[2] += float(np.sum(z2 * z))
    sums[3] += float(np.sum(z2 * z2))


def _check_outputs(y: np.ndarray, mask: int) -> None:
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise ValueError(
            f"model produced a non-finite output at sample row {bad} "
            f"(coalition mask {mask:#x})"
        )


class VarianceGame:
    """Cached per-coalition variance estimates for one explained instance.

    ``value(mask)`` returns the estimated output variance with the masked
    features fixed; each distinct coalition is estimated once and shared by
    every marginal difference that touches it. ``stderr(mask)`` reports the
    Monte-Carlo standard error of that estimate. Estimation is deterministic
    in (master_seed, coalition) and therefore in any evaluation order.
    """

    def __init__(
        self,
        model: Model,
        x,
        spec: PerturbationSpec,
        cfg: VarianceGameConfig | None = None,
        master_seed: int = 0,
        workers: int = 1,
    ):
        self.model = model
        self.x = as_vector(x)
        self.spec = spec
        self.cfg = cfg or VarianceGameConfig()
        self.master_seed = int(master_seed)
        self.workers = max(1, int(workers)) if model.reentrant else 1
        d = self.x.size
        if model.arity != d or spec.n_features != d:
            raise ValueError(
                f"dimension mismatch: instance d={d}, model arity={model.arity}, "
                f"spec d={spec.n_features}"
            )
        self.d = d
        self.full_mask = (1 << d) - 1
        self._cache: dict[int, tuple[float, float]] = {self.full_mask: (0.0, 0.0)}
        self._base: np.ndarray | None = None
        if self.cfg.paired_sampling:
            stream = rng_stream(self.master_seed, derive_stream_id("varshap-paired-base"))
            self._base = sample_perturbed(
                self.x, Coalition.empty(d), spec, self.cfg.samples_per_coalition, stream
            )

    def value(self, mask: int) -> float:
        return float(self.values([mask])[0])

    def stderr(self, mask: int) -> float:
        self.values([mask])
        return self._cache[mask][1]

    def values(self, masks: Iterable[int]) -> np.ndarray:
        masks = [int(m) for m in masks]
        missing = sorted({m for m in masks if m not in self._cache})
        if missing:
            if self.workers > 1 and len(missing) > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    results = list(pool.map(self._estimate, missing))
            else:
                results = [self._estimate(m) for m in missing]
            self._cache.update(zip(missing, results))
        return np.array([self._cache[m][0] for m in masks])

    def stderrs(self, masks: Iterable[int]) -> np.ndarray:
        masks = [int(m) for m in masks]
        self.values(masks)
        return np.array([self._cache[m][1] for m in masks])

    def cached_masks(self) -> list[int]:
        return sorted(self._cache)

    def _estimate(self, mask: int) -> tuple[float, float]:
        if not 0 <= mask <= self.full_mask:
            raise ValueError(f"coalition mask {mask:#x} out of range for d={self.d}")
        if mask == self.full_mask:
            return 0.0, 0.0
        m = self.cfg.samples_per_coalition
        fixed = [i for i in range(self.d) if mask >> i & 1]
        sums = [0.0, 0.0, 0.0, 0.0]
        shift = None
        for rows in self._sample_chunks(mask, fixed, m):
            y = self.model.predict_batch(rows)
            _check_outputs(y, mask)
            if shift is None:
                shift = float(y[0])
            _accumulate_outputs(y, shift, sums)
        return _moments_from_power_sums(m, *sums)

    def _sample_chunks(self, mask: int, fixed: list[int], m: int):
        if self._base is not None:
            for lo in range(0, m, _CHUNK_ROWS):
                rows = self._base[lo : lo + _CHUNK_ROWS].copy()
                rows[:, fixed] = self.x[fixed]
                yield rows
        else:
            stream = rng_stream(self.master_seed, derive_stream_id("varshap-coalition", mask))
            free = [i for i in range(self.d) if not mask >> i & 1]
            stds = self.spec.perturb_std[free]
            for lo in range(0, m, _CHUNK_ROWS):
                count = min(_CHUNK_ROWS, m - lo)
                rows = np.tile(self.x, (count, 1))
                rows[:, free] += stream.standard_normal((count, len(free))) * stds
                yield rows


def variance_given_coalition(
    model: Model,
    x,
    coalition: Coalition,
    spec: PerturbationSpec,
    cfg: VarianceGameConfig,
    stream: np.random.Generator,
) -> float:
    """Unbiased sample variance of model outputs with the coalition fixed.

    Returns exactly 0.0 for the full coalition without sampling. A model
    failure is re-raised naming the first offending sample row.
    """
    x = as_vector(x)
    if coalition.size == x.size:
        return 0.0
    rows = sample_perturbed(x, coalition, spec, cfg.samples_per_coalition, stream)
    try:
        y = model.predict_batch(rows)
    except Exception as exc:
        for i, row in enumerate(rows):
            try:
                model.predict_batch(row[None, :])
            except Exception:
                raise ValueError(f"model evaluation failed at sample row {i}: {exc}") from exc
        raise
    _check_outputs(y, coalition.mask if coalition.n_features <= 64 else -1)
    return float(np.var(y - y[0], ddof=1))


# ---------------------------------------------------------------------------
# Exact estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarshapDiagnostics:
    """Per-coalition variance table and propagated attribution uncertainty."""

    var_by_mask: np.ndarray
    se_by_mask: np.ndarray
    phi_stderr: np.ndarray


def varshap_exact(
    model: Model,
    x,
    spec: PerturbationSpec,
    cfg: VarianceGameConfig | None = None,
    master_seed: int = 0,
    workers: int = 1,
    game: VarianceGame | None = None,
    return_diagnostics: bool = False,
):
    """Attribution by full coalition enumeration (d <= 20).

    phi_j = sum over S not containing j of omega(|S|) * (Var(S) - Var(S+j))
    under the default positive orientation. Each coalition's variance is
    estimated once and shared across all marginal differences, so the
    attributions sum to the empty-coalition variance up to rounding.
    """
    cfg = cfg or VarianceGameConfig()
    if game is None:
        game = VarianceGame(model, x, spec, cfg, master_seed, workers)
    d = game.d
    if d > EXACT_FEATURE_LIMIT:
        raise ValueError(
            f"exact enumeration needs 2^{d} coalition evaluations; "
            f"use varshap_sampled for d > {EXACT_FEATURE_LIMIT}"
        )
    n_coalitions = 1 << d
    all_masks = np.arange(n_coalitions, dtype=np.uint64)
    var = game.values(range(n_coalitions))
    se = game.stderrs(range(n_coalitions))
    sizes = np.bitwise_count(all_masks).astype(np.int64)
    wtab = np.array([shapley_kernel_weight(s, d) for s in range(d)])
    phi = np.empty(d)
    phi_var = np.empty(d)
    masks_int = all_masks.astype(np.int64)
    for j in range(d):
        bit = 1 << j
        without = masks_int[(masks_int & bit) == 0]
        w = wtab[sizes[without]]
        phi[j] = np.sum(w * (var[without] - var[without | bit]))
        phi_var[j] = np.sum(w * w * (se[without] ** 2 + se[without | bit] ** 2))
    if game.cfg.sign_convention == EQ1_LITERAL:
        phi = -phi
    att = Attribution(
        phi=phi,
        method="varshap",
        params={
            "estimator": "exact",
            "sigma": game.spec.sigma,
            "samples_per_coalition": game.cfg.samples_per_coalition,
            "n_coalitions": n_coalitions,
            "paired_sampling": game.cfg.paired_sampling,
            "sign_convention": game.cfg.sign_convention,
        },
        seed=game.master_seed,
        base_variance=float(var[0]),
    )
    if return_diagnostics:
        return att, VarshapDiagnostics(var, se, np.sqrt(phi_var))
    return att


# ---------------------------------------------------------------------------
# Sampled estimator: constrained weighted least squares on coalition rows
# ---------------------------------------------------------------------------

def draw_coalition_masks(
    d: int, n_interior: int, stream: np.random.Generator
) -> tuple[list[int], np.ndarray]:
    """Pick interior coalition masks (0 < |S| < d) for the regression.

    Sizes get a budget proportional to the kernel mass of their level,
    pi(s) * C(d, s); a fully budgeted level is enumerated outright, a
    partially budgeted one is sampled without replacement and its rows are
    up-weighted by C(d, s) / n_s so the weighted objective stays an unbiased
    estimate of the full-design objective. With enough budget every level is
    complete and the fit is exact.
    """
    if d < 2:
        return [], np.empty(0)
    sizes = list(range(1, d))
    caps = {s: math.comb(d, s) for s in sizes}
    level_mass = {s: 1.0 / (s * (d - s)) for s in sizes}
    total_mass = sum(level_mass.values())
    budget = min(n_interior, sum(caps.values()))
    quota = {s: budget * level_mass[s] / total_mass for s in sizes}
    alloc = {s: min(int(quota[s]), caps[s]) for s in sizes}
    # Largest-remainder rounding, capped by each level's coalition count.
    while sum(alloc.values()) < budget:
        open_sizes = [s for s in sizes if alloc[s] < caps[s]]
        open_sizes.sort(key=lambda s: (-(quota[s] - alloc[s]), s))
        for s in open_sizes[: budget - sum(alloc.values())]:
            alloc[s] += 1
    masks: list[int] = []
    weights: list[float] = []
    for s in sizes:
        n_s = alloc[s]
        if n_s == 0:
            continue
        pi = regression_kernel_weight(s, d)
        if n_s == caps[s]:
            level = [_indices_to_mask(c) for c in itertools.combinations(range(d), s)]
        else:
            level = _sample_distinct_subsets(d, s, n_s, caps[s], stream)
        masks.extend(level)
        weights.extend([pi * caps[s] / len(level)] * len(level))
    return masks, np.array(weights)


def _indices_to_mask(indices: Iterable[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


def _sample_distinct_subsets(
    d: int, s: int, n_s: int, cap: int, stream: np.random.Generator
) -> list[int]:
    if cap <= 1 << 14:
        level = [_indices_to_mask(c) for c in itertools.combinations(range(d), s)]
        picked = stream.choice(cap, size=n_s, replace=False)
        return [level[i] for i in picked]
    seen: set[int] = set()
    out: list[int] = []
    attempts = 0
    while len(out) < n_s and attempts < 200 * n_s + 1000:
        attempts += 1
        mask = _indices_to_mask(stream.permutation(d)[:s])
        if mask not in seen:
            seen.add(mask)
            out.append(mask)
    return out


def solve_shapley_wls(
    masks: Sequence[int],
    values: np.ndarray,
    weights: np.ndarray,
    v_empty: float,
    v_full: float,
    d: int,
) -> np.ndarray:
    """Shapley values of a game from weighted interior coalition rows.

    Fits v(S) ~ phi0 + sum_{i in S} phi_i with the two exact constraints
    phi0 = v(empty) and phi0 + sum phi = v(full), eliminating the last
    coefficient through the efficiency constraint before the weighted
    least-squares solve.
    """
    if d == 1:
        return np.array([v_full - v_empty])
    distinct = len(set(int(m) for m in masks))
    if distinct < d - 1:
        raise ValueError(
            f"singular design: {distinct + 2} distinct coalitions (with empty/full) "
            f"for {d} features; need at least {d + 1}"
        )
    z = np.zeros((len(masks), d))
    for r, mask in enumerate(masks):
        for i in range(d):
            if mask >> i & 1:
                z[r, i] = 1.0
    y = np.asarray(values, dtype=np.float64) - v_empty - z[:, -1] * (v_full - v_empty)
    design = z[:, :-1] - z[:, -1:]
    sw = np.sqrt(np.asarray(weights, dtype=np.float64))
    sol, _, rank, _ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    if rank < d - 1:
        raise ValueError(
            f"singular design: rank {rank} < {d - 1}; the sampled coalitions do "
            "not identify every feature"
        )
    phi = np.empty(d)
    phi[:-1] = sol
    phi[-1] = (v_full - v_empty) - sol.sum()
    return phi


def varshap_sampled(
    model: Model,
    x,
    spec: PerturbationSpec,
    cfg: VarianceGameConfig | None = None,
    n_coalitions: int = 0,
    master_seed: int = 0,
    workers: int = 1,
    game: VarianceGame | None = None,
) -> Attribution:
    """Attribution by weighted local linear regression on sampled coalitions.

    The empty and full coalitions are always evaluated and enter as exact
    constraints; the remaining budget is spread over coalition sizes by
    kernel mass. With n_coalitions >= 2^d the design is complete and the
    result coincides with :func:`varshap_exact` on shared variance values.
    """
    cfg = cfg or VarianceGameConfig()
    if game is None:
        game = VarianceGame(model, x, spec, cfg, master_seed, workers)
    d = game.d
    if n_coalitions < d + 2:
        raise ValueError(f"need n_coalitions >= d + 2 = {d + 2}, got {n_coalitions}")
    sampler = rng_stream(game.master_seed, derive_stream_id("varshap-coalition-sampler"))
    masks, weights = draw_coalition_masks(d, n_coalitions - 2, sampler)
    v_empty = game.value(0)
    v_full = game.value(game.full_mask)
    values = game.values(masks)
    phi = solve_shapley_wls(masks, values, weights, v_empty, v_full, d)
    if game.cfg.sign_convention == REDUCTION_POSITIVE:
        phi = -phi
    return Attribution(
        phi=phi,
        method="varshap",
        params={
            "estimator": "sampled",
            "sigma": game.spec.sigma,
            "samples_per_coalition": game.cfg.samples_per_coalition,
            "n_coalitions": len(masks) + 2,
            "paired_sampling": game.cfg.paired_sampling,
            "sign_convention": game.cfg.sign_convention,
        },
        seed=game.master_seed,
        base_variance=float(v_empty),
    )


# ---------------------------------------------------------------------------
# Axiom self-checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AxiomCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class AxiomReport:
    checks: tuple[AxiomCheck, ...]

    @property
    def failures(self) -> tuple[AxiomCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)

    @property
    def all_passed(self) -> bool:
        return not self.failures


def _random_relu_net(d: int, stream: np.random.Generator, hidden: int = 8) -> Model:
    w1 = stream.standard_normal((hidden, d))
    b1 = stream.standard_normal(hidden)
    w2 = stream.standard_normal(hidden)

    def predict(rows: np.ndarray) -> np.ndarray:
        return np.maximum(rows @ w1.T + b1, 0.0) @ w2

    return Model(predict=predict, arity=d, name="random-relu")


def verify_attribution_axioms(
    master_seed: int = 0,
    n_features: int = 3,
    bit_tolerance: float = 1e-9,
) -> AxiomReport:
    """Run the estimator's structural self-checks and report failures.

    Checks: (a) a constant model gets an all-zero attribution, exactly;
    (b) negating the model leaves the attribution unchanged under a shared
    seed; (c) sample variances of independent streams add; (d) the
    square function satisfies its defining functional equation
    (d(s+t) + d(s-t)) / 2 = d(s) + d(t) exactly on a dyadic grid.
    """
    d = n_features
    checks: list[AxiomCheck] = []
    spec = PerturbationSpec(feature_std=np.ones(d), sigma=1.0)
    cfg = VarianceGameConfig(samples_per_coalition=256)
    x = np.zeros(d)

    const = Model(predict=lambda rows: np.full(rows.shape[0], 5.0), arity=d, name="const")
    phi = varshap_exact(const, x, spec, cfg, master_seed).phi
    checks.append(
        AxiomCheck(
            "zero_property",
            bool(np.all(phi == 0.0)),
            f"constant model attribution {phi.tolist()}",
        )
    )

    net = _random_relu_net(d, rng_stream(master_seed, derive_stream_id("axiom-model")))
    negated = Model(predict=lambda rows: -net.predict(rows), arity=d, name="negated")
    phi_pos = varshap_exact(net, x, spec, cfg, master_seed).phi
    phi_neg = varshap_exact(negated, x, spec, cfg, master_seed).phi
    gap = float(np.max(np.abs(phi_pos - phi_neg)))
    checks.append(
        AxiomCheck("sign_independence", gap <= bit_tolerance, f"max deviation {gap:.3e}")
    )

    n = 200_000
    a = rng_stream(master_seed, derive_stream_id("axiom-a")).standard_normal(n) * 1.5
    b = rng_stream(master_seed, derive_stream_id("axiom-b")).standard_normal(n) * 0.7
    lhs = float(np.var(a + b, ddof=1))
    rhs = float(np.var(a, ddof=1) + np.var(b, ddof=1))
    # 4x the asymptotic standard error of the pooled variance estimate
    tol = 4.0 * math.sqrt(2.0 / (n - 1)) * (1.5**2 + 0.7**2)
    checks.append(
        AxiomCheck(
            "estimator_additivity",
            abs(lhs - rhs) <= tol,
            f"|Var(A+B) - Var(A) - Var(B)| = {abs(lhs - rhs):.3e}, tolerance {tol:.3e}",
        )
    )

    grid = [k / 2 for k in range(-8, 9)]
    exact = all(
        ((s + t) ** 2 + (s - t) ** 2) / 2 == s**2 + t**2 for s in grid for t in grid
    )
    checks.append(
        AxiomCheck("square_functional_equation", exact, "checked on the half-integer grid")
    )
    return AxiomReport(tuple(checks))
