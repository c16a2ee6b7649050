"""Holdout metrics, design comparisons, and analytic error predictions.

Covers per-split goodness-of-fit, non-collinear-vs-collinear win rates
with Wilson intervals, constant-compute (isoFLOP) curve emission, the
closed-form expected-error decomposition for single-ray training, and
the budget-matched subset sweep that pits every collinear ray subset
against a bounding-box non-collinear design of identical size.

Paired fits inside a sweep are independent of one another and merged by
subset key, so results do not depend on evaluation order; the whole
sweep is deterministic given its seed list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import (
    eigendecompose_small,
    gram_matrix,
    power_sum_profile,
    sloppy_leverage,
)
from .dataset import ExperimentDataset, NoiseModel, Observation, Split, generate_collinear, generate_grid
from .errors import (
    DomainError,
    EmptySplitError,
    PoolTooLargeError,
    UnsupportedDesignError,
)
from .fitter import FitConfig, FitResult, fit
from . import laws
from .laws import LawKind, LawParams
from .planner import Regime, bounding_box_nc, classify_regime

_Z95 = 1.96


@dataclass(frozen=True)
class HoldoutMetrics:
    """Goodness of fit on one split; r2 is None on zero-variance splits."""

    r2: float | None
    rmse: float
    split: str
    count: int


def _select(ds: ExperimentDataset, selector) -> tuple[tuple[Observation, ...], str]:
    if selector is None:
        return ds.observations, "all"
    if isinstance(selector, Split):
        return ds.subset(selector), selector.value
    if selector == "holdout":
        obs = tuple(
            o
            for o in ds.observations
            if o.split in (Split.HOLDOUT_COLLINEAR, Split.HOLDOUT_NONCOLLINEAR)
        )
        return obs, "holdout"
    raise DomainError(f"unknown split selector {selector!r}")


def holdout_metrics(fit_result: FitResult, ds: ExperimentDataset, selector) -> HoldoutMetrics:
    """RMSE and split-local R^2 of a fit's predictions on one split.

    ``selector`` is a Split, the string "holdout" for the union of both
    holdout classes, or None for every observation.
    """
    obs, label = _select(ds, selector)
    if not obs:
        raise EmptySplitError(f"split {label!r} has no observations")
    n = np.array([o.n for o in obs])
    d = np.array([o.d for o in obs])
    y = np.array([o.loss for o in obs])
    pred = fit_result.predict(n, d)
    mse = float(np.mean((pred - y) ** 2))
    var = float(np.mean((y - np.mean(y)) ** 2))
    r2 = None if var == 0.0 else 1.0 - mse / var
    return HoldoutMetrics(r2=r2, rmse=math.sqrt(mse), split=label, count=len(obs))


@dataclass(frozen=True)
class ComparisonRecord:
    """One paired holdout comparison; ties count as collinear wins."""

    rmse_co: float
    rmse_nc: float

    @property
    def nc_wins(self) -> bool:
        return self.rmse_nc < self.rmse_co


@dataclass(frozen=True)
class WinRate:
    fraction: float
    wins: int
    total: int
    wilson_low: float
    wilson_high: float


def wilson_interval(wins: int, total: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise DomainError("total must be positive")
    if not 0 <= wins <= total:
        raise DomainError("wins must lie in [0, total]")
    p = wins / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    spread = z * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total)) / denom
    return max(0.0, center - spread), min(1.0, center + spread)


def win_rate(records) -> WinRate:
    """Fraction of paired comparisons the non-collinear design wins."""
    records = list(records)
    if not records:
        raise DomainError("at least one comparison record is required")
    wins = sum(1 for r in records if r.nc_wins)
    low, high = wilson_interval(wins, len(records))
    return WinRate(wins / len(records), wins, len(records), low, high)


@dataclass(frozen=True)
class IsoFlopCurve:
    """Predicted loss along one constant-compute contour.

    The contour passes through its anchor observation at compute
    ``6 * n * d``; evaluating at the anchor's model size uses the
    anchor's token count directly (the algebraic cancellation of
    compute / (6 n) is applied exactly there), so the curve reproduces
    the plain prediction at the anchor bit for bit.
    """

    compute: float
    anchor: Observation
    ns: np.ndarray
    losses: np.ndarray
    _fit: FitResult

    def loss_at(self, n: float) -> float:
        if n == self.anchor.n:
            d = self.anchor.d
        else:
            d = self.compute / (6.0 * n)
        return float(self._fit.predict(n, d))


def isoflop_curves(
    fit_result: FitResult, holdout: ExperimentDataset, samples_per_curve: int = 33
) -> list[IsoFlopCurve]:
    """One constant-compute curve per holdout observation.

    Model sizes are sampled log-uniformly between the smallest and
    largest holdout sizes, with each curve's anchor size included.
    """
    obs = holdout.observations
    if not obs:
        raise EmptySplitError("holdout must be nonempty")
    if samples_per_curve < 1:
        raise DomainError("samples_per_curve must be positive")
    n_lo = min(o.n for o in obs)
    n_hi = max(o.n for o in obs)
    if n_lo == n_hi:
        base = np.array([n_lo])
    else:
        base = np.exp(np.linspace(math.log(n_lo), math.log(n_hi), samples_per_curve))
    curves = []
    for o in obs:
        compute = 6.0 * o.n * o.d
        ns = np.unique(np.append(base, o.n))
        losses = np.array([
            fit_result.predict(x, o.d if x == o.n else compute / (6.0 * x))
            for x in ns
        ])
        curves.append(IsoFlopCurve(compute, o, ns, losses, fit_result))
    return curves


def curve_anchored_rmse(curves) -> float:
    """Holdout RMSE computed by evaluating each curve at its anchor."""
    curves = list(curves)
    if not curves:
        raise EmptySplitError("no curves supplied")
    errs = [c.loss_at(c.anchor.n) - c.anchor.loss for c in curves]
    return math.sqrt(sum(e * e for e in errs) / len(errs))


@dataclass(frozen=True)
class MseDecomposition:
    """Expected squared prediction error of a single-ray fit on a holdout.

    ``sloppy_term`` is the closed-form contribution of the barely
    constrained scale-coefficient direction (noise variance divided by
    the squared exponent gap, weighted by leverage and the inverse log-
    size variance); ``stiff_term`` sums the remaining spectral modes of
    the expected Gram matrix at the true parameters.
    """

    sloppy_term: float
    stiff_term: float

    @property
    def total(self) -> float:
        return self.sloppy_term + self.stiff_term


def analytic_mse_prediction(
    train: ExperimentDataset,
    holdout: ExperimentDataset,
    truth: LawParams,
    sigma: float,
) -> MseDecomposition:
    """Closed-form expected holdout MSE for a single-ray training design."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    if len(train.distinct_ratios) != 1:
        raise UnsupportedDesignError(
            "the analytic decomposition is defined for single-ray training designs"
        )
    if not holdout.observations:
        raise EmptySplitError("holdout must be nonempty")
    k = train.distinct_ratios[0]
    eps = laws.exponent_gap(truth).magnitude
    if eps == 0:
        raise DomainError("truth must have a nonzero exponent gap")
    alpha = laws.model_side_exponent(truth)
    beta_eff = laws.data_side_exponent(truth)

    tn, td, _ = train.arrays(Split.TRAIN)
    prof = power_sum_profile(tn, alpha)
    lev = sloppy_leverage(holdout, k, alpha, beta_eff, prof.phi2)
    sloppy = sigma * sigma * lev / (eps * eps * prof.logn_variance)

    # Stiff modes live in the scale-coefficient block, where the spectrum
    # has exactly one near-null direction; other columns (offset and
    # exponents) would contribute extra near-null modes that the bounded
    # nonlinear fit does not actually explore, and the decomposition is
    # the leading-order prediction for the pair estimator.
    block = list(laws.SCALE_BLOCK[truth.kind])
    J = laws.jacobian(truth, tn, td)[:, block]
    values, vectors = eigendecompose_small(gram_matrix(J))
    hn = np.array([o.n for o in holdout.observations])
    hd = np.array([o.d for o in holdout.observations])
    Jh = laws.jacobian(truth, hn, hd)[:, block]
    proj = Jh @ vectors  # (m_holdout, len(block)) projections onto eigenvectors
    stiff_per_point = np.sum(proj[:, 1:] ** 2 / values[1:], axis=1)
    stiff = sigma * sigma * float(np.mean(stiff_per_point))
    return MseDecomposition(sloppy_term=float(sloppy), stiff_term=stiff)


def misspecification_ratio(co_mse: float, nc_mse: float, bias_squared: float) -> float:
    """Expected-MSE ratio once a shared squared bias floor is added.

    Grows toward the variance-limited ratio when the bias is negligible
    and decays monotonically to one as the bias floor dominates.
    """
    if co_mse <= 0 or nc_mse <= 0:
        raise DomainError("mse terms must be positive")
    if bias_squared < 0:
        raise DomainError("bias_squared must be nonnegative")
    return (bias_squared + co_mse) / (bias_squared + nc_mse)


@dataclass(frozen=True)
class SweepRecord:
    """One budget-matched subset comparison within a sweep."""

    seed: int
    subset_mask: int
    ratios: tuple[float, ...]
    n_train: int
    comparison: ComparisonRecord
    regimes: dict[float, Regime]


def _box_seed(seed: int, mask: int) -> int:
    return (seed * 0x9E3779B1 + mask) % (2**32)


def regime_a_sweep(
    truth: LawParams,
    ratio_pool,
    holdout: ExperimentDataset,
    kappa_targets,
    seeds,
    config: FitConfig,
    *,
    sizes,
    token_counts,
    sigma: float,
    kind: LawKind | None = None,
    beta_eff: float = 0.28,
    max_subsets: int | None = None,
) -> list[SweepRecord]:
    """Enumerate ray subsets and fit each against a budget-matched box.

    For every seed and every nonempty subset of ``ratio_pool``, the
    collinear training set keeps the pool's runs on the selected rays
    while a bounding-box design of exactly the same cardinality is drawn
    from the (sizes x token_counts) grid; both are fit and scored on the
    shared holdout.  Each record carries an a-priori regime tag per
    requested condition-number target, classified from the literature
    data-side exponent.  ``max_subsets`` deterministically downsamples
    the subset enumeration for desk-scale runs.
    """
    pool = [float(k) for k in ratio_pool]
    if len(pool) > 12:
        raise PoolTooLargeError("ratio pool is capped at 12 (4095 subsets)")
    if not pool:
        raise DomainError("ratio pool must be nonempty")
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    kind = kind or truth.kind
    sizes = np.asarray(sizes, dtype=float)
    token_counts = np.asarray(token_counts, dtype=float)
    kappa_targets = [float(k) for k in kappa_targets]

    masks = list(range(1, 2 ** len(pool)))
    if max_subsets is not None and max_subsets < len(masks):
        rng = np.random.default_rng([20_211_144, len(masks), max_subsets])
        masks = sorted(rng.choice(masks, size=max_subsets, replace=False).tolist())

    m_d = token_counts.size
    records: list[SweepRecord] = []
    for seed in seeds:
        co_pool = generate_collinear(truth, sizes, pool, NoiseModel(sigma, seed))
        nc_pool = generate_grid(truth, sizes, token_counts, NoiseModel(sigma, seed))
        for mask in masks:
            chosen = [pool[b] for b in range(len(pool)) if mask >> b & 1]
            co_obs = tuple(o for o in co_pool.observations if o.ray in chosen)
            n_star = len(co_obs)
            cells = bounding_box_nc(
                sizes, token_counts, n_star, chosen, _box_seed(seed, mask)
            )
            nc_obs = tuple(nc_pool.observations[i * m_d + j] for (i, j) in cells)
            co_fit = fit(ExperimentDataset(co_obs), kind, config)
            nc_fit = fit(ExperimentDataset(nc_obs), kind, config)
            rmse_co = holdout_metrics(co_fit, holdout, None).rmse
            rmse_nc = holdout_metrics(nc_fit, holdout, None).rmse
            records.append(
                SweepRecord(
                    seed=int(seed),
                    subset_mask=mask,
                    ratios=tuple(chosen),
                    n_train=n_star,
                    comparison=ComparisonRecord(rmse_co, rmse_nc),
                    regimes={
                        kt: classify_regime(chosen, beta_eff, kt)
                        for kt in kappa_targets
                    },
                )
            )
    return records


def regime_a_win_rate(records, kappa_target: float) -> WinRate:
    """Win rate over the records classified Regime A at one target."""
    tagged = [
        r.comparison for r in records if r.regimes[float(kappa_target)] is Regime.A
    ]
    if not tagged:
        raise EmptySplitError("no records fall in Regime A at this target")
    return win_rate(tagged)
