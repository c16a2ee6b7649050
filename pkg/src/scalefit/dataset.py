"""Observation data model and synthetic experiment generation.

Datasets are immutable once constructed and generation is a pure
function of (truth, grid, seed), so values may be shared freely across
threads.  Noise draws are keyed by (seed, stream, row-index,
column-index): appending sizes, ratios, or token counts to a grid never
perturbs the observations that were already there.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyTrainError, InvalidGridError
from .laws import LawParams, evaluate

_RAY_REL_TOL = 1e-9

# Noise-stream tags keep collinear and grid draws independent even when
# they share a NoiseModel seed.
_STREAM_COLLINEAR = 0
_STREAM_GRID = 1


class Split(enum.Enum):
    """Which evaluation split an observation belongs to."""

    TRAIN = "train"
    HOLDOUT_COLLINEAR = "holdout_co"
    HOLDOUT_NONCOLLINEAR = "holdout_nc"


@dataclass(frozen=True)
class Observation:
    """One (model size, token count, loss) training-run record.

    ``ray`` optionally tags the tokens-per-parameter ratio the run was
    generated at; when present it must agree with d/n to one part in 1e9.
    """

    n: float
    d: float
    loss: float
    split: Split = Split.TRAIN
    ray: float | None = None

    def __post_init__(self):
        for name, v in ("n", self.n), ("d", self.d), ("loss", self.loss):
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"observation {name} must be positive, got {v!r}")
        if self.ray is not None:
            if not (np.isfinite(self.ray) and self.ray > 0):
                raise DomainError(f"ray tag must be positive, got {self.ray!r}")
            if abs(self.d / self.n - self.ray) / self.ray >= _RAY_REL_TOL:
                raise DomainError(
                    f"ray tag {self.ray!r} disagrees with d/n = {self.d / self.n!r}"
                )

    @property
    def ratio(self) -> float:
        """Tokens-per-parameter ratio; the tag when present, else d/n."""
        return self.ray if self.ray is not None else self.d / self.n


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian residual model: i.i.d. noise of standard deviation sigma."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise DomainError("sigma must be nonnegative")
        if self.seed < 0:
            raise DomainError("seed must be nonnegative")


def _cluster(values: np.ndarray, rel_tol: float = _RAY_REL_TOL) -> tuple[float, ...]:
    """Sorted representatives of values grouped at relative tolerance."""
    if values.size == 0:
        return ()
    out: list[float] = []
    for v in np.sort(values):
        if not out or v > out[-1] * (1.0 + rel_tol):
            out.append(float(v))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentDataset:
    """An immutable collection of observations plus derived design facts.

    ``distinct_sizes`` covers every observation; ``distinct_ratios``
    summarizes the training split's tokens-per-parameter rays (grouped
    at 1e-9 relative tolerance, so an exact-ray design reports its K
    generating ratios while a general-position grid reports one ratio
    per cell).
    """

    observations: tuple[Observation, ...]
    distinct_sizes: tuple[float, ...] = field(init=False)
    distinct_ratios: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        sizes = np.array([o.n for o in obs], dtype=float)
        train_rays = np.array(
            [o.ratio for o in obs if o.split is Split.TRAIN], dtype=float
        )
        object.__setattr__(self, "distinct_sizes", _cluster(sizes))
        object.__setattr__(self, "distinct_ratios", _cluster(train_rays))

    def __len__(self) -> int:
        return len(self.observations)

    def subset(self, split: Split) -> tuple[Observation, ...]:
        return tuple(o for o in self.observations if o.split is split)

    @property
    def train(self) -> tuple[Observation, ...]:
        return self.subset(Split.TRAIN)

    @property
    def is_single_ray(self) -> bool:
        return len(self.distinct_ratios) == 1

    def arrays(self, split: Split | None = Split.TRAIN):
        """(n, d, loss) arrays for one split, or for all observations."""
        obs = self.observations if split is None else self.subset(split)
        n = np.array([o.n for o in obs], dtype=float)
        d = np.array([o.d for o in obs], dtype=float)
        loss = np.array([o.loss for o in obs], dtype=float)
        return n, d, loss

    def retagged(self, splits) -> "ExperimentDataset":
        """Copy with per-observation splits replaced."""
        if len(splits) != len(self.observations):
            raise DomainError("one split per observation required")
        return ExperimentDataset(
            tuple(
                Observation(o.n, o.d, o.loss, s, o.ray)
                for o, s in zip(self.observations, splits)
            )
        )


def merge(*datasets: ExperimentDataset) -> ExperimentDataset:
    obs: list[Observation] = []
    for ds in datasets:
        obs.extend(ds.observations)
    return ExperimentDataset(tuple(obs))


def _check_grid(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise InvalidGridError(f"{name} grid is empty")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidGridError(f"{name} grid must be positive and finite")
    if np.any(np.diff(arr) <= 0):
        raise InvalidGridError(f"{name} grid must be strictly increasing")
    return arr


def _noise(noise: NoiseModel, stream: int, i: int, j: int) -> float:
    if noise.sigma == 0.0:
        return 0.0
    rng = np.random.default_rng([noise.seed, stream, i, j])
    return float(rng.normal(0.0, noise.sigma))


def generate_collinear(
    truth: LawParams,
    sizes,
    ratios,
    noise: NoiseModel,
    *,
    split: Split = Split.TRAIN,
) -> ExperimentDataset:
    """One noisy run per (size, ratio) pair with d = ratio * size.

    A single ratio yields a fully collinear design; K ratios yield a fan
    of K rays.  Deterministic for a fixed (truth, grid, seed).
    """
    sizes = _check_grid("size", sizes)
    ratios = _check_grid("ratio", ratios)
    obs = []
    for i, n in enumerate(sizes):
        for j, k in enumerate(ratios):
            d = k * n
            loss = evaluate(truth, n, d) + _noise(noise, _STREAM_COLLINEAR, i, j)
            if loss <= 0:
                raise DomainError(
                    "noise drew a nonpositive loss; sigma is too large for this truth"
                )
            obs.append(Observation(n, d, loss, split, ray=float(k)))
    return ExperimentDataset(tuple(obs))


def generate_grid(
    truth: LawParams,
    sizes,
    token_counts,
    noise: NoiseModel,
    *,
    split: Split = Split.TRAIN,
) -> ExperimentDataset:
    """One noisy run per (size, token count) cell of a rectangular grid.

    Observations are emitted row-major: sizes outer, token counts inner.
    Implied tokens-per-parameter ratios vary freely across cells.
    """
    sizes = _check_grid("size", sizes)
    token_counts = _check_grid("token", token_counts)
    obs = []
    for i, n in enumerate(sizes):
        for j, d in enumerate(token_counts):
            loss = evaluate(truth, n, d) + _noise(noise, _STREAM_GRID, i, j)
            if loss <= 0:
                raise DomainError(
                    "noise drew a nonpositive loss; sigma is too large for this truth"
                )
            obs.append(Observation(float(n), float(d), loss, split, ray=float(d) / float(n)))
    return ExperimentDataset(tuple(obs))


def mark_holdout(
    ds: ExperimentDataset, ratio_cut: float, token_cut: float
) -> ExperimentDataset:
    """Split observations into train and the two holdout classes.

    Runs at tokens-per-parameter >= ``ratio_cut`` become the collinear
    holdout; of the rest, runs with token count >= ``token_cut`` become
    the non-collinear holdout; everything else trains.
    """
    if not (ratio_cut > 0 and token_cut > 0):
        raise DomainError("holdout cuts must be positive")
    splits = []
    for o in ds.observations:
        if o.ratio >= ratio_cut:
            splits.append(Split.HOLDOUT_COLLINEAR)
        elif o.d >= token_cut:
            splits.append(Split.HOLDOUT_NONCOLLINEAR)
        else:
            splits.append(Split.TRAIN)
    if Split.TRAIN not in splits:
        raise EmptyTrainError("holdout cuts left no training observations")
    return ds.retagged(splits)
