"""Bounded multi-start nonlinear least squares for scaling laws.

Each restart draws an in-bounds start (log-uniform for coefficients that
span decades, uniform otherwise), runs damped Gauss-Newton steps with
projection onto the box, and the best objective wins with ties broken by
the lowest restart index.  A short randomized coordinate polish around
the winner guards against shallow local minima.  Every random draw is
keyed by the restart-seed protocol, so identical inputs give bit-identical
results; restarts are independent and the merge is order-free.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import ExperimentDataset, Split
from .errors import (
    DegenerateDesignError,
    DomainError,
    NotSingleRayError,
    SingularSystemError,
)
from . import laws
from .laws import LawKind, LawParams


class SeedProtocol(enum.Enum):
    """How restart index i maps to the RNG seed for that restart."""

    STRIDE1 = "stride1"
    STRIDE137 = "stride137"
    AFFINE = "affine"


_AFFINE_BASE = 42
_AFFINE_STRIDE = 100_003


def restart_seed(protocol: SeedProtocol, index: int) -> int:
    if index < 0:
        raise DomainError("restart index must be nonnegative")
    if protocol is SeedProtocol.STRIDE1:
        return index
    if protocol is SeedProtocol.STRIDE137:
        return 137 * index
    return _AFFINE_BASE + _AFFINE_STRIDE * index


@dataclass(frozen=True)
class SquaredError:
    """Plain least squares: objective 0.5 * sum r^2."""


@dataclass(frozen=True)
class Huber:
    """Huber robust loss; quadratic within delta, linear beyond."""

    delta: float = 0.5

    def __post_init__(self):
        if self.delta <= 0:
            raise DomainError("Huber delta must be positive")


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 100
    seed_protocol: SeedProtocol = SeedProtocol.STRIDE1
    loss: SquaredError | Huber | None = None  # None: Huber(0.5) for repeated-data
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    polish_iterations: int = 50
    polish_scale: float = 0.01

    def __post_init__(self):
        if self.restarts < 1:
            raise DomainError("restarts must be at least 1")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")


@dataclass
class FitResult:
    """Outcome of a multi-start fit.

    ``jacobian`` is the residual Jacobian at the solution and
    ``objective`` the recomputed value there.  ``restart_params`` and
    ``restart_objectives`` keep every restart's accepted optimum for
    spread diagnostics.  The repeated-data budgets used during fitting
    travel with the result so later predictions stay consistent.
    """

    params: LawParams
    objective: float
    residuals: np.ndarray
    jacobian: np.ndarray
    restart_index: int
    converged: bool
    restart_objectives: np.ndarray
    restart_params: np.ndarray
    unique_tokens: float | None = None
    unique_params: float | None = None

    def predict(self, n, d):
        return laws.evaluate(
            self.params,
            n,
            d,
            unique_tokens=self.unique_tokens,
            unique_params=self.unique_params,
        )


def gauss_newton_step(
    jacobian: np.ndarray,
    residuals: np.ndarray,
    damping: float = 0.0,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Solve (J^T W J + damping I) step = -J^T W r.

    With zero damping this is the pure normal-equation step, exact for
    models linear in the parameters.  If the system is numerically
    singular the damping is escalated; failure at the ceiling raises.
    """
    J = np.asarray(jacobian, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if J.ndim != 2 or r.shape != (J.shape[0],):
        raise DomainError("jacobian must be (m, p) and residuals length m")
    if weights is None:
        G = J.T @ J
        g = J.T @ r
    else:
        G = J.T @ (weights[:, None] * J)
        g = J.T @ (weights * r)
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
        raise SingularSystemError("normal equations contain non-finite entries")
    p = G.shape[0]
    scale = np.trace(G) / p if p else 0.0
    mu = max(damping, 0.0)
    ceiling = max(scale, 1.0) * 1e12
    while True:
        try:
            step = np.linalg.solve(G + mu * np.eye(p), -g)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.all(np.isfinite(step)):
            return step
        mu = max(mu * 10.0, scale * 1e-12, 1e-300)
        if mu > ceiling:
            raise SingularSystemError(
                "normal equations remain rank-deficient at the damping ceiling"
            )


def _loss_for(kind: LawKind, config: FitConfig):
    if config.loss is not None:
        return config.loss
    if kind is LawKind.REPEATED_DATA:
        return Huber(0.5)
    return SquaredError()


def _objective(r: np.ndarray, loss) -> float:
    if isinstance(loss, SquaredError):
        return 0.5 * float(r @ r)
    a = np.abs(r)
    quad = a <= loss.delta
    out = np.where(quad, 0.5 * r * r, loss.delta * a - 0.5 * loss.delta**2)
    return float(np.sum(out))


def _irls_weights(r: np.ndarray, loss) -> np.ndarray:
    if isinstance(loss, SquaredError):
        return np.ones_like(r)
    a = np.abs(r)
    w = np.ones_like(r)
    big = a > loss.delta
    w[big] = loss.delta / a[big]
    return w


def _draw_start(kind: LawKind, lower, upper, rng) -> np.ndarray:
    logmask = laws.log_scale_mask(kind)
    theta = np.empty(len(lower))
    for j in range(len(lower)):
        if logmask[j] and lower[j] > 0:
            theta[j] = math.exp(rng.uniform(math.log(lower[j]), math.log(upper[j])))
        else:
            theta[j] = rng.uniform(lower[j], upper[j])
    return np.clip(theta, lower, upper)


class _Problem:
    """Residuals/Jacobian of one dataset under one law family."""

    def __init__(self, kind, n, d, losses, lower, upper, loss, unique_tokens, unique_params):
        self.kind = kind
        self.n = n
        self.d = d
        self.losses = losses
        self.lower = lower
        self.upper = upper
        self.loss = loss
        self.unique_tokens = unique_tokens
        self.unique_params = unique_params

    def params(self, theta) -> LawParams:
        return LawParams(self.kind, theta, self.lower, self.upper)

    def residuals(self, theta) -> np.ndarray:
        pred = laws.evaluate(
            self.params(theta),
            self.n,
            self.d,
            unique_tokens=self.unique_tokens,
            unique_params=self.unique_params,
        )
        return self.losses - pred

    def jacobian(self, theta) -> np.ndarray:
        return laws.jacobian(
            self.params(theta),
            self.n,
            self.d,
            unique_tokens=self.unique_tokens,
            unique_params=self.unique_params,
        )

    def objective(self, theta) -> float:
        try:
            return _objective(self.residuals(theta), self.loss)
        except OverflowError:
            return math.inf


def _descend(problem: _Problem, theta0: np.ndarray, config: FitConfig):
    """Projected damped Gauss-Newton from one start; returns (theta, obj, converged)."""
    theta = np.clip(theta0, problem.lower, problem.upper)
    obj = problem.objective(theta)
    if not math.isfinite(obj):
        return theta, obj, False
    mu = None
    converged = False
    for _ in range(config.max_iterations):
        try:
            r = problem.residuals(theta)
            J = problem.jacobian(theta)
        except OverflowError:
            break
        w = _irls_weights(r, problem.loss)
        grad = J.T @ (w * r)
        if np.max(np.abs(grad)) < config.gradient_tolerance * (1.0 + obj):
            converged = True
            break
        if mu is None:
            G = J.T @ (w[:, None] * J)
            mu = 1e-3 * np.trace(G) / G.shape[0]
        try:
            step = gauss_newton_step(J, r, damping=mu, weights=w)
        except SingularSystemError:
            break
        candidate = np.clip(theta + step, problem.lower, problem.upper)
        cand_obj = problem.objective(candidate)
        if cand_obj < obj:
            rel_step = np.linalg.norm(candidate - theta) / (1.0 + np.linalg.norm(theta))
            theta, obj = candidate, cand_obj
            mu /= 3.0
            if rel_step < config.step_tolerance:
                converged = True
                break
        else:
            mu *= 3.0
            if mu > 1e15 * (1.0 + abs(obj)):
                break
    return theta, obj, converged


def _polish(problem: _Problem, theta: np.ndarray, obj: float, config: FitConfig, seed: int):
    """Greedy randomized coordinate search around the best restart."""
    if config.polish_iterations <= 0:
        return theta, obj
    rng = np.random.default_rng([seed, 999_983])
    width = problem.upper - problem.lower
    p = len(theta)
    for _ in range(config.polish_iterations):
        j = int(rng.integers(p))
        candidate = theta.copy()
        candidate[j] += rng.normal(0.0, config.polish_scale * width[j])
        candidate = np.clip(candidate, problem.lower, problem.upper)
        cand_obj = problem.objective(candidate)
        if cand_obj < obj:
            theta, obj = candidate, cand_obj
    return theta, obj


def fit(
    ds: ExperimentDataset,
    kind: LawKind,
    config: FitConfig = FitConfig(),
    *,
    unique_tokens: float | None = None,
    unique_params: float | None = None,
    lower=None,
    upper=None,
) -> FitResult:
    """Multi-start bounded fit of one law family to the training split."""
    n, d, losses = ds.arrays(Split.TRAIN)
    p = laws.n_params(kind)
    if len(n) < p:
        raise DegenerateDesignError(
            f"{kind.value} needs at least {p} training observations, got {len(n)}"
        )
    lo, hi = laws.default_bounds(kind)
    if lower is not None:
        lo = np.asarray(lower, dtype=float)
    if upper is not None:
        hi = np.asarray(upper, dtype=float)
    if kind is LawKind.DROPPO_ELIBOL and upper is None:
        # The irreducible-loss floor cannot exceed any observed loss.
        cap = 0.99 * float(np.min(losses))
        if cap > lo[0]:
            hi = hi.copy()
            hi[0] = min(hi[0], cap)
    loss = _loss_for(kind, config)
    problem = _Problem(kind, n, d, losses, lo, hi, loss, unique_tokens, unique_params)

    best_idx = -1
    best_obj = math.inf
    best_theta = None
    best_converged = False
    all_obj = np.empty(config.restarts)
    all_theta = np.empty((config.restarts, p))
    for i in range(config.restarts):
        rng = np.random.default_rng(restart_seed(config.seed_protocol, i))
        theta0 = _draw_start(kind, lo, hi, rng)
        theta, obj, converged = _descend(problem, theta0, config)
        all_obj[i] = obj
        all_theta[i] = theta
        if obj < best_obj:
            best_idx, best_obj, best_theta, best_converged = i, obj, theta, converged

    if best_theta is None:  # every start diverged; keep the last projection
        best_idx, best_theta, best_obj = 0, np.clip(all_theta[0], lo, hi), all_obj[0]

    theta, obj = _polish(
        problem, best_theta, best_obj, config, restart_seed(config.seed_protocol, best_idx)
    )
    if obj < best_obj:
        # re-descend after the polish moved the iterate
        theta, obj, reconverged = _descend(problem, theta, config)
        best_converged = best_converged or reconverged
    else:
        theta, obj = best_theta, best_obj

    params = problem.params(theta)
    residuals = problem.residuals(theta)
    return FitResult(
        params=params,
        objective=problem.objective(theta),
        residuals=residuals,
        jacobian=problem.jacobian(theta),
        restart_index=best_idx,
        converged=best_converged,
        restart_objectives=all_obj,
        restart_params=all_theta,
        unique_tokens=unique_tokens,
        unique_params=unique_params,
    )


def reduced_counterpart(result: FitResult, ds: ExperimentDataset) -> FitResult:
    """Collapse a fitted two-power-law model onto the dataset's single ray.

    The combined coefficient, exponent, and offset come from the fit via
    the ray reduction, so the comparison against the full fit shares its
    exponent; the residuals and Jacobian are evaluated on the same
    training data.  This is the natural pairing for interval-inflation
    reports: with a shared exponent, dropping the near-collinear column
    can only narrow the leading coefficient's interval.
    """
    if result.params.kind is not LawKind.CHINCHILLA:
        raise DomainError("the ray collapse pairing is defined for the two-power-law family")
    if len(ds.distinct_ratios) != 1:
        raise NotSingleRayError("the paired reduction needs a single training ray")
    k = ds.distinct_ratios[0]
    collapsed = laws.reduce_on_ray(result.params, k)
    lo, hi = laws.default_bounds(LawKind.REDUCED_CHINCHILLA)
    hi = np.maximum(hi, collapsed.values * 1.01)
    params = LawParams(LawKind.REDUCED_CHINCHILLA, collapsed.values, lo, hi)
    n, d, losses = ds.arrays(Split.TRAIN)
    residuals = losses - laws.evaluate(params, n, d)
    return FitResult(
        params=params,
        objective=0.5 * float(residuals @ residuals),
        residuals=residuals,
        jacobian=laws.jacobian(params, n, d),
        restart_index=result.restart_index,
        converged=result.converged,
        restart_objectives=np.array([]),
        restart_params=np.empty((0, params.size)),
    )


def profile_reduced_fit(ds: ExperimentDataset, config: FitConfig = FitConfig()) -> FitResult:
    """Fit the single-ray reduced family (psi, alpha, E).

    Requires every training observation to share one tokens-per-parameter
    ratio and at least two distinct model sizes; with a single size the
    (psi, alpha) block is exactly singular and nothing is identified.
    """
    train = ds.train
    if len(ds.distinct_ratios) != 1:
        raise NotSingleRayError(
            f"reduced profiling needs one training ray, found {len(ds.distinct_ratios)}"
        )
    sizes = {o.n for o in train}
    if len(sizes) < 2:
        raise DegenerateDesignError(
            "reduced profiling needs at least two distinct model sizes"
        )
    cfg = config if config.loss is not None else replace(config, loss=SquaredError())
    return fit(ds, LawKind.REDUCED_CHINCHILLA, cfg)
