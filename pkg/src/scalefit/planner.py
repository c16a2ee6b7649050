"""A-priori experimental-design planning for scaling-law fits.

The diversity statistic here is the variance of the per-ray factors
``k**(-beta_eff)``: when it clears the threshold implied by a target
condition number, the scale-coefficient pair of the expected Gram matrix
is well conditioned before a single model is trained.  The planner
places rays and model sizes log-uniformly, balances the budget, checks
the design against both the diversity criterion and an expected-Jacobian
measurement, and builds budget-matched non-collinear comparison designs
by growing a bounding box over a candidate grid.

Everything is pure and deterministic; the bounding-box construction is
deterministic for a fixed integer seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .conditioning import kappa_scale_pair
from .errors import (
    DomainError,
    EmptyRatioError,
    InfeasibleDesignError,
    InsufficientGridError,
)
from . import laws
from .laws import LawKind, LawParams


class Regime(enum.Enum):
    """Predicted conditioning regime of a collinear design."""

    A = "A"  # ill-conditioned: diversity below threshold
    B = "B"  # well-conditioned


@dataclass(frozen=True)
class DiversityReport:
    """Outcome of the a-priori ratio-diversity check.

    ``v_k`` is the variance of {k**(-beta_eff)} over the design's rays
    and ``tau_k`` the threshold it must reach for the expected
    scale-pair condition number to stay within ``kappa_target``.
    """

    ratios: tuple[float, ...]
    beta_eff: float
    kappa_target: float
    s1: float
    s2: float
    v_k: float
    tau_k: float
    passes: bool

    @property
    def predicted_kappa(self) -> float:
        """Leading-order condition number implied by the ratio set."""
        k = len(self.ratios)
        if self.v_k <= 0.0:
            return math.inf
        return (k + self.s2) ** 2 / (k * k * self.v_k)


def diversity_check(ratios, beta_eff: float, kappa_target: float) -> DiversityReport:
    """Evaluate the ratio-diversity criterion for a set of rays."""
    ks = np.asarray(ratios, dtype=float)
    if ks.size == 0:
        raise EmptyRatioError("at least one ratio is required")
    if np.any(ks <= 0) or not np.all(np.isfinite(ks)):
        raise DomainError("ratios must be positive and finite")
    if beta_eff <= 0:
        raise DomainError("beta_eff must be positive")
    if kappa_target <= 0:
        raise DomainError("kappa_target must be positive")
    y = ks ** (-beta_eff)
    K = ks.size
    s1 = float(np.sum(y))
    s2 = float(np.sum(y * y))
    # centered form avoids the cancellation of s2/K - (s1/K)^2
    dev = y - s1 / K
    v_k = float(np.sum(dev * dev)) / K
    if K == 2:
        k1, k2 = float(np.min(ks)), float(np.max(ks))
        closed = 0.25 * k1 ** (-2.0 * beta_eff) * (1.0 - (k2 / k1) ** (-beta_eff)) ** 2
        # absolute floor covers the regime where both forms cancel to ~0
        if not math.isclose(v_k, closed, rel_tol=1e-12, abs_tol=1e-12 * (s1 / K) ** 2):
            raise ArithmeticError(
                "two-ray variance disagrees with its closed form; "
                f"moment={v_k!r} closed={closed!r}"
            )
    tau_k = (K + s2) ** 2 / (K * K * kappa_target)
    return DiversityReport(
        ratios=tuple(float(k) for k in ks),
        beta_eff=float(beta_eff),
        kappa_target=float(kappa_target),
        s1=s1,
        s2=s2,
        v_k=v_k,
        tau_k=tau_k,
        passes=v_k >= tau_k,
    )


def classify_regime(ratios, beta_eff: float, kappa_target: float) -> Regime:
    """Regime A when diversity falls short of the threshold, else B.

    Evaluable before any training using a literature value of the
    data-side exponent; every single-ray design is Regime A.
    """
    report = diversity_check(ratios, beta_eff, kappa_target)
    return Regime.B if report.passes else Regime.A


_REMEDIATION = (
    "no two-ray spread can reach this target from the current single-ray "
    "baseline; widen the model-size grid (which lowers the baseline "
    "condition number) or add rays near the endpoints"
)


@dataclass(frozen=True)
class RMinResult:
    """Minimum two-ray spread, or an infeasibility verdict with advice."""

    value: float
    feasible: bool
    note: str | None = None


def r_min(
    epsilon: float, kappa_one: float, kappa_target: float, beta_eff: float
) -> RMinResult:
    """Minimum ratio spread k2/k1 for a two-ray design to hit the target.

    Feasible exactly when ``epsilon * sqrt(kappa_one / kappa_target)``
    is below one; otherwise the target is unreachable at two rays and
    the result carries a remediation note instead of raising.
    """
    for name, v in (
        ("epsilon", epsilon),
        ("kappa_one", kappa_one),
        ("kappa_target", kappa_target),
        ("beta_eff", beta_eff),
    ):
        if not (np.isfinite(v) and v > 0):
            raise DomainError(f"{name} must be positive and finite")
    s = epsilon * math.sqrt(kappa_one / kappa_target)
    if s >= 1.0:
        return RMinResult(math.inf, False, _REMEDIATION)
    return RMinResult((1.0 - s) ** (-1.0 / beta_eff), True, None)


@dataclass(frozen=True)
class Priors:
    """Planning priors: expected exponent gap and data-side exponent.

    ``uncertain`` widens the minimum spread by a fixed 35% safety margin.
    """

    epsilon: float
    beta_eff: float
    uncertain: bool = False


_UNCERTAIN_MARGIN = 1.35


def reference_params(epsilon: float, beta_eff: float) -> LawParams:
    """Representative two-power-law parameters for expected-Jacobian checks."""
    return LawParams.from_named(
        LawKind.CHINCHILLA,
        A=406.4,
        B=410.7,
        E=1.69,
        alpha=beta_eff + epsilon,
        beta=beta_eff,
    )


@dataclass(frozen=True)
class DesignPlan:
    """A planned multi-ray design with its verification verdicts.

    ``allocation`` sums to the budget; ``sizes`` is the union of the
    per-ray log-uniform model-size grids.  ``feasible`` mirrors the
    two-ray spread condition at the measured single-ray baseline;
    ``verification_passed`` requires both the diversity criterion and
    the expected-Jacobian condition number to clear the target.
    """

    ratios: tuple[float, ...]
    sizes: tuple[float, ...]
    per_ray_sizes: tuple[tuple[float, ...], ...]
    allocation: tuple[int, ...]
    r_min: float
    feasible: bool
    predicted_kappa: float
    measured_kappa: float
    kappa_one: float
    diversity: DiversityReport
    verification_passed: bool
    note: str | None = None


def _log_uniform(lo: float, hi: float, count: int) -> np.ndarray:
    if count == 1:
        return np.array([math.sqrt(lo * hi)])
    return np.exp(np.linspace(math.log(lo), math.log(hi), count))


def _expected_pair_kappa(params: LawParams, sizes_per_ray, ratios) -> float:
    ns = np.concatenate([np.asarray(s, dtype=float) for s in sizes_per_ray])
    ds = np.concatenate(
        [np.asarray(s, dtype=float) * k for s, k in zip(sizes_per_ray, ratios)]
    )
    J = laws.jacobian(params, ns, ds)
    return kappa_scale_pair(J.T @ J, params.kind)


def plan_design(
    budget: int,
    k_range: tuple[float, float],
    n_range: tuple[float, float],
    K: int = 2,
    kappa_target: float = 100.0,
    priors: Priors = Priors(0.06, 0.28),
    *,
    kappa_one: float | None = None,
) -> DesignPlan:
    """Place rays and sizes, allocate the budget, and verify the design.

    Rays go log-uniformly over ``k_range`` and model sizes log-uniformly
    over ``n_range`` within each ray; the budget is split evenly with
    any remainder handed to the extreme rays first.  The single-ray
    baseline condition number is measured from the expected Jacobian at
    representative parameters unless supplied.  Raises when even the
    endpoint-only two-ray design fails the diversity criterion.
    """
    if K < 2:
        raise DomainError("planning needs at least two rays")
    if budget < 2 * K:
        raise DomainError("budget must allow at least two runs per ray")
    k_lo, k_hi = k_range
    n_lo, n_hi = n_range
    if not (0 < k_lo <= k_hi):
        raise DomainError("k_range must be positive with k_lo <= k_hi")
    if not (0 < n_lo < n_hi):
        raise DomainError("n_range must be positive with n_lo < n_hi")

    endpoints = diversity_check(
        [k_lo, k_hi] if k_hi > k_lo else [k_lo], priors.beta_eff, kappa_target
    )
    if not endpoints.passes:
        raise InfeasibleDesignError(
            "even the endpoint-only placement fails the diversity criterion: "
            f"v_k={endpoints.v_k:.3g} < tau_k={endpoints.tau_k:.3g}"
        )

    ratios = tuple(float(k) for k in _log_uniform(k_lo, k_hi, K))
    base, rem = divmod(budget, K)
    allocation = [base] * K
    outward = []
    left, right = 0, K - 1
    while left <= right:
        outward.append(right)
        if left != right:
            outward.append(left)
        left, right = left + 1, right - 1
    for j in range(rem):
        allocation[outward[j % len(outward)]] += 1

    per_ray = tuple(
        tuple(float(x) for x in _log_uniform(n_lo, n_hi, m)) for m in allocation
    )
    params = reference_params(priors.epsilon, priors.beta_eff)

    if kappa_one is None:
        kappa_one = _expected_pair_kappa(params, [per_ray[0]], [ratios[0]])
    spread = r_min(priors.epsilon, kappa_one, kappa_target, priors.beta_eff)
    rmin_value = spread.value
    if spread.feasible and priors.uncertain:
        rmin_value *= _UNCERTAIN_MARGIN

    diversity = diversity_check(ratios, priors.beta_eff, kappa_target)
    measured = _expected_pair_kappa(params, per_ray, ratios)
    return DesignPlan(
        ratios=ratios,
        sizes=tuple(sorted({x for s in per_ray for x in s})),
        per_ray_sizes=per_ray,
        allocation=tuple(allocation),
        r_min=rmin_value,
        feasible=spread.feasible,
        predicted_kappa=diversity.predicted_kappa,
        measured_kappa=measured,
        kappa_one=float(kappa_one),
        diversity=diversity,
        verification_passed=bool(diversity.passes and measured <= kappa_target),
        note=spread.note,
    )


# Non-collinear bounding-box construction ---------------------------------

_LOG10_BIN = 0.1  # width of a tokens-per-parameter bin, in decades


def _cell_bin(ratio: float, log_targets: np.ndarray):
    """Bin id of a grid cell's implied ratio.

    A cell within half a bin of a requested target ratio claims that
    target's bin; anything else lands in a generic bin on a fixed
    0.1-decade lattice.
    """
    lg = math.log10(ratio)
    if log_targets.size:
        j = int(np.argmin(np.abs(log_targets - lg)))
        if abs(log_targets[j] - lg) <= _LOG10_BIN / 2.0:
            return ("target", j)
    return ("other", round(lg / _LOG10_BIN))


def bounding_box_nc(
    grid_sizes,
    grid_tokens,
    target_count: int,
    target_ratios,
    seed: int,
) -> tuple[tuple[int, int], ...]:
    """Select exactly ``target_count`` cells of a size-by-token grid.

    Starts from a centered 2x2 box (side chosen by the seeded RNG when
    the grid center is ambiguous) and repeatedly expands whole rows or
    columns, preferring the expansion that first covers new target-ratio
    bins, then new ratio bins of any kind, with a random tiebreak.  A
    ring that would overshoot is trimmed by a three-bucket priority
    subsample (uncovered target bins, then uncovered other bins, then
    the rest), so the result is a contiguous rectangle minus at most one
    partial ring.  Returns sorted (row, column) index pairs.
    """
    sizes = np.asarray(grid_sizes, dtype=float)
    tokens = np.asarray(grid_tokens, dtype=float)
    m_n, m_d = sizes.size, tokens.size
    if m_n == 0 or m_d == 0:
        raise InsufficientGridError("grid must be nonempty")
    if target_count < 1:
        raise DomainError("target_count must be at least 1")
    if target_count > m_n * m_d:
        raise InsufficientGridError(
            f"grid has {m_n * m_d} cells, fewer than the requested {target_count}"
        )
    rng = np.random.default_rng(seed)
    log_targets = np.log10(np.asarray(sorted(target_ratios), dtype=float)) if len(
        target_ratios
    ) else np.array([])

    def bin_of(i, j):
        return _cell_bin(tokens[j] / sizes[i], log_targets)

    # centered 2x2 box; the seed picks the side on ambiguous centers
    def initial_span(m):
        if m == 1:
            return 0, 0
        c = m // 2
        lo = c - 1 + int(rng.integers(0, 2))
        lo = min(max(lo, 0), m - 2)
        return lo, lo + 1

    i_lo, i_hi = initial_span(m_n)
    j_lo, j_hi = initial_span(m_d)

    selected: list[tuple[int, int]] = [
        (i, j) for i in range(i_lo, i_hi + 1) for j in range(j_lo, j_hi + 1)
    ]
    covered = {bin_of(i, j) for (i, j) in selected}

    def subsample(cells, room):
        buckets: dict[str, list[tuple[int, int]]] = {"a": [], "b": [], "c": []}
        for cell in cells:
            b = bin_of(*cell)
            if b in covered:
                buckets["c"].append(cell)
            elif b[0] == "target":
                buckets["a"].append(cell)
            else:
                buckets["b"].append(cell)
        out = []
        for key in ("a", "b", "c"):
            bucket = buckets[key]
            rng.shuffle(bucket)
            out.extend(bucket)
        return out[:room]

    if len(selected) > target_count:
        selected = subsample(sorted(selected), target_count)

    while len(selected) < target_count and not (
        i_lo == 0 and i_hi == m_n - 1 and j_lo == 0 and j_hi == m_d - 1
    ):
        candidates = []
        if i_lo > 0 or i_hi < m_n - 1:
            rows = [r for r in (i_lo - 1, i_hi + 1) if 0 <= r < m_n]
            ring = [(r, j) for r in rows for j in range(j_lo, j_hi + 1)]
            candidates.append(("rows", rows, ring))
        if j_lo > 0 or j_hi < m_d - 1:
            cols = [c for c in (j_lo - 1, j_hi + 1) if 0 <= c < m_d]
            ring = [(i, c) for i in range(i_lo, i_hi + 1) for c in cols]
            candidates.append(("cols", cols, ring))

        best = None
        for kind_name, lines, ring in candidates:
            new_bins = {bin_of(i, j) for (i, j) in ring} - covered
            s1 = sum(1 for b in new_bins if b[0] == "target")
            s2 = len(new_bins) - s1
            score = (s1, s2, float(rng.uniform()))
            if best is None or score > best[0]:
                best = (score, kind_name, lines, ring)
        _, kind_name, lines, ring = best

        room = target_count - len(selected)
        if len(ring) <= room:
            selected.extend(ring)
            covered |= {bin_of(i, j) for (i, j) in ring}
            if kind_name == "rows":
                i_lo, i_hi = min(i_lo, *lines), max(i_hi, *lines)
            else:
                j_lo, j_hi = min(j_lo, *lines), max(j_hi, *lines)
        else:
            selected.extend(subsample(sorted(ring), room))
            break

    return tuple(sorted(selected))
