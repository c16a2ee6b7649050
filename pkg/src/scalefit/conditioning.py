"""Gram-matrix diagnostics for scaling-law fits.

Everything here is a pure computation on immutable inputs: eigenstructure
of small symmetric matrices, condition numbers of the full Gram matrix and
of its scale-coefficient sub-block, the exact determinant identity that
links near-proportional columns to a weighted variance, confidence-interval
widths from the least-squares covariance, and the leverage a holdout set
exerts on the sloppiest parameter direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import ExperimentDataset
from .errors import (
    DomainError,
    NonSymmetricInputError,
    UnsupportedVariantError,
)
from .laws import SCALE_BLOCK, LawKind, LawParams, exponent_gap

# 95% Gaussian interval half-width multiplier.
Z_95 = 1.96

# Eigenvalue ratios are clamped here to keep rounding noise from turning
# a tiny-but-positive spectrum into a spurious infinity.
_KAPPA_CLAMP = 1e-14

_JACOBI_TOL = 1e-12
_MAX_P = 16


def gram_matrix(jacobian: np.ndarray) -> np.ndarray:
    """Exact Gram matrix J^T J of the Jacobian columns."""
    J = np.asarray(jacobian, dtype=float)
    if J.ndim != 2 or J.shape[0] < 1:
        raise DomainError("jacobian must be a nonempty 2-D matrix")
    return J.T @ J


def eigendecompose_small(sym: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a small symmetric matrix.

    Uses cyclic Jacobi rotations; terminates when the off-diagonal
    Frobenius norm falls below 1e-12 of the input's Frobenius norm.
    Eigenvectors are returned as columns, each signed so its largest
    component is positive.
    """
    A = np.asarray(sym, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSymmetricInputError("input must be a square matrix")
    p = A.shape[0]
    if p > _MAX_P:
        raise DomainError(f"matrix order {p} exceeds the small-matrix limit {_MAX_P}")
    norm = np.linalg.norm(A)
    if norm > 0 and np.max(np.abs(A - A.T)) > 1e-10 * np.max(np.abs(A)):
        raise NonSymmetricInputError("input is not symmetric to 1e-10 relative")

    A = (A + A.T) / 2.0
    V = np.eye(p)
    if norm == 0.0 or p == 1:
        return np.diag(A).copy(), V

    def offdiag(M):
        off = M - np.diag(np.diag(M))
        return float(np.linalg.norm(off))

    others = np.arange(p)
    for _ in range(60):
        if offdiag(A) <= _JACOBI_TOL * norm:
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = A[i, j]
                if aij == 0.0:
                    continue
                tau = (A[j, j] - A[i, i]) / (2.0 * aij)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                mask = (others != i) & (others != j)
                aki = A[mask, i].copy()
                akj = A[mask, j].copy()
                A[mask, i] = A[i, mask] = c * aki - s * akj
                A[mask, j] = A[j, mask] = s * aki + c * akj
                A[i, i] -= t * aij
                A[j, j] += t * aij
                A[i, j] = A[j, i] = 0.0
                vi = V[:, i].copy()
                vj = V[:, j].copy()
                V[:, i] = c * vi - s * vj
                V[:, j] = s * vi + c * vj

    order = np.argsort(np.diag(A), kind="stable")
    values = np.diag(A)[order]
    vectors = V[:, order]
    for col in range(p):
        peak = np.argmax(np.abs(vectors[:, col]))
        if vectors[peak, col] < 0:
            vectors[:, col] = -vectors[:, col]
    return values, vectors


def weighted_variance(values, weights) -> float:
    """sum(w v^2) - (sum(w v))^2 for weights summing to one.

    Evaluated in centered form, which is algebraically identical but
    keeps near-constant inputs from cancelling to rounding noise.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    mean = float(weights @ values)
    dev = values - mean
    return float(weights @ (dev * dev))


@dataclass(frozen=True)
class PowerSumProfile:
    """Power sums and log-moments of a model-size design at exponent alpha.

    ``weights`` are the size weights n_i**(-2 alpha) normalized to one;
    ``logn_variance`` is their weighted variance of log n.  The log-moment
    sums t1, t2, u2 feed the confidence-interval algebra.
    """

    alpha: float
    phi: dict[float, float]
    weights: np.ndarray
    logn_variance: float
    t1: float
    t2: float
    u2: float

    @property
    def phi1(self) -> float:
        return self.phi[1.0]

    @property
    def phi2(self) -> float:
        return self.phi[2.0]


def power_sum_profile(sizes, alpha: float, extra_q=()) -> PowerSumProfile:
    """Power sums Phi_q = sum n_i**(-q alpha) plus derived log-moments."""
    n = np.asarray(sizes, dtype=float)
    if n.size == 0 or np.any(n <= 0):
        raise DomainError("sizes must be a nonempty positive vector")
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    logn = np.log(n)
    qs = sorted({1.0, 2.0, *(float(q) for q in extra_q)})
    phi = {q: float(np.sum(np.exp(-q * alpha * logn))) for q in qs}
    w = np.exp(-2.0 * alpha * logn)
    w = w / np.sum(w)
    pow1 = np.exp(-alpha * logn)
    pow2 = np.exp(-2.0 * alpha * logn)
    return PowerSumProfile(
        alpha=float(alpha),
        phi=phi,
        weights=w,
        logn_variance=weighted_variance(logn, w),
        t1=float(np.sum(pow1 * logn)),
        t2=float(np.sum(pow2 * logn)),
        u2=float(np.sum(pow2 * logn * logn)),
    )


def cs_gap_determinant(f, c: float, h) -> tuple[float, float]:
    """Both sides of the proportional-column determinant identity.

    For g_i = c * f_i * h_i the 2x2 Gram determinant of (f, g) equals
    c^2 (sum f^2)^2 times the f^2-weighted variance of h; the two values
    returned here agree to rounding error by construction of the algebra.
    """
    f = np.asarray(f, dtype=float)
    h = np.asarray(h, dtype=float)
    if f.shape != h.shape or f.ndim != 1:
        raise DomainError("f and h must be 1-D vectors of equal length")
    if not np.any(f != 0):
        raise DomainError("f must be nonzero")
    if c == 0:
        raise DomainError("c must be nonzero")
    if np.any(h <= 0):
        raise DomainError("h must be positive")
    g = c * f * h
    ff = float(f @ f)
    fg = float(f @ g)
    gg = float(g @ g)
    lhs = ff * gg - fg * fg
    w = f * f / ff
    rhs = c * c * ff * ff * weighted_variance(h, w)
    return lhs, rhs


def _pair_kappa_2x2(sub: np.ndarray) -> float:
    tr = sub[0, 0] + sub[1, 1]
    det = sub[0, 0] * sub[1, 1] - sub[0, 1] * sub[1, 0]
    if det <= 0.0:
        return math.inf
    disc = math.sqrt(max(tr * tr - 4.0 * det, 0.0))
    lam_hi = (tr + disc) / 2.0
    lam_lo = 2.0 * det / (tr + disc)
    if lam_lo <= 0.0:
        return math.inf
    return lam_hi / lam_lo


def kappa_scale_pair(gram, kind: LawKind) -> float:
    """Condition number of the scale-coefficient principal sub-block.

    2x2 blocks use the closed trace/determinant form; the interaction
    family's 3x3 block goes through the Jacobi eigensolver.  An exactly
    singular block returns +inf rather than raising.
    """
    G = gram.gram if isinstance(gram, GramDiagnostics) else np.asarray(gram, dtype=float)
    idx = SCALE_BLOCK[kind]
    if max(idx) >= G.shape[0]:
        raise DomainError(f"gram matrix of order {G.shape[0]} lacks the {kind.value} block")
    sub = G[np.ix_(idx, idx)]
    if len(idx) == 2:
        return _pair_kappa_2x2(sub)
    values, _ = eigendecompose_small(sub)
    lam_lo, lam_hi = values[0], values[-1]
    if lam_lo <= 0.0 or lam_hi <= 0.0:
        return math.inf
    return float(lam_hi / lam_lo)


def _ratio_with_clamp(lam_min: float, lam_max: float) -> tuple[float, bool]:
    if lam_max <= 0.0:
        return math.inf, True
    floor = _KAPPA_CLAMP * lam_max
    if lam_min < floor:
        return lam_max / floor, True
    return lam_max / lam_min, False


@dataclass(frozen=True)
class GramDiagnostics:
    """Eigenstructure and condition numbers of one fit's Gram matrix.

    ``kappa_full`` is the raw eigenvalue ratio (scale-sensitive: columns
    for different parameters can differ by many orders of magnitude);
    ``kappa_full_equilibrated`` rescales columns to unit diagonal first.
    Regime logic should use ``kappa_scale_pair``.  ``sloppy_vector`` is
    the unit eigenvector of the smallest eigenvalue.  ``epsilon`` is the
    law's exponent-gap magnitude at the evaluated parameters (None for
    the reduced family).  ``clamped`` flags that the smallest eigenvalue
    sat below the rounding floor and the full ratio was clamped.
    """

    gram: np.ndarray
    eigenvalues: np.ndarray
    kappa_full: float
    kappa_scale_pair: float
    kappa_full_equilibrated: float
    sloppy_vector: np.ndarray
    epsilon: float | None
    clamped: bool


def diagnose(jacobian: np.ndarray, params: LawParams) -> GramDiagnostics:
    """Full diagnostic bundle for a Jacobian evaluated at ``params``."""
    G = gram_matrix(jacobian)
    values, vectors = eigendecompose_small(G)
    kappa_full, clamped = _ratio_with_clamp(values[0], values[-1])

    diag = np.diag(G).copy()
    if np.any(diag <= 0):
        kappa_eq = math.inf
        eq_clamped = True
    else:
        scale = 1.0 / np.sqrt(diag)
        Geq = G * scale[:, None] * scale[None, :]
        eq_values, _ = eigendecompose_small(Geq)
        kappa_eq, eq_clamped = _ratio_with_clamp(eq_values[0], eq_values[-1])

    try:
        eps = exponent_gap(params).magnitude
    except UnsupportedVariantError:
        eps = None

    return GramDiagnostics(
        gram=G,
        eigenvalues=values,
        kappa_full=kappa_full,
        kappa_scale_pair=kappa_scale_pair(G, params.kind),
        kappa_full_equilibrated=kappa_eq,
        sloppy_vector=vectors[:, 0],
        epsilon=eps,
        clamped=clamped or eq_clamped,
    )


# Indices of the coefficients that enter the model linearly once the
# exponents are pinned: the scale coefficients plus the additive offset
# where the family has one.  This is the exactly solvable sub-problem
# behind the interval-inflation comparison.
_COEFFICIENT_BLOCK: dict[LawKind, tuple[int, ...]] = {
    LawKind.CHINCHILLA: (0, 1, 2),
    LawKind.REPEATED_DATA: (0, 1, 2),
    LawKind.KAPLAN_ADDITIVE: (0, 1),
    LawKind.DROPPO_ELIBOL: (1, 2),
    LawKind.REDUCED_CHINCHILLA: (0, 2),
    LawKind.INTERACTION: (0, 1, 2, 3),
}


def _coefficient_block(kind: LawKind) -> tuple[int, ...]:
    return _COEFFICIENT_BLOCK[kind]


@dataclass(frozen=True)
class CIReport:
    """Per-parameter 95% half-widths from the least-squares covariance.

    Half-widths are ``1.96 * sigma * sqrt(diag (J^T J)^-1)`` with a
    1e-12-of-trace ridge on the diagonal before inversion.  When a paired
    single-ray reduced fit is supplied, ``inflation_ratio`` is the ratio
    of the leading scale coefficient's interval to the reduced model's
    combined-coefficient interval, both computed on the coefficient
    block with exponents held at the fit (the exactly linear sub-problem,
    for which the inverse-gap inflation law is exact).
    ``inflation_ratio_relative`` divides each interval by its coefficient
    first, which is the scale-free quantity to quote when the two
    coefficients live in different units (critical-size families).
    ``unreliable`` marks rank-deficiency beyond the ridge; ``kappa``
    records the (possibly clamped) Gram eigenvalue ratio.
    """

    sigma: float
    half_widths: np.ndarray
    param_names: tuple[str, ...]
    inflation_ratio: float | None
    inflation_ratio_relative: float | None
    unreliable: bool
    kappa: float


def ci_half_widths(jacobian: np.ndarray, sigma: float) -> tuple[np.ndarray, bool, float]:
    """95% half-widths plus (unreliable, kappa) from one Jacobian."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    G = gram_matrix(jacobian)
    ridge = 1e-12 * np.trace(G)
    Greg = G + ridge * np.eye(G.shape[0])
    values, vectors = eigendecompose_small(Greg)
    lam_min, lam_max = values[0], values[-1]
    unreliable = lam_min <= _KAPPA_CLAMP * lam_max
    kappa, _ = _ratio_with_clamp(lam_min, lam_max)
    safe = np.maximum(values, _KAPPA_CLAMP * lam_max)
    inv_diag = np.einsum("ij,j,ij->i", vectors, 1.0 / safe, vectors)
    return Z_95 * sigma * np.sqrt(inv_diag), bool(unreliable), kappa


def ci_report(fit, sigma: float, paired_reduced=None) -> CIReport:
    """Confidence-interval report for a fit, optionally with inflation.

    ``fit`` and ``paired_reduced`` are FitResult-like objects exposing
    ``params`` and ``jacobian``; the reduced fit must come from the same
    single-ray data for the inflation ratio to mean anything.
    """
    from .laws import PARAM_NAMES  # local import keeps module load order flexible

    widths, unreliable, kappa = ci_half_widths(fit.jacobian, sigma)
    inflation = None
    inflation_rel = None
    if paired_reduced is not None:
        if paired_reduced.params.kind is not LawKind.REDUCED_CHINCHILLA:
            raise UnsupportedVariantError(
                "the paired fit must be of the reduced single-ray family"
            )
        block = _coefficient_block(fit.params.kind)
        lead = block[0]
        bw, full_unrel, _ = ci_half_widths(fit.jacobian[:, block], sigma)
        red_block = _coefficient_block(LawKind.REDUCED_CHINCHILLA)
        rw, red_unrel, _ = ci_half_widths(paired_reduced.jacobian[:, red_block], sigma)
        lead_value = abs(float(fit.params.values[lead]))
        psi_value = abs(float(paired_reduced.params.values[0]))
        inflation = float(bw[0] / rw[0])
        inflation_rel = float((bw[0] / lead_value) / (rw[0] / psi_value))
        unreliable = unreliable or full_unrel or red_unrel
    return CIReport(
        sigma=float(sigma),
        half_widths=widths,
        param_names=PARAM_NAMES[fit.params.kind],
        inflation_ratio=inflation,
        inflation_ratio_relative=inflation_rel,
        unreliable=unreliable,
        kappa=kappa,
    )


def sloppy_leverage(
    holdout: ExperimentDataset,
    train_ratio: float,
    alpha: float,
    beta_eff: float,
    phi2: float,
) -> float:
    """Mean squared projection of holdout points onto the sloppy direction.

    Zero exactly when every holdout point sits on the training ray;
    strictly positive as soon as one point is off-ray.
    """
    obs = holdout.observations
    if len(obs) == 0:
        raise DomainError("holdout must be nonempty")
    if train_ratio <= 0 or phi2 <= 0:
        raise DomainError("train ratio and phi2 must be positive")
    total = 0.0
    for o in obs:
        k_prime = o.d / o.n
        bracket = 1.0 - (train_ratio / k_prime) ** beta_eff
        total += o.n ** (-2.0 * alpha) * bracket * bracket
    return total / (len(obs) * phi2)
