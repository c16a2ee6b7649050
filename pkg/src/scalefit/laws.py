"""Closed-form scaling-law families and their analytic sensitivities.

Six parametric families predict training loss from model size ``n`` and
token count ``d``.  Each family fixes an ordered parameter vector (see
``PARAM_NAMES``), a default box constraint per parameter, and the index
pair (or triple) of "scale coefficients" whose Jacobian columns collapse
onto each other when every run shares one tokens-per-parameter ratio.

Every power is evaluated as ``exp(e * log(x))`` so that token and
parameter counts spanning hundreds of decades neither overflow nor lose
the exponent structure.  All functions here are pure and operate on
immutable inputs, so they are safe for unrestricted concurrent use.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, UnsupportedVariantError

_MAX_EXP = 700.0  # float64 exp() overflows just above this


class LawKind(enum.Enum):
    """One scaling-law family; fixes the parameter count and ordering."""

    CHINCHILLA = "chinchilla"
    REPEATED_DATA = "repeated-data"
    KAPLAN_ADDITIVE = "kaplan"
    DROPPO_ELIBOL = "droppo-elibol"
    REDUCED_CHINCHILLA = "reduced"
    INTERACTION = "interaction"


PARAM_NAMES: dict[LawKind, tuple[str, ...]] = {
    LawKind.CHINCHILLA: ("A", "B", "E", "alpha", "beta"),
    LawKind.REPEATED_DATA: ("A", "B", "E", "alpha", "beta", "rstar_d", "rstar_n"),
    LawKind.KAPLAN_ADDITIVE: ("n_c", "d_c", "alpha_n", "alpha_d"),
    LawKind.DROPPO_ELIBOL: ("l_inf", "n_c", "d_c", "alpha_n", "alpha_d", "alpha"),
    LawKind.REDUCED_CHINCHILLA: ("psi", "alpha", "E"),
    LawKind.INTERACTION: ("A", "B", "F", "E", "alpha", "beta", "gamma_n", "gamma_d"),
}

# Indices of the scale-coefficient block whose Jacobian columns become
# near-proportional on a single tokens-per-parameter ray.
SCALE_BLOCK: dict[LawKind, tuple[int, ...]] = {
    LawKind.CHINCHILLA: (0, 1),
    LawKind.REPEATED_DATA: (0, 1),
    LawKind.KAPLAN_ADDITIVE: (0, 1),
    LawKind.DROPPO_ELIBOL: (1, 2),
    LawKind.REDUCED_CHINCHILLA: (0, 1),
    LawKind.INTERACTION: (0, 1, 2),
}

# Default fitter box constraints, one (lower, upper) pair per parameter.
_DEFAULT_BOUNDS: dict[LawKind, tuple[tuple[float, float], ...]] = {
    LawKind.CHINCHILLA: (
        (1e-2, 1e10), (1e-2, 1e10), (0.0, 10.0), (0.01, 2.0), (0.01, 2.0),
    ),
    LawKind.REPEATED_DATA: (
        (1e-2, 1e12), (1e-2, 1e12), (0.0, 10.0), (0.01, 2.0), (0.01, 2.0),
        (0.1, 50.0), (0.1, 50.0),
    ),
    LawKind.KAPLAN_ADDITIVE: (
        (1e3, 1e14), (1e3, 1e14), (0.01, 2.0), (0.01, 2.0),
    ),
    LawKind.DROPPO_ELIBOL: (
        (1e-6, 10.0), (1e3, 1e14), (1e3, 1e14), (0.01, 2.0), (0.01, 2.0),
        (0.01, 2.0),
    ),
    LawKind.REDUCED_CHINCHILLA: (
        (1e-2, 2e10), (0.01, 2.0), (0.0, 10.0),
    ),
    LawKind.INTERACTION: (
        (1e-2, 1e10), (1e-2, 1e10), (1e-2, 1e10), (0.0, 10.0),
        (0.01, 2.0), (0.01, 2.0), (0.01, 2.0), (0.01, 2.0),
    ),
}

_EXPONENT_NAMES = frozenset(
    {"alpha", "beta", "alpha_n", "alpha_d", "gamma_n", "gamma_d"}
)

# Parameters spanning many decades; the multi-start fitter draws these
# log-uniformly within their box.
_LOG_SCALE_NAMES = frozenset(
    {"A", "B", "F", "psi", "n_c", "d_c", "l_inf", "rstar_d", "rstar_n"}
)


def param_names(kind: LawKind) -> tuple[str, ...]:
    return PARAM_NAMES[kind]


def n_params(kind: LawKind) -> int:
    return len(PARAM_NAMES[kind])


def default_bounds(kind: LawKind) -> tuple[np.ndarray, np.ndarray]:
    """Default (lower, upper) box-constraint vectors for ``kind``."""
    pairs = _DEFAULT_BOUNDS[kind]
    lower = np.array([p[0] for p in pairs], dtype=float)
    upper = np.array([p[1] for p in pairs], dtype=float)
    return lower, upper


def log_scale_mask(kind: LawKind) -> np.ndarray:
    """Boolean mask of parameters the fitter should draw log-uniformly."""
    return np.array([name in _LOG_SCALE_NAMES for name in PARAM_NAMES[kind]])


def exponent_mask(kind: LawKind) -> np.ndarray:
    return np.array([name in _EXPONENT_NAMES for name in PARAM_NAMES[kind]])


@dataclass(frozen=True)
class LawParams:
    """Parameter vector of one family plus its per-parameter box.

    ``values`` must lie inside (or on) ``[lower, upper]``; exponents and
    scale coefficients must be positive, except the irreducible-loss
    offset ``E`` which may be zero.
    """

    kind: LawKind
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        self._validate()

    def _validate(self):
        names = PARAM_NAMES[self.kind]
        p = len(names)
        for label, vec in ("values", self.values), ("lower", self.lower), ("upper", self.upper):
            if vec.shape != (p,):
                raise DomainError(
                    f"{self.kind.value} expects {p} parameters, got {label} of shape {vec.shape}"
                )
        if not np.all(np.isfinite(self.values)):
            raise DomainError("parameter values must be finite")
        if np.any(self.lower > self.upper):
            raise DomainError("lower bounds exceed upper bounds")
        if np.any(self.values < self.lower) or np.any(self.values > self.upper):
            bad = [
                f"{names[j]}={self.values[j]!r} not in [{self.lower[j]!r}, {self.upper[j]!r}]"
                for j in range(p)
                if not (self.lower[j] <= self.values[j] <= self.upper[j])
            ]
            raise DomainError("parameters outside bounds: " + "; ".join(bad))
        for j, name in enumerate(names):
            v = self.values[j]
            if name == "E":
                if v < 0:
                    raise DomainError("E must be nonnegative")
            elif v <= 0:
                raise DomainError(f"{name} must be positive, got {v!r}")

    @classmethod
    def make(cls, kind: LawKind, values, lower=None, upper=None) -> "LawParams":
        lo, hi = default_bounds(kind)
        if lower is not None:
            lo = np.asarray(lower, dtype=float)
        if upper is not None:
            hi = np.asarray(upper, dtype=float)
        return cls(kind, np.asarray(values, dtype=float), lo, hi)

    @classmethod
    def from_named(cls, kind: LawKind, **values: float) -> "LawParams":
        names = PARAM_NAMES[kind]
        missing = set(names) - set(values)
        extra = set(values) - set(names)
        if missing or extra:
            raise DomainError(
                f"{kind.value} takes parameters {names}; "
                f"missing {sorted(missing)}, unknown {sorted(extra)}"
            )
        return cls.make(kind, [values[name] for name in names])

    def named(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(PARAM_NAMES[self.kind], self.values)}

    def get(self, name: str) -> float:
        return float(self.values[PARAM_NAMES[self.kind].index(name)])

    def with_values(self, values) -> "LawParams":
        return LawParams(self.kind, np.asarray(values, dtype=float), self.lower, self.upper)

    @property
    def size(self) -> int:
        return len(self.values)


class EffectiveSizes(NamedTuple):
    """Repetition-adjusted effective token and parameter counts."""

    d_eff: float
    n_eff: float


class ExponentGap(NamedTuple):
    """Signed law-specific exponent gap and its magnitude."""

    signed: float
    magnitude: float


def _pow(x, e):
    """x**e via exp(e*log x); raises on float64 overflow."""
    z = e * np.log(x)
    if np.any(z > _MAX_EXP):
        raise OverflowError("power outside representable range")
    return np.exp(z)


def _pow_ratio(num, den, e):
    """(num/den)**e evaluated in log space to dodge ratio overflow."""
    z = e * (np.log(num) - np.log(den))
    if np.any(z > _MAX_EXP):
        raise OverflowError("power outside representable range")
    return np.exp(z)


def _check_point(n, d):
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    if not (np.all(np.isfinite(n)) and np.all(np.isfinite(d))):
        raise DomainError("n and d must be finite")
    if np.any(n <= 0) or np.any(d <= 0):
        raise DomainError("n and d must be positive")
    return n, d


def _saturating_size(count, unique, rstar):
    """Effective size under repetition with exponential saturation.

    Returns (effective, base, excess_ratio) where base = min(unique, count)
    and excess_ratio = count/base - 1.
    """
    base = np.minimum(unique, count)
    excess = count / base - 1.0
    eff = base * (1.0 + rstar * (-np.expm1(-excess / rstar)))
    return eff, base, excess


def effective_sizes(
    params: LawParams,
    n: float,
    d: float,
    unique_tokens: float,
    unique_param_budget: float,
) -> EffectiveSizes:
    """Repetition-adjusted sizes for the repeated-data family.

    Tokens beyond the unique supply ``unique_tokens`` (and parameters
    beyond ``unique_param_budget``) contribute with exponentially
    saturating value governed by the half-life parameters.  With no
    repetition the effective sizes equal the raw ones exactly.
    """
    if params.kind is not LawKind.REPEATED_DATA:
        raise UnsupportedVariantError("effective sizes are defined for the repeated-data family")
    n, d = _check_point(n, d)
    if unique_tokens <= 0 or unique_param_budget <= 0:
        raise DomainError("unique token and parameter budgets must be positive")
    v = params.named()
    d_eff, _, _ = _saturating_size(d, unique_tokens, v["rstar_d"])
    n_eff, _, _ = _saturating_size(n, unique_param_budget, v["rstar_n"])
    return EffectiveSizes(float(d_eff), float(n_eff))


def _effective_arrays(params: LawParams, n, d, unique_tokens, unique_params):
    v = params.named()
    if unique_tokens is None:
        d_eff, d_base, d_excess = d, d, np.zeros_like(d)
    else:
        d_eff, d_base, d_excess = _saturating_size(d, float(unique_tokens), v["rstar_d"])
    if unique_params is None:
        n_eff, n_base, n_excess = n, n, np.zeros_like(n)
    else:
        n_eff, n_base, n_excess = _saturating_size(n, float(unique_params), v["rstar_n"])
    return d_eff, d_base, d_excess, n_eff, n_base, n_excess


def evaluate(
    params: LawParams,
    n,
    d,
    *,
    unique_tokens: float | None = None,
    unique_params: float | None = None,
):
    """Predicted loss at (n, d); scalars in, scalar out; arrays broadcast.

    ``unique_tokens``/``unique_params`` only affect the repeated-data
    family; omitted they default to the raw counts, i.e. no repetition.
    """
    n, d = _check_point(n, d)
    scalar = n.ndim == 0 and d.ndim == 0
    n, d = np.broadcast_arrays(np.atleast_1d(n), np.atleast_1d(d))
    v = params.named()
    kind = params.kind

    if kind is LawKind.CHINCHILLA:
        out = v["A"] * _pow(n, -v["alpha"]) + v["B"] * _pow(d, -v["beta"]) + v["E"]
    elif kind is LawKind.REPEATED_DATA:
        d_eff, _, _, n_eff, _, _ = _effective_arrays(params, n, d, unique_tokens, unique_params)
        out = v["A"] * _pow(n_eff, -v["alpha"]) + v["B"] * _pow(d_eff, -v["beta"]) + v["E"]
    elif kind is LawKind.KAPLAN_ADDITIVE:
        out = _pow_ratio(v["n_c"], n, v["alpha_n"]) + _pow_ratio(v["d_c"], d, v["alpha_d"])
    elif kind is LawKind.DROPPO_ELIBOL:
        core = (
            _pow(v["l_inf"], 1.0 / v["alpha"])
            + _pow_ratio(v["n_c"], n, v["alpha_n"])
            + _pow_ratio(v["d_c"], d, v["alpha_d"])
        )
        out = _pow(core, v["alpha"])
    elif kind is LawKind.REDUCED_CHINCHILLA:
        out = v["psi"] * _pow(n, -v["alpha"]) + v["E"]
    elif kind is LawKind.INTERACTION:
        out = (
            v["A"] * _pow(n, -v["alpha"])
            + v["B"] * _pow(d, -v["beta"])
            + v["F"] * _pow(n, -v["gamma_n"]) * _pow(d, -v["gamma_d"])
            + v["E"]
        )
    else:  # pragma: no cover
        raise UnsupportedVariantError(kind)
    return float(out[0]) if scalar else out


def sensitivities(
    params: LawParams,
    n,
    d,
    *,
    unique_tokens: float | None = None,
    unique_params: float | None = None,
) -> np.ndarray:
    """Model sensitivities dL/dtheta_j, shape (m, p)."""
    n, d = _check_point(n, d)
    n, d = np.broadcast_arrays(np.atleast_1d(n), np.atleast_1d(d))
    v = params.named()
    kind = params.kind
    m = n.shape[0]
    cols: list[np.ndarray]

    if kind is LawKind.CHINCHILLA:
        na = _pow(n, -v["alpha"])
        db = _pow(d, -v["beta"])
        cols = [
            na,
            db,
            np.ones(m),
            -v["A"] * na * np.log(n),
            -v["B"] * db * np.log(d),
        ]
    elif kind is LawKind.REPEATED_DATA:
        d_eff, d_base, d_excess, n_eff, n_base, n_excess = _effective_arrays(
            params, n, d, unique_tokens, unique_params
        )
        na = _pow(n_eff, -v["alpha"])
        db = _pow(d_eff, -v["beta"])
        # d(eff)/d(rstar) = base * ((1 - e^-x) - x e^-x), x = excess/rstar
        xd = d_excess / v["rstar_d"]
        xn = n_excess / v["rstar_n"]
        d_eff_grad = d_base * (-np.expm1(-xd) - xd * np.exp(-xd))
        n_eff_grad = n_base * (-np.expm1(-xn) - xn * np.exp(-xn))
        cols = [
            na,
            db,
            np.ones(m),
            -v["A"] * na * np.log(n_eff),
            -v["B"] * db * np.log(d_eff),
            -v["B"] * v["beta"] * _pow(d_eff, -v["beta"] - 1.0) * d_eff_grad,
            -v["A"] * v["alpha"] * _pow(n_eff, -v["alpha"] - 1.0) * n_eff_grad,
        ]
    elif kind is LawKind.KAPLAN_ADDITIVE:
        nterm = _pow_ratio(v["n_c"], n, v["alpha_n"])
        dterm = _pow_ratio(v["d_c"], d, v["alpha_d"])
        cols = [
            v["alpha_n"] / v["n_c"] * nterm,
            v["alpha_d"] / v["d_c"] * dterm,
            nterm * (np.log(v["n_c"]) - np.log(n)),
            dterm * (np.log(v["d_c"]) - np.log(d)),
        ]
    elif kind is LawKind.DROPPO_ELIBOL:
        alpha = v["alpha"]
        floor = _pow(v["l_inf"], 1.0 / alpha)
        nterm = _pow_ratio(v["n_c"], n, v["alpha_n"])
        dterm = _pow_ratio(v["d_c"], d, v["alpha_d"])
        core = floor + nterm + dterm
        outer = alpha * _pow(core, alpha - 1.0)
        cols = [
            _pow(core, alpha - 1.0) * _pow(v["l_inf"], 1.0 / alpha - 1.0),
            outer * v["alpha_n"] / v["n_c"] * nterm,
            outer * v["alpha_d"] / v["d_c"] * dterm,
            outer * nterm * (np.log(v["n_c"]) - np.log(n)),
            outer * dterm * (np.log(v["d_c"]) - np.log(d)),
            _pow(core, alpha) * np.log(core)
            - _pow(core, alpha - 1.0) * floor * np.log(v["l_inf"]) / alpha,
        ]
    elif kind is LawKind.REDUCED_CHINCHILLA:
        na = _pow(n, -v["alpha"])
        cols = [na, -v["psi"] * na * np.log(n), np.ones(m)]
    elif kind is LawKind.INTERACTION:
        na = _pow(n, -v["alpha"])
        db = _pow(d, -v["beta"])
        cross = _pow(n, -v["gamma_n"]) * _pow(d, -v["gamma_d"])
        cols = [
            na,
            db,
            cross,
            np.ones(m),
            -v["A"] * na * np.log(n),
            -v["B"] * db * np.log(d),
            -v["F"] * cross * np.log(n),
            -v["F"] * cross * np.log(d),
        ]
    else:  # pragma: no cover
        raise UnsupportedVariantError(kind)
    return np.column_stack(cols)


def jacobian(
    params: LawParams,
    n,
    d,
    *,
    unique_tokens: float | None = None,
    unique_params: float | None = None,
) -> np.ndarray:
    """Residual Jacobian dr/dtheta for r = observed - predicted, shape (m, p)."""
    return -sensitivities(
        params, n, d, unique_tokens=unique_tokens, unique_params=unique_params
    )


def jacobian_row(
    params: LawParams,
    n: float,
    d: float,
    *,
    unique_tokens: float | None = None,
    unique_params: float | None = None,
) -> np.ndarray:
    """Single-point residual-Jacobian row, shape (p,)."""
    return jacobian(
        params, n, d, unique_tokens=unique_tokens, unique_params=unique_params
    )[0]


def reduce_on_ray(params: LawParams, k: float) -> LawParams:
    """Collapse a Chinchilla vector onto the ray d = k*n.

    The two power-law terms merge into one coefficient
    ``psi = A + B * k**(-alpha)``; the collapse reproduces the full model
    along the ray exactly only when the two exponents coincide.
    """
    if params.kind is not LawKind.CHINCHILLA:
        raise UnsupportedVariantError("ray reduction is defined for the Chinchilla family")
    if not (np.isfinite(k) and k > 0):
        raise DomainError("ray ratio k must be positive")
    v = params.named()
    psi = v["A"] + v["B"] * float(_pow(np.asarray(k, dtype=float), -v["alpha"]))
    return LawParams.make(LawKind.REDUCED_CHINCHILLA, [psi, v["alpha"], v["E"]])


def exponent_gap(params: LawParams) -> ExponentGap:
    """Signed and absolute gap between the model- and data-side exponents."""
    v = params.named()
    kind = params.kind
    if kind in (LawKind.CHINCHILLA, LawKind.REPEATED_DATA):
        signed = v["alpha"] - v["beta"]
    elif kind is LawKind.KAPLAN_ADDITIVE:
        signed = v["alpha_n"] - v["alpha_d"]
    elif kind is LawKind.DROPPO_ELIBOL:
        signed = (v["alpha_n"] - v["alpha_d"]) / v["alpha"]
    elif kind is LawKind.INTERACTION:
        s = v["gamma_n"] + v["gamma_d"]
        gaps = (v["alpha"] - v["beta"], v["alpha"] - s, s - v["beta"])
        signed = min(gaps, key=abs)
    else:
        raise UnsupportedVariantError(
            "the reduced family has a single power-law term and no exponent gap"
        )
    return ExponentGap(float(signed), abs(float(signed)))


def model_side_exponent(params: LawParams) -> float:
    """Exponent on the model-size column of the collinear scale pair."""
    v = params.named()
    kind = params.kind
    if kind in (LawKind.CHINCHILLA, LawKind.REPEATED_DATA, LawKind.INTERACTION):
        return v["alpha"]
    if kind is LawKind.KAPLAN_ADDITIVE:
        return v["alpha_n"]
    if kind is LawKind.DROPPO_ELIBOL:
        return v["alpha_n"] / v["alpha"]
    if kind is LawKind.REDUCED_CHINCHILLA:
        return v["alpha"]
    raise UnsupportedVariantError(kind)  # pragma: no cover


def data_side_exponent(params: LawParams) -> float:
    """Exponent governing the token-count column of the collinear pair."""
    v = params.named()
    kind = params.kind
    if kind in (LawKind.CHINCHILLA, LawKind.REPEATED_DATA, LawKind.INTERACTION):
        return v["beta"]
    if kind is LawKind.KAPLAN_ADDITIVE:
        return v["alpha_d"]
    if kind is LawKind.DROPPO_ELIBOL:
        return v["alpha_d"] / v["alpha"]
    raise UnsupportedVariantError(
        "the reduced family has no token-count term"
    )


def kaplan_compositional(params: LawParams) -> dict[str, float]:
    """Map additive Kaplan parameters onto the compositional convention.

    The additive form is what the fitter estimates; this conversion
    reports the equivalent critical scales and exponents of the nested
    ``[(n_c/n)**(a_n/a_d) + d_c/d]**a_d`` convention.
    """
    if params.kind is not LawKind.KAPLAN_ADDITIVE:
        raise UnsupportedVariantError("conversion is defined for the additive Kaplan family")
    v = params.named()
    return {
        "n_c": v["n_c"] ** (v["alpha_n"] / v["alpha_d"]),
        "d_c": v["d_c"] ** v["alpha_d"],
        "inner_exponent": v["alpha_n"] / v["alpha_d"],
        "outer_exponent": v["alpha_d"],
    }
