"""Gram diagnostics: eigensolver, determinant identity, condition numbers, CIs."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scalefit import conditioning as cond, dataset, fitter, laws
from scalefit.errors import DomainError, NonSymmetricInputError
from scalefit.laws import LawKind, LawParams

REF = LawParams.from_named(
    LawKind.CHINCHILLA, A=406.4, B=410.7, E=1.69, alpha=0.34, beta=0.28
)
FIVE_SIZES = np.array([1e7, 3e7, 1e8, 3e8, 1e9])


def ray_jacobian(params, sizes, k):
    sizes = np.asarray(sizes, dtype=float)
    return laws.jacobian(params, sizes, k * sizes)


class TestGramMatrix:
    def test_identity_jacobian(self):
        assert np.array_equal(cond.gram_matrix(np.eye(4)), np.eye(4))

    def test_single_column(self):
        f = np.array([[1.0], [2.0], [2.0]])
        assert np.allclose(cond.gram_matrix(f), [[9.0]], rtol=1e-15)

    def test_reference_ray_design(self):
        """Five log-spaced sizes on one ray at the representative parameters.

        Frozen from direct construction of the Gram and its closed-form
        2x2 block: the scale-pair condition number tracks the inverse
        squared exponent gap (1/0.06^2 = 278) up to a small design factor,
        while the raw full-matrix ratio is dominated by column-scale
        disparity and lands many orders higher.
        """
        J = ray_jacobian(REF, FIVE_SIZES, 20.0)
        G = cond.gram_matrix(J)
        pair = cond.kappa_scale_pair(G, LawKind.CHINCHILLA)
        assert pair == pytest.approx(775.9453472438837, rel=1e-9)
        assert 1.0 <= pair / (0.06 ** -2) <= 5.0
        diag = cond.diagnose(J, REF)
        assert diag.kappa_full > 1e10
        assert diag.epsilon == pytest.approx(0.06)
        # pair block eigenvalue ratio is at the predicted order
        assert 1e-4 < 1.0 / pair < 1e-2


class TestEigendecomposeSmall:
    def test_diagonal(self):
        values, vectors = cond.eigendecompose_small(np.diag([4.0, 1.0]))
        assert values == pytest.approx([1.0, 4.0])
        assert abs(vectors[1, 0]) == pytest.approx(1.0)
        assert abs(vectors[0, 1]) == pytest.approx(1.0)

    def test_textbook_two_by_two(self):
        values, _ = cond.eigendecompose_small(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert values == pytest.approx([1.0, 3.0])

    def test_reconstruction_of_random_symmetric(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            M = rng.normal(size=(6, 6))
            A = (M + M.T) / 2
            values, vectors = cond.eigendecompose_small(A)
            rebuilt = vectors @ np.diag(values) @ vectors.T
            assert np.linalg.norm(rebuilt - A) < 1e-9
            assert np.linalg.norm(vectors.T @ vectors - np.eye(6)) < 1e-10

    def test_matches_reference_solver(self):
        rng = np.random.default_rng(23)
        M = rng.normal(size=(8, 8))
        A = M @ M.T
        values, _ = cond.eigendecompose_small(A)
        assert values == pytest.approx(np.linalg.eigvalsh(A), rel=1e-8, abs=1e-8)

    def test_eigenpair_residual(self):
        rng = np.random.default_rng(29)
        M = rng.normal(size=(7, 7))
        A = (M + M.T) / 2
        values, vectors = cond.eigendecompose_small(A)
        norm = np.linalg.norm(A)
        for j in range(7):
            assert np.linalg.norm(A @ vectors[:, j] - values[j] * vectors[:, j]) < 1e-8 * norm

    def test_rejects_non_symmetric(self):
        with pytest.raises(NonSymmetricInputError):
            cond.eigendecompose_small(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_large_matrices(self):
        with pytest.raises(DomainError):
            cond.eigendecompose_small(np.eye(17))


class TestCsGapDeterminant:
    def test_hand_case(self):
        lhs, rhs = cond.cs_gap_determinant(np.array([1.0, 1.0]), 1.0, np.array([1.0, 2.0]))
        assert lhs == pytest.approx(1.0, rel=1e-12)
        assert rhs == pytest.approx(1.0, rel=1e-12)

    def test_constant_h_is_exact_proportionality(self):
        f = np.array([0.3, 1.7, 2.2])
        lhs, rhs = cond.cs_gap_determinant(f, 2.5, np.full(3, 4.0))
        scale = (2.5 * float(f @ f)) ** 2
        assert abs(rhs) < 1e-25 * scale
        assert abs(lhs) < 1e-12 * scale

    @given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=120, deadline=None)
    def test_identity_for_random_inputs(self, m, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=m)
        if not np.any(f != 0.0):
            f[0] = 1.0
        c = float(rng.uniform(0.1, 10.0)) * (1 if rng.uniform() < 0.5 else -1)
        h = np.exp(rng.uniform(-2, 2, size=m))
        lhs, rhs = cond.cs_gap_determinant(f, c, h)
        g = c * f * h
        # the subtraction inside the determinant carries rounding noise
        # at the scale of the products it cancels
        floor = 1e-13 * float(f @ f) * float(g @ g)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=floor)

    def test_small_gap_variance_matches_log_variance(self):
        sizes = np.logspace(7, 9, 10)
        prof = cond.power_sum_profile(sizes, 0.34)
        for eps in (0.05, 0.02, 0.005):
            lhs = cond.weighted_variance(sizes ** eps, prof.weights)
            approx = eps * eps * prof.logn_variance
            bound = 5 * eps ** 3 * np.max(np.abs(np.log(sizes))) ** 3
            assert abs(lhs - approx) <= bound


class TestPowerSums:
    def test_weights_sum_to_one(self):
        prof = cond.power_sum_profile(np.logspace(6, 10, 9), 0.41)
        assert float(np.sum(prof.weights)) == pytest.approx(1.0, abs=1e-12)

    def test_log_variance_zero_iff_single_size(self):
        assert cond.power_sum_profile([1e8, 1e8, 1e8], 0.3).logn_variance == pytest.approx(0.0, abs=1e-12)
        assert cond.power_sum_profile([1e7, 1e9], 0.3).logn_variance > 0.0

    def test_moment_sums(self):
        sizes = np.array([1e7, 1e8])
        prof = cond.power_sum_profile(sizes, 0.5)
        assert prof.phi1 == pytest.approx(np.sum(sizes ** -0.5), rel=1e-12)
        assert prof.phi2 == pytest.approx(np.sum(sizes ** -1.0), rel=1e-12)
        assert prof.t1 == pytest.approx(np.sum(sizes ** -0.5 * np.log(sizes)), rel=1e-12)
        assert prof.t2 == pytest.approx(np.sum(sizes ** -1.0 * np.log(sizes)), rel=1e-12)
        assert prof.u2 == pytest.approx(np.sum(sizes ** -1.0 * np.log(sizes) ** 2), rel=1e-12)


class TestKappaScalePair:
    def test_exactly_proportional_columns_give_infinity(self):
        col = np.array([1.0, 2.0, 3.0])
        J = np.column_stack([col, 2.0 * col])
        assert cond.kappa_scale_pair(cond.gram_matrix(J), LawKind.CHINCHILLA) == math.inf

    def test_gap_sweep_slope_is_inverse_square(self):
        """Sweeping the gap over {0.1, 0.05, 0.025, 0.0125} on a fixed
        ten-size ray: the regression slope of log(kappa) on log(gap)
        sits at -2 (individual halvings wobble because the data-side
        exponent moves with the gap, but the four-point slope is clean).
        """
        sizes = np.logspace(7, 9, 10)
        gaps = [0.1, 0.05, 0.025, 0.0125]
        kappas = []
        for eps in gaps:
            p = LawParams.from_named(
                LawKind.CHINCHILLA, A=406.4, B=410.7, E=1.69, alpha=0.34, beta=0.34 - eps
            )
            kappas.append(
                cond.kappa_scale_pair(
                    cond.gram_matrix(ray_jacobian(p, sizes, 20.0)), LawKind.CHINCHILLA
                )
            )
        x = np.log(gaps)
        y = np.log(kappas)
        slope = float(np.polyfit(x, y, 1)[0])
        assert -2.15 <= slope <= -1.85

    def test_closed_form_determinant(self):
        J = ray_jacobian(REF, FIVE_SIZES, 20.0)
        sub = cond.gram_matrix(J)[:2, :2]
        det = sub[0, 0] * sub[1, 1] - sub[0, 1] ** 2
        prof = cond.power_sum_profile(FIVE_SIZES, 0.34)
        formula = (
            20.0 ** (-2 * 0.28)
            * prof.phi2 ** 2
            * cond.weighted_variance(FIVE_SIZES ** (0.34 - 0.28), prof.weights)
        )
        assert det == pytest.approx(formula, rel=1e-8)

    def test_interlacing_against_full_matrix(self):
        rng = np.random.default_rng(31)
        sizes = np.logspace(7, 9, 8)
        for _ in range(10):
            p = LawParams.from_named(
                LawKind.CHINCHILLA,
                A=float(rng.uniform(1, 500)),
                B=float(rng.uniform(1, 500)),
                E=float(rng.uniform(0.5, 5)),
                alpha=float(rng.uniform(0.05, 0.6)),
                beta=float(rng.uniform(0.05, 0.6)),
            )
            J = ray_jacobian(p, sizes, float(rng.uniform(2, 100)))
            diag = cond.diagnose(J, p)
            assert diag.kappa_scale_pair <= diag.kappa_full * (1 + 1e-8)

    def test_replication_leaves_pair_kappa_unchanged(self):
        J = ray_jacobian(REF, FIVE_SIZES, 20.0)
        J2 = np.vstack([J, J])
        k1 = cond.kappa_scale_pair(cond.gram_matrix(J), LawKind.CHINCHILLA)
        k2 = cond.kappa_scale_pair(cond.gram_matrix(J2), LawKind.CHINCHILLA)
        assert k2 == pytest.approx(k1, rel=1e-10)

    def test_interaction_uses_three_by_three_block(self):
        p = LawParams.from_named(
            LawKind.INTERACTION,
            A=406.4, B=410.7, F=150.0, E=1.69,
            alpha=0.34, beta=0.28, gamma_n=0.2, gamma_d=0.2,
        )
        J = ray_jacobian(p, FIVE_SIZES, 20.0)
        value = cond.kappa_scale_pair(cond.gram_matrix(J), LawKind.INTERACTION)
        assert value > 1.0 and math.isfinite(value)


class TestSloppyStructure:
    def test_padding_preserves_rayleigh_quotient(self):
        J = ray_jacobian(REF, FIVE_SIZES, 20.0)
        G = cond.gram_matrix(J)
        sub = G[:2, :2]
        values, vectors = cond.eigendecompose_small(sub)
        padded = np.zeros(5)
        padded[:2] = vectors[:, 0]
        quotient = float(padded @ G @ padded)
        assert quotient == pytest.approx(values[0], rel=1e-10)

    def test_sloppy_vector_is_unit_norm(self):
        J = ray_jacobian(REF, FIVE_SIZES, 20.0)
        diag = cond.diagnose(J, REF)
        assert np.linalg.norm(diag.sloppy_vector) == pytest.approx(1.0, abs=1e-12)


class TestCIReport:
    def test_orthonormal_columns_give_plain_interval(self):
        widths, unreliable, _ = cond.ci_half_widths(np.eye(6), 1.0)
        assert widths == pytest.approx(np.full(6, 1.96), rel=1e-9)
        assert not unreliable

    def fit_pair(self, sigma=0.002, sizes=None):
        sizes = FIVE_SIZES if sizes is None else sizes
        ds = dataset.generate_collinear(REF, sizes, [20.0], dataset.NoiseModel(sigma, 3))
        cfg = fitter.FitConfig(restarts=12)
        full = fitter.fit(ds, LawKind.CHINCHILLA, cfg)
        red = fitter.profile_reduced_fit(ds, cfg)
        return full, red, sigma

    def test_single_ray_inflation_at_reference_gap(self):
        """Coefficient-interval inflation at gap 0.06, frozen from the
        analytic Jacobians at truth: the interval on the capacity
        coefficient is ~27x the reduced model's combined-coefficient
        interval (inverse-gap law at this design's prefactor)."""
        sizes = np.logspace(7, 9, 10)
        t = LawParams.from_named(LawKind.CHINCHILLA, A=2.0, B=2.0, E=1.69, alpha=0.34, beta=0.28)
        J = laws.jacobian(t, sizes, 20.0 * sizes)
        red = laws.reduce_on_ray(t, 20.0)
        Jr = laws.jacobian(red, sizes, 20.0 * sizes)
        hw, _, _ = cond.ci_half_widths(J[:, [0, 1, 2]], 0.01)
        hwr, _, _ = cond.ci_half_widths(Jr[:, [0, 2]], 0.01)
        ratio = hw[0] / hwr[0]
        assert ratio == pytest.approx(27.354490505950384, rel=1e-6)
        assert ratio > 17.0

    def test_saturating_critical_size_relative_inflation(self):
        """At gap 0.019 the relative (scale-free) interval on the
        critical-size coefficient inflates by >53x over the combined
        coefficient; frozen from analytic Jacobians."""
        sizes = np.logspace(7, 9, 10)
        tk = LawParams.from_named(
            LawKind.KAPLAN_ADDITIVE, n_c=8.8e13, d_c=5.4e13, alpha_n=0.076, alpha_d=0.095
        )
        Jk = laws.jacobian(tk, sizes, 20.0 * sizes)
        hwk, _, _ = cond.ci_half_widths(Jk[:, [0, 1]], 0.01)
        psi_equiv = 8.8e13 ** 0.076 + 5.4e13 ** 0.095 * 20.0 ** -0.095
        red = LawParams.make(
            LawKind.REDUCED_CHINCHILLA, [psi_equiv, 0.076, 1e-9],
            lower=[1e-2, 0.01, 0.0], upper=[1e12, 2.0, 10.0],
        )
        Jr = laws.jacobian(red, sizes, 20.0 * sizes)
        hwr, _, _ = cond.ci_half_widths(Jr[:, [0, 2]], 0.01)
        relative = (hwk[0] / 8.8e13) / (hwr[0] / psi_equiv)
        assert relative == pytest.approx(123.65908894951403, rel=1e-6)
        assert relative > 53.0

    def test_report_inflation_at_least_one_on_single_ray(self):
        full, red, sigma = self.fit_pair()
        report = cond.ci_report(full, sigma, red)
        assert report.inflation_ratio is not None
        assert report.inflation_ratio >= 1.0 - 1e-6

    def test_half_widths_nonnegative_and_named(self):
        full, red, sigma = self.fit_pair()
        report = cond.ci_report(full, sigma, red)
        assert np.all(report.half_widths >= 0)
        assert report.param_names == laws.PARAM_NAMES[LawKind.CHINCHILLA]

    def test_sigma_must_be_positive(self):
        with pytest.raises(DomainError):
            cond.ci_half_widths(np.eye(3), 0.0)


class TestSloppyLeverage:
    def test_on_ray_holdout_has_zero_leverage(self):
        hold = dataset.generate_collinear(REF, FIVE_SIZES, [20.0], dataset.NoiseModel(0.0, 0))
        assert cond.sloppy_leverage(hold, 20.0, 0.34, 0.28, 1.0) == 0.0

    def test_off_ray_point_gives_positive_leverage(self):
        hold = dataset.generate_collinear(REF, FIVE_SIZES, [50.0], dataset.NoiseModel(0.0, 0))
        assert cond.sloppy_leverage(hold, 20.0, 0.34, 0.28, 1.0) > 0.0

    def test_two_point_hand_case(self):
        obs = (
            dataset.Observation(1.0, 1.0, 1.0),
            dataset.Observation(1.0, 2.0, 1.0),
        )
        hold = dataset.ExperimentDataset(obs)
        value = cond.sloppy_leverage(hold, 1.0, 0.0, 1.0, 2.0)
        assert value == pytest.approx(0.0625, rel=1e-12)
