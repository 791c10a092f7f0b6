from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.stats import qmc

from censored_dm.dm_core import (
    DmParams,
    FailureRegion,
    check_moments_constraint,
    dirichlet_density,
    dm_density,
    exponent_density,
    exponent_measure,
    log_dirichlet_density,
    log_exponent_density,
    marginalize,
    sample_angle,
)
from censored_dm.errors import DomainError

from conftest import sim_psi

# mpmath, 200-bit: Gamma(70) / prod Gamma(70 mu_j) * prod mu_j^(70 mu_j - 1)
DIRICHLET_AT_CENTER = 1355.522213536311520817615
# mpmath, 200-bit, term by term over the three components at x = (1, 1, 1, 1)
EXPONENT_DENSITY_ONES = 1.782278092287767632045607e-07


def random_psi(rng, d, k):
    """Valid mixture built by solving for the last center (moments constraint)."""
    while True:
        p = rng.dirichlet(np.ones(k))
        mu = rng.dirichlet(np.full(d, 3.0), size=k)
        last = (np.full(d, 1.0 / d) - p[:-1] @ mu[:-1]) / p[-1]
        if np.all(last > 0.02):
            mu[-1] = last
            nu = rng.uniform(2.0, 30.0, size=k)
            return DmParams(p, mu / mu.sum(axis=1, keepdims=True), nu)


def uniform_simplex(rng, n, d):
    return rng.dirichlet(np.ones(d), size=n)


class TestDirichletDensity:
    def test_uniform_two_dim(self):
        w = np.array([[0.3, 0.7], [0.5, 0.5], [0.01, 0.99]])
        np.testing.assert_allclose(dirichlet_density(w, 2.0, [0.5, 0.5]), 1.0, rtol=1e-14)

    def test_symmetric_three_dim(self, rng):
        w = uniform_simplex(rng, 20, 3)
        np.testing.assert_allclose(dirichlet_density(w, 3.0, np.full(3, 1 / 3)), 2.0, rtol=1e-13)

    def test_high_precision_value(self):
        mu = np.array([0.1, 0.1, 0.1, 0.7])
        assert dirichlet_density(mu, 70.0, mu) == pytest.approx(DIRICHLET_AT_CENTER, rel=1e-12)

    def test_non_simplex_rejected(self):
        with pytest.raises(DomainError):
            dirichlet_density([0.3, 0.3], 2.0, [0.5, 0.5])
        with pytest.raises(DomainError):
            dirichlet_density([-0.1, 1.1], 2.0, [0.5, 0.5])

    def test_boundary_flags(self):
        # nu * mu_1 = 0.5 < 1: unbounded at w_1 = 0
        assert np.isposinf(log_dirichlet_density([0.0, 1.0], 1.0, [0.5, 0.5]))
        # all exponents positive: density vanishes on the boundary
        assert dirichlet_density([0.0, 1.0], 10.0, [0.5, 0.5]) == 0.0


class TestMixture:
    def test_single_component_matches_dirichlet(self, rng):
        psi = DmParams.single(3, 7.0)
        w = uniform_simplex(rng, 30, 3)
        np.testing.assert_allclose(dm_density(w, psi), dirichlet_density(w, 7.0, psi.centers[0]), rtol=1e-13)

    def test_dimension_mismatch(self, psi4):
        with pytest.raises(DomainError):
            dm_density([0.5, 0.5], psi4)

    def test_integrates_to_one_qmc(self, psi4):
        # 2^20 scrambled Sobol nodes mapped to the simplex by sorted spacings
        u = qmc.Sobol(3, scramble=True, seed=11).random_base2(20)
        s = np.sort(u, axis=1)
        w = np.diff(np.column_stack([np.zeros(len(s)), s, np.ones(len(s))]), axis=1)
        integral = dm_density(w, psi4).mean() / 6.0  # simplex volume 1/3!
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_first_moment(self, psi4, rng):
        w = sample_angle(psi4, rng, 1_000_000)
        assert w[:, 0].mean() == pytest.approx(0.25, abs=1e-3)

    def test_invalid_params(self):
        with pytest.raises(DomainError):
            DmParams([0.5, 0.6], [[0.5, 0.5], [0.5, 0.5]], [1.0, 1.0])
        with pytest.raises(DomainError):
            DmParams([1.0], [[0.0, 1.0]], [1.0])
        with pytest.raises(DomainError):
            DmParams([1.0], [[0.5, 0.5]], [0.0])


class TestMomentsConstraint:
    def test_simulation_psi(self, psi4):
        assert check_moments_constraint(psi4)
        assert psi4.moment_residual() < 1e-12

    def test_rational_rows(self):
        p = [Fraction(1, 4), Fraction(1, 4), Fraction(1, 2)]
        mu = [[Fraction(x, 10) for x in row] for row in ([1, 1, 1, 7], [7, 1, 1, 1], [1, 4, 4, 1])]
        for j in range(4):
            assert sum(p[m] * mu[m][j] for m in range(3)) == Fraction(1, 4)

    def test_center_single(self):
        assert check_moments_constraint(DmParams.single(5, 2.0))

    def test_perturbed_weights(self, psi4):
        bad = DmParams([0.3, 0.2, 0.5], psi4.centers, psi4.shapes)
        # row 1: 0.3*0.1 + 0.2*0.7 + 0.5*0.1 = 0.22
        assert bad.weights @ bad.centers[:, 0] == pytest.approx(0.22)
        assert not check_moments_constraint(bad)


class TestExponentDensity:
    def test_high_precision_value(self, psi4):
        assert exponent_density(np.ones(4), psi4) == pytest.approx(EXPONENT_DENSITY_ONES, rel=1e-11)

    def test_unit_radius(self, psi4, rng):
        w = sample_angle(psi4, rng, 50)
        w = w / w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(exponent_density(w, psi4), 4 * dm_density(w, psi4), rtol=1e-10)

    def test_homogeneity_doubling(self, psi4, rng):
        x = rng.uniform(0.5, 5.0, size=(20, 4))
        diff = log_exponent_density(2 * x, psi4) - log_exponent_density(x, psi4)
        np.testing.assert_allclose(diff, -5 * np.log(2.0), atol=1e-12)

    def test_nonpositive_rejected(self, psi4):
        with pytest.raises(DomainError):
            exponent_density([1.0, 0.0, 1.0, 1.0], psi4)

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        c=st.floats(1e-3, 1e3),
        d=st.integers(2, 5),
        k=st.integers(1, 4),
    )
    def test_homogeneity_property(self, seed, c, d, k):
        rng = np.random.default_rng(seed)
        psi = random_psi(rng, d, k) if k > 1 else DmParams.single(d, rng.uniform(1, 20))
        x = rng.uniform(0.1, 10.0, size=(5, d))
        lhs = log_exponent_density(c * x, psi)
        rhs = log_exponent_density(x, psi) - (d + 1) * np.log(c)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9, rtol=1e-12)


class TestMarginalize:
    def test_simulation_values(self, psi4):
        m = marginalize(psi4, [3])
        np.testing.assert_allclose(m.shapes, [21.0, 45.0, 72.0], atol=1e-12)
        np.testing.assert_allclose(m.weights, [0.1, 0.3, 0.6], atol=1e-12)
        np.testing.assert_allclose(m.centers[0], [1 / 3] * 3, atol=1e-12)
        assert check_moments_constraint(m)

    def test_quadrature_oracle(self, psi4, rng):
        m = marginalize(psi4, [3])
        w = sample_angle(m, rng, 20)
        for wi in w:
            integral, _ = integrate.quad(
                lambda t: exponent_density(np.append(wi, t), psi4), 0, np.inf, epsabs=0, epsrel=1e-10, limit=200
            )
            # at unit radius the reduced exponent density is 3 * h0(w)
            assert integral == pytest.approx(3 * dm_density(wi, m), rel=1e-3)

    def test_sequential(self, rng):
        for _ in range(5):
            psi = random_psi(rng, 4, 3)
            once = marginalize(psi, [2, 3])
            twice = marginalize(marginalize(psi, [3]), [2])
            np.testing.assert_allclose(once.weights, twice.weights, atol=1e-12)
            np.testing.assert_allclose(once.centers, twice.centers, atol=1e-12)
            np.testing.assert_allclose(once.shapes, twice.shapes, atol=1e-12)

    def test_symmetric(self):
        m = marginalize(DmParams.single(4, 4.0), [3])
        assert m.shapes[0] == pytest.approx(3.0)
        np.testing.assert_allclose(m.centers[0], [1 / 3] * 3)
        assert m.weights[0] == 1.0

    def test_bad_sets(self, psi4):
        for bad in ([], [0, 1, 2, 3], [4]):
            with pytest.raises(DomainError):
                marginalize(psi4, bad)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(3, 6), k=st.integers(2, 4))
    def test_preserves_constraint(self, seed, d, k):
        rng = np.random.default_rng(seed)
        psi = random_psi(rng, d, k)
        drop = rng.choice(d, size=rng.integers(1, d), replace=False)
        m = marginalize(psi, drop)
        assert abs(m.weights.sum() - 1) < 1e-12
        assert check_moments_constraint(m)


class TestExponentMeasure:
    def test_radial_closed_form(self, psi4):
        u = -1 / np.log1p(-0.021)
        val, se = exponent_measure(FailureRegion("radial", r_min=u / 100), psi4)
        assert val == pytest.approx(400 / u, rel=1e-14)
        assert val == pytest.approx(8.4895, abs=1e-3)
        assert se == 0.0

    def test_uniform_h(self, rng):
        psi = DmParams.single(2, 2.0)
        val, se = exponent_measure(FailureRegion("rect_complement", bounds=np.ones(2)), psi, 200_000, rng)
        assert abs(val - 1.5) < 3 * se

    def test_homogeneity_common_numbers(self, psi4, rng):
        w = sample_angle(psi4, rng, 100_000)
        b = np.array([40.0, 50.0, 60.0, 70.0])
        a1, s1 = exponent_measure(FailureRegion("rect_complement", bounds=b), psi4, angles=w)
        a2, s2 = exponent_measure(FailureRegion("rect_complement", bounds=2 * b), psi4, angles=w)
        assert abs(a2 - a1 / 2) <= 1e-12 * a1 + 3 * np.hypot(s1 / 2, s2)

    def test_scale(self, psi4, rng):
        w = sample_angle(psi4, rng, 20_000)
        b = np.full(4, 47.0)
        a1, _ = exponent_measure(FailureRegion("rect_complement", bounds=b), psi4, angles=w)
        a2, _ = exponent_measure(FailureRegion("rect_complement", bounds=b, scale=100.0), psi4, angles=w)
        assert a2 == pytest.approx(100 * a1)

    def test_minimum_samples(self, psi4, rng):
        with pytest.raises(DomainError):
            exponent_measure(FailureRegion("rect_complement", bounds=np.ones(4)), psi4, 100, rng)


class TestSampleAngle:
    def test_mean(self, psi4, rng):
        w = sample_angle(psi4, rng, 1_000_000)
        se = w.std(axis=0) / np.sqrt(len(w))
        assert np.all(np.abs(w.mean(axis=0) - 0.25) < 3 * se)

    def test_uniform_ks(self, rng):
        w = sample_angle(DmParams.single(2, 2.0), rng, 1_000_000)
        assert stats.kstest(w[:, 0], "uniform").statistic < 0.005

    def test_on_simplex(self, psi4, rng):
        w = sample_angle(psi4, rng, 1000)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        single = sample_angle(psi4, rng)
        assert single.shape == (4,)

    def test_occupancy(self, psi4):
        from censored_dm.dm_core import sample_components

        rng = np.random.default_rng(3)
        n = 200_000
        counts = np.bincount(sample_components(psi4.weights, rng, n), minlength=3)
        sd = np.sqrt(n * psi4.weights * (1 - psi4.weights))
        assert np.all(np.abs(counts - n * psi4.weights) < 3 * sd)

    def test_tiny_shapes_do_not_nan(self, rng):
        psi = DmParams.single(3, 1e-3)
        w = sample_angle(psi, rng, 1000)
        assert np.all(np.isfinite(w))
        np.testing.assert_allclose(w.sum(axis=1), 1.0)
