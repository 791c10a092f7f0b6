import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from censored_dm.errors import DomainError
from censored_dm.margins import (
    MarginParams,
    ReturnLevelQuery,
    frechet_transform,
    inverse_frechet_transform,
    jacobian,
    marginal_cdf,
    return_level,
)

# mpmath 200-bit references for xi=0.4, sigma=e^4.8, zeta=0.021, v=300
CDF_ONE_SCALE = 0.99094477584219446524
U_0021 = 47.117278995954331432
INVERSE_AT_100 = 405.77600688208129032  # bisection on T(y) = 100
RETURN_LEVEL_3650 = 1719.5140260838833604  # bisection on F(y) = 1 - 1/3650


def sim_chi(shape=0.4):
    return MarginParams(np.array([4.8, 4.6, 5.9, 5.1]), shape, np.full(4, 0.021), np.array([300.0, 320, 520, 380]))


def random_chi(rng, d=3):
    return MarginParams(
        rng.normal(3, 1, d), rng.uniform(-0.3, 0.8), rng.uniform(0.005, 0.2, d), rng.uniform(-50, 500, d)
    )


class TestCdf:
    def test_at_threshold(self):
        chi = sim_chi()
        for j in range(4):
            assert marginal_cdf(chi.threshold[j], j, chi) == 1 - 0.021

    def test_reference_value(self):
        chi = sim_chi()
        y = 300 + np.exp(4.8)
        assert marginal_cdf(y, 0, chi) == pytest.approx(CDF_ONE_SCALE, rel=1e-14)

    def test_below_threshold_rejected(self):
        with pytest.raises(DomainError):
            marginal_cdf(299.0, 0, sim_chi())

    def test_exponential_limit(self):
        chi0 = sim_chi(0.0)
        small = sim_chi(1e-12)
        y = 300 + np.linspace(0, 800, 9)
        np.testing.assert_allclose(marginal_cdf(y, 0, chi0), marginal_cdf(y, 0, small), rtol=1e-12)
        np.testing.assert_allclose(marginal_cdf(y, 0, chi0), 1 - 0.021 * np.exp(-(y - 300) / np.exp(4.8)))

    def test_negative_shape_endpoint(self):
        chi = sim_chi(-0.5)
        end = 300 + np.exp(4.8) / 0.5
        assert marginal_cdf(end + 10, 0, chi) == 1.0
        assert np.isinf(frechet_transform(end + 10, 0, chi))

    def test_nondecreasing(self, rng):
        chi = random_chi(rng)
        y = chi.threshold[0] + np.sort(rng.exponential(100, 500))
        assert np.all(np.diff(marginal_cdf(y, 0, chi)) >= 0)


class TestTransform:
    def test_threshold_image(self):
        chi = sim_chi()
        assert chi.u[0] == pytest.approx(U_0021, rel=1e-15)
        for j in range(4):
            assert frechet_transform(chi.threshold[j], j, chi) == chi.u[j]

    def test_threshold_image_independent_of_chi(self, rng):
        for _ in range(20):
            chi = random_chi(rng)
            other = MarginParams(rng.normal(3, 1, 3), rng.uniform(-0.3, 0.8), chi.zeta, chi.threshold)
            for j in range(3):
                assert frechet_transform(chi.threshold[j], j, chi) == frechet_transform(chi.threshold[j], j, other)

    def test_monotone(self, rng):
        for _ in range(10):
            chi = random_chi(rng)
            y = chi.threshold[1] + np.sort(rng.exponential(50, 1000))
            if chi.shape < 0:
                y = y[y < chi.threshold[1] - chi.sigma[1] / chi.shape]
            x = frechet_transform(y, 1, chi)
            assert np.all(np.diff(x)[np.diff(y) > 0] > 0)

    def test_distributional(self, rng):
        chi = sim_chi()
        n = 100_000
        # GPD excess sample: Y = v + sigma ((U)^(-xi) - 1) / xi
        u01 = rng.random(n)
        y = 300 + np.exp(4.8) * (u01 ** (-0.4) - 1) / 0.4
        x = frechet_transform(y, 0, chi)
        # unit-Frechet restricted to (u, inf): CDF (exp(-1/x) - F(u)) / (1 - F(u))
        fu = np.exp(-1 / chi.u[0])
        cdf = lambda t: (np.exp(-1 / t) - fu) / (1 - fu)
        assert stats.kstest(x, cdf).statistic < 0.01

    def test_round_trip(self, rng):
        for _ in range(30):
            chi = random_chi(rng)
            y = chi.threshold[2] + rng.exponential(np.exp(chi.log_scale[2]), 50)
            if chi.shape < 0:
                y = np.minimum(y, chi.threshold[2] - 0.9 * chi.sigma[2] / chi.shape)
            back = inverse_frechet_transform(frechet_transform(y, 2, chi), 2, chi)
            np.testing.assert_allclose(back, y, rtol=1e-9)

    def test_inverse_fixed_point(self, rng):
        chi = sim_chi()
        for j in range(4):
            assert inverse_frechet_transform(chi.u[j], j, chi) == chi.threshold[j]

    def test_inverse_reference(self):
        assert inverse_frechet_transform(100.0, 0, sim_chi()) == pytest.approx(INVERSE_AT_100, rel=1e-10)

    def test_inverse_domain(self):
        with pytest.raises(DomainError):
            inverse_frechet_transform(10.0, 0, sim_chi())


class TestJacobian:
    def test_finite_difference(self, rng):
        for _ in range(50):
            chi = random_chi(rng)
            j = int(rng.integers(3))
            y = chi.threshold[j] + chi.sigma[j] * rng.uniform(0.05, 3.0)
            h = 1e-5 * chi.sigma[j]
            fd = (frechet_transform(y + h, j, chi) - frechet_transform(y - h, j, chi)) / (2 * h)
            jac = jacobian(y, j, chi)
            assert abs(jac - fd) / jac < 1e-6

    def test_scale_reparametrization(self, rng):
        for _ in range(20):
            chi = random_chi(rng)
            doubled = MarginParams(chi.log_scale + np.log(2), chi.shape, chi.zeta, chi.threshold)
            y = chi.threshold[0] + chi.sigma[0] * rng.uniform(0, 4)
            y2 = chi.threshold[0] + 2 * (y - chi.threshold[0])
            assert jacobian(y2, 0, doubled) == pytest.approx(jacobian(y, 0, chi) / 2, rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        ls=st.floats(-3, 8), xi=st.floats(-0.45, 1.5), zeta=st.floats(1e-4, 0.5), excess=st.floats(0, 50)
    )
    def test_positive(self, ls, xi, zeta, excess):
        xi = 0.0 if abs(xi) < 1e-6 else xi
        chi = MarginParams([ls], xi, [zeta], [10.0])
        y = 10.0 + excess * np.exp(ls)
        if xi < 0:
            y = min(y, 10.0 - 0.99 * np.exp(ls) / xi)
        assert jacobian(y, 0, chi) > 0


class TestReturnLevel:
    def test_threshold_period(self):
        chi = sim_chi()
        for j in range(4):
            assert return_level(ReturnLevelQuery(j, 1 / 0.021), chi) == chi.threshold[j]

    def test_reference(self):
        assert return_level(ReturnLevelQuery(0, 3650.0), sim_chi()) == pytest.approx(RETURN_LEVEL_3650, rel=1e-10)

    def test_monotone_and_inverse(self, rng):
        chi = sim_chi()
        periods = np.sort(rng.uniform(50, 1e5, 200))
        q = np.array([return_level(ReturnLevelQuery(2, t), chi) for t in periods])
        assert np.all(np.diff(q) > 0)
        np.testing.assert_allclose(marginal_cdf(q, 2, chi), 1 - 1 / periods, rtol=1e-9)

    def test_short_period_rejected(self):
        with pytest.raises(DomainError):
            return_level(ReturnLevelQuery(0, 10.0), sim_chi())

    def test_years(self):
        q = ReturnLevelQuery.from_years(1, 10)
        assert q.period == 3650

    def test_exponential_branch(self):
        chi = sim_chi(0.0)
        q = return_level(ReturnLevelQuery(0, 3650.0), chi)
        assert q == pytest.approx(300 + np.exp(4.8) * np.log(0.021 * 3650))


class TestParams:
    def test_serialization(self):
        chi = sim_chi()
        again = MarginParams.from_dict(chi.to_dict())
        np.testing.assert_array_equal(again.vector(), chi.vector())

    def test_per_station(self):
        chi = MarginParams([1.0, 2.0], [0.1, 0.2], [0.05, 0.05], [0.0, 0.0], per_station_shape=True)
        np.testing.assert_array_equal(chi.xi, [0.1, 0.2])
        assert chi.with_vector([1.0, 2.0, 0.3, 0.4]).xi[1] == 0.4

    def test_invalid(self):
        with pytest.raises(DomainError):
            MarginParams([1.0], 0.1, [1.5], [0.0])
        with pytest.raises(DomainError):
            MarginParams([1.0, 1.0], [0.1, 0.2], [0.1, 0.1], [0.0, 0.0])
