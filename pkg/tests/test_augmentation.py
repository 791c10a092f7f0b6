import numpy as np
import pytest
from scipy import integrate, stats

from censored_dm.augmentation import (
    LatentAbove,
    conditional_mixture,
    count_hits,
    gibbs_sweep_z_above,
    initial_latent,
    log_censored_integral,
    log_phi,
    log_process_density,
    loglik_above,
    phi_weight,
    sample_aug_process,
    sample_conditional,
)
from censored_dm.data_model import INTERVAL, Observation, censor_transform
from censored_dm.dm_core import DmParams, FailureRegion, exponent_density, exponent_measure, marginalize
from censored_dm.errors import DomainError
from censored_dm.margins import MarginParams, jacobian

U = -1 / np.log1p(-0.021)


def psi2():
    return DmParams([0.4, 0.6], [[0.2, 0.8], [0.7, 0.3]], [3.0, 8.0])


def psi3():
    c1 = np.array([0.5, 0.3, 0.2])
    c2 = (1 / 3 - 0.3 * c1) / 0.7
    return DmParams([0.3, 0.7], [c1, c2], [5.0, 2.5])


def target_cdf(psi, point, j, lower, upper):
    """Numerically normalized CDF of the j-section of the exponent density on [lower, upper]."""
    def dens(z):
        x = np.array(point, dtype=float)
        x[j] = z
        return exponent_density(x, psi)

    hi = upper if np.isfinite(upper) else max(lower, 1.0) * 1e6
    grid = np.unique(np.concatenate([np.geomspace(max(lower, 1e-6 * hi), hi, 800), [max(lower, 1e-6 * hi), hi]]))
    pieces = [integrate.quad(dens, a, b, epsabs=0, epsrel=1e-11)[0] for a, b in zip(grid[:-1], grid[1:])]
    tail = integrate.quad(dens, hi, np.inf)[0] if np.isinf(upper) else 0.0
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    total = cum[-1] + tail
    if lower == 0:
        head = integrate.quad(dens, 0, grid[0], epsabs=0, epsrel=1e-11)[0]
        cum, total = cum + head, total + head
        grid = np.concatenate([[0.0], grid])
        cum = np.concatenate([[0.0], cum])
    return lambda z: np.interp(z, grid, cum / total, right=1.0)


class TestConditionalMixture:
    def test_single_component(self):
        cm = conditional_mixture(0, [1.0, 30.0], 0.0, U, DmParams.single(2, 5.0))
        assert cm.weights.tolist() == [1.0]

    def test_unit_bounds(self):
        cm = conditional_mixture(0, [1.0, U], 0.0, U, DmParams.single(2, 5.0))
        assert (cm.lo, cm.hi) == (0.0, 0.5)

    def test_weights_by_quadrature(self):
        psi = psi2()
        point, lower, upper = [0.0, 60.0], 10.0, 80.0
        cm = conditional_mixture(0, point, lower, upper, psi)
        masses = []
        for m in range(2):
            f = lambda z, m=m: psi.weights[m] * _component_density(np.array([z, 60.0]), psi, m)
            masses.append(integrate.quad(f, lower, upper, epsabs=0, epsrel=1e-12)[0])
        np.testing.assert_allclose(cm.weights, np.array(masses) / sum(masses), rtol=1e-6)

    def test_integral_matches_quadrature(self):
        psi = psi2()
        for lower, upper in [(0.0, U), (20.0, 300.0), (50.0, np.inf)]:
            ref = integrate.quad(lambda z: exponent_density(np.array([z, 60.0]), psi), lower, upper, epsabs=0, epsrel=1e-12)[0]
            assert np.exp(log_censored_integral(0, [0.0, 60.0], lower, upper, psi)) == pytest.approx(ref, rel=1e-6)

    def test_bad_input(self):
        with pytest.raises(DomainError):
            conditional_mixture(0, [1.0, 2.0], 5.0, 1.0, psi2())


def _component_density(x, psi, m):
    from censored_dm.dm_core import dirichlet_density

    r = x.sum()
    return psi.d * r ** (-(psi.d + 1)) * dirichlet_density(x / r, psi.shapes[m], psi.centers[m])


FIXTURES = [
    (DmParams.single(2, 4.0), [0.0, 80.0], 0, 0.0, U),
    (psi2(), [0.0, 60.0], 0, 10.0, 200.0),
    (psi2(), [150.0, 0.0], 1, 60.0, np.inf),
    (DmParams.single(3, 10.0), [50.0, 0.0, 5.0], 1, 0.0, U),
    (psi3(), [30.0, 70.0, 0.0], 2, 0.0, 120.0),
]


@pytest.mark.parametrize("psi,point,j,lower,upper", FIXTURES)
def test_sample_conditional_ks(psi, point, j, lower, upper):
    rng = np.random.default_rng(5)
    cm = conditional_mixture(j, point, lower, upper, psi)
    draws = np.array([sample_conditional(cm, rng) for _ in range(3000)])
    assert np.all((draws >= lower) & (draws <= upper))
    assert stats.kstest(draws, target_cdf(psi, point, j, lower, upper)).statistic < 0.03


def test_degenerate_interval():
    cm = conditional_mixture(0, [0.0, 3.0], 7.0, 7.0, psi2())
    assert sample_conditional(cm, np.random.default_rng(0)) == 7.0


def test_initial_latent():
    np.testing.assert_allclose(initial_latent([0.0, 4.0, 2.0], [10.0, 9.0, np.inf]), [5.0, 6.0, 4.0])


def make_latent(psi, n=200):
    """d=2 records: station 1 exact above, station 0 censored below threshold."""
    chi = MarginParams([2.0, 2.0], 0.1, [0.021, 0.021], [10.0, 10.0])
    obs = [Observation(t, [INTERVAL, 1], [np.nan, 30.0], [0.0, 30.0], [5.0, 30.0]) for t in range(n)]
    fobs = [censor_transform(o, chi) for o in obs]
    return obs, fobs, chi, LatentAbove.from_frechet(fobs, 2)


def test_gibbs_long_run():
    psi = DmParams.single(2, 4.0)
    obs, fobs, chi, lat = make_latent(psi, 100)
    rng = np.random.default_rng(9)
    vals = []
    for _ in range(100):
        gibbs_sweep_z_above(lat, psi, rng)
        vals.append(lat.groups[0].xbar[:, 0].copy())
    vals = np.concatenate(vals)
    x1 = fobs[0].x[1]
    assert np.all((vals >= 0) & (vals <= chi.u[0]))
    assert stats.kstest(vals, target_cdf(psi, [0.0, x1], 0, 0.0, chi.u[0])).statistic < 0.01


def test_sweep_without_censoring_is_noop():
    chi = MarginParams([2.0, 2.0], 0.1, [0.021, 0.021], [10.0, 10.0])
    fobs = [censor_transform(Observation.exact(0, [30.0, 40.0]), chi)]
    lat = LatentAbove.from_frechet(fobs, 2)
    before = lat.groups[0].xbar.copy()
    gibbs_sweep_z_above(lat, psi2(), np.random.default_rng(0))
    np.testing.assert_array_equal(before, lat.groups[0].xbar)
    assert lat.within_bounds()


class TestLoglikAbove:
    def test_exact_record(self):
        psi = psi2()
        chi = MarginParams([2.0, 2.5], 0.1, [0.021, 0.021], [10.0, 10.0])
        o = Observation.exact(0, [30.0, 40.0])
        f = censor_transform(o, chi)
        ll = loglik_above(o, f, {}, psi, chi)
        ref = np.log(exponent_density(f.x, psi)) + np.log(jacobian(30.0, 0, chi)) + np.log(jacobian(40.0, 1, chi))
        assert ll == pytest.approx(ref, rel=1e-12)

    def test_integrates_to_censored_term(self):
        psi = DmParams.single(2, 6.0)
        obs, fobs, chi, _ = make_latent(psi, 1)
        o, f = obs[0], fobs[0]
        logj = np.log(jacobian(30.0, 1, chi))
        got = integrate.quad(lambda z: np.exp(loglik_above(o, f, {0: z}, psi, chi) - logj), 0, chi.u[0], epsabs=0, epsrel=1e-12)[0]
        # independent route: x^-2 marginal minus the tail of the section above u
        x1 = f.x[1]
        tail = integrate.quad(lambda z: exponent_density(np.array([z, x1]), psi), chi.u[0], np.inf, epsabs=0, epsrel=1e-12)[0]
        assert got == pytest.approx(x1 ** -2 - tail, rel=1e-6)

    def test_out_of_box(self):
        psi = psi2()
        obs, fobs, chi, _ = make_latent(psi, 1)
        assert loglik_above(obs[0], fobs[0], {0: 1e3}, psi, chi) == -np.inf

    def test_missing_coordinate_uses_marginal(self, psi4):
        chi = MarginParams(np.full(4, 4.0), 0.3, np.full(4, 0.021), np.full(4, 100.0))
        o = Observation(0, [1, 0, 1, 1], [200.0, np.nan, 150.0, 300.0], [0, np.nan, 0, 0], [0, np.nan, 0, 0])
        f = censor_transform(o, chi)
        ll = loglik_above(o, f, {}, psi4, chi)
        m = marginalize(psi4, [1])
        ref = np.log(exponent_density(f.x[[0, 2, 3]], m))
        ref += sum(np.log(jacobian(o.value[j], j, chi)) for j in (0, 2, 3))
        assert ll == pytest.approx(ref, rel=1e-12)


class TestAugProcess:
    def test_poisson_mean(self, psi4):
        rng = np.random.default_rng(1)
        counts = np.array([sample_aug_process(np.full(4, U), 100, psi4, 50, rng).n_points for _ in range(10_000)])
        mean = 20000 / U
        assert mean == pytest.approx(424.47, abs=0.01)
        assert abs(counts.mean() - mean) < 3 * np.sqrt(mean / len(counts))

    def test_radii_survival(self, psi4):
        rng = np.random.default_rng(2)
        p = sample_aug_process(np.full(4, U), 1000, psi4, 50, rng)
        frac = np.mean(p.radii > 2 * p.r_min)
        assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / p.n_points)
        assert np.all(p.radii > p.r_min)

    def test_expected_hits(self, psi4):
        rng = np.random.default_rng(3)
        b = np.array([U, 2 * U, U, 3 * U])
        hits = np.array([sample_aug_process(b, 50, psi4, 20, rng).hits for _ in range(3000)])
        lam, se = exponent_measure(FailureRegion("rect_complement", bounds=b), psi4, 400_000, rng)
        expect = 20 * 50 * lam
        assert abs(hits.mean() - expect) < 3 * np.hypot(hits.std() / np.sqrt(len(hits)), 20 * 50 * se)

    def test_hits_recomputable(self, psi4):
        p = sample_aug_process(np.full(4, U), 100, psi4, 50, np.random.default_rng(4))
        assert p.hits == p.count_hits() == count_hits(p.radii, p.angles, p.bounds, p.n_block)

    def test_phi(self):
        p = sample_aug_process(np.ones(2), 1.0, DmParams.single(2, 2.0), 50, np.random.default_rng(0))
        p.hits = 0
        assert phi_weight(p) == 1.0
        p.hits = 3
        assert phi_weight(p) == pytest.approx(0.941192, abs=1e-12)
        assert log_phi(p) == pytest.approx(3 * np.log(0.98))

    def test_tau_domain(self, psi4):
        with pytest.raises(DomainError):
            sample_aug_process(np.ones(4), 1.0, psi4, 1.0, np.random.default_rng(0))

    def test_density_closed_form(self):
        psi = DmParams.single(2, 2.0)  # uniform angles: h = 1
        p = sample_aug_process(np.array([2.0, 3.0]), 1.0, psi, 5.0, np.random.default_rng(1))
        n = p.n_points
        from scipy.special import gammaln

        ref = -gammaln(n + 1) - 5 * 2 / 2.0 + n * np.log(10.0) - 2 * np.log(p.radii).sum()
        assert log_process_density(p, psi) == pytest.approx(ref, rel=1e-12)
