import numpy as np
import pytest
from scipy.stats import spearmanr

from geomekf.gaussian import (
    ConcentratedGaussian,
    covariance_pushforward,
    reexpress,
    reset_spd_floor_counter,
    sample,
    spd_floor_events,
    unnorm_log_density,
)
from geomekf.groups import SO3, Euclidean, so3_exp_batch, so3_log_batch
from geomekf.manifold import ChartError, GeometryError

from oracles import random_spd


def so3_chart_cov(ref, mean, cov, new_ref, n_draws, rng):
    """Monte Carlo oracle: sample the concentrated Gaussian directly with
    batched group operations and take the sample covariance of the
    re-coordinatized draws."""
    L = np.linalg.cholesky(cov)
    vs = mean + (L @ rng.standard_normal((3, n_draws))).T
    pts = np.einsum("ij,njk->nik", ref, so3_exp_batch(vs))
    rel = np.einsum("ji,njk->nik", new_ref, pts)
    coords = so3_log_batch(rel)
    return coords, np.cov(coords.T)


class TestConstruction:
    def test_symmetrization(self):
        g = Euclidean(2)
        cov = np.array([[1.0, 0.3], [0.1, 1.0]])
        cg = ConcentratedGaussian(g, np.zeros(2), np.zeros(2), cov)
        assert np.array_equal(cg.cov, cg.cov.T)

    def test_shape_validation(self):
        g = Euclidean(2)
        with pytest.raises(GeometryError):
            ConcentratedGaussian(g, np.zeros(2), np.zeros(3), np.eye(2))
        with pytest.raises(GeometryError):
            ConcentratedGaussian(g, np.zeros(2), np.zeros(2), np.eye(3))

    def test_spd_floor_counter(self):
        reset_spd_floor_counter()
        g = Euclidean(2)
        ConcentratedGaussian(g, np.zeros(2), np.zeros(2), np.diag([1.0, 0.0]))
        assert spd_floor_events() == 1
        reset_spd_floor_counter()

    def test_mean_beyond_chart_bound_warns(self):
        from geomekf.manifold import InjectivityWarning

        g = SO3()
        with pytest.warns(InjectivityWarning):
            ConcentratedGaussian(
                g, np.eye(3), np.array([3.5, 0.0, 0.0]), 0.01 * np.eye(3)
            )


class TestSample:
    def test_degenerate_limit(self, rng):
        g = SO3()
        mu = np.array([0.2, -0.1, 0.05])
        cg = ConcentratedGaussian(g, np.eye(3), mu, 1e-18 * np.eye(3))
        pt = sample(cg, rng)
        assert np.allclose(pt, g.exp(np.eye(3), mu), atol=1e-8)

    def test_euclidean_standard_normal_mean(self):
        g = Euclidean(3)
        cg = ConcentratedGaussian(g, np.zeros(3), np.zeros(3), np.eye(3))
        rng = np.random.default_rng(7)
        n = 100_000
        draws = np.array([sample(cg, rng) for _ in range(n)])
        assert np.all(np.abs(draws.mean(axis=0)) < 3.0 / np.sqrt(n))

    def test_so3_chart_covariance(self):
        g = SO3()
        cov = 0.01 * np.eye(3)
        cg = ConcentratedGaussian(g, np.eye(3), np.zeros(3), cov)
        rng = np.random.default_rng(3)
        coords = np.array([g.log(np.eye(3), sample(cg, rng)) for _ in range(100_000)])
        emp = np.cov(coords.T)
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05

    def test_deterministic_given_seed(self):
        g = Euclidean(4)
        cg = ConcentratedGaussian(g, np.zeros(4), np.zeros(4), np.eye(4))
        assert np.array_equal(sample(cg, 123), sample(cg, 123))

    def test_non_spd_raises(self):
        g = Euclidean(2)
        cg = ConcentratedGaussian(g, np.zeros(2), np.zeros(2), np.eye(2))
        object.__setattr__(cg, "cov", np.diag([1.0, -1.0]))
        with pytest.raises(GeometryError):
            sample(cg, 0)


class TestPushforward:
    def test_identity(self, rng):
        S = random_spd(rng, 3)
        assert np.allclose(covariance_pushforward(np.eye(3), S), S)

    def test_scaling(self):
        assert np.allclose(
            covariance_pushforward(2.0 * np.eye(3), np.eye(3)), 4.0 * np.eye(3)
        )

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(11)
        D = rng.standard_normal((3, 3))
        S = random_spd(rng, 3)
        x = np.linalg.cholesky(S) @ rng.standard_normal((3, 1_000_000))
        emp = np.cov((D @ x))
        assert np.linalg.norm(covariance_pushforward(D, S) - emp) < 6e-3 * np.linalg.norm(S)

    def test_spd_preserved_full_rank(self, rng):
        for _ in range(20):
            D = rng.standard_normal((4, 4)) + 2.0 * np.eye(4)
            S = random_spd(rng, 4)
            out = covariance_pushforward(D, S)
            assert np.linalg.eigvalsh(out)[0] > 0.0

    def test_shape_mismatch(self):
        with pytest.raises(GeometryError):
            covariance_pushforward(np.eye(3), np.eye(4))


class TestReexpress:
    def test_same_ref_is_identity(self, rng):
        g = SO3()
        cg = ConcentratedGaussian(
            g, g.random_point(rng, 0.3), g.random_tangent(rng, 0.2), random_spd(rng, 3, 0.01)
        )
        out = reexpress(cg, cg.ref)
        assert np.allclose(out.mean, cg.mean, atol=1e-12)
        assert np.allclose(out.cov, cg.cov, atol=1e-12)

    def test_euclidean_translation(self, rng):
        g = Euclidean(3)
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        S = random_spd(rng, 3)
        out = reexpress(ConcentratedGaussian(g, np.zeros(3), a, S), b)
        assert np.allclose(out.mean, a - b)
        assert np.allclose(out.cov, S)

    def test_mode_preserved(self, group, rng):
        cov = random_spd(rng, group.dim, 0.01)
        cg = ConcentratedGaussian(
            group, group.random_point(rng, 0.3), group.random_tangent(rng, 0.2), cov
        )
        new_ref = group.exp(cg.ref, group.random_tangent(rng, 0.3))
        out = reexpress(cg, new_ref)
        assert np.allclose(out.mode, cg.mode, atol=1e-9)

    def test_so3_monte_carlo_covariance(self):
        g = SO3()
        mu = np.array([0.2, 0.0, 0.0])
        cov = 0.01 * np.eye(3)
        cg = ConcentratedGaussian(g, np.eye(3), mu, cov)
        new_ref = g.exp(np.eye(3), mu)
        out = reexpress(cg, new_ref)
        rng = np.random.default_rng(5)
        _, emp = so3_chart_cov(np.eye(3), mu, cov, new_ref, 100_000, rng)
        assert np.linalg.norm(out.cov - emp) / np.linalg.norm(out.cov) < 0.05

    def test_round_trip_recovery(self, rng):
        # the anchor point is shared by both trips, so recovery is exact up
        # to roundoff; Euclidean is exact by construction
        for g in (Euclidean(3), SO3()):
            cov = random_spd(rng, 3, 0.02)
            cg = ConcentratedGaussian(
                g, g.random_point(rng, 0.3), g.random_tangent(rng, 0.2), cov
            )
            xi2 = g.exp(cg.ref, g.random_tangent(rng, 0.3))
            back = reexpress(reexpress(cg, xi2), cg.ref)
            tol = 1e-12 if isinstance(g, Euclidean) else 1e-9 * np.trace(cov @ cov)
            assert np.linalg.norm(back.cov - cg.cov) <= max(tol, 1e-12)
            assert np.allclose(back.mean, cg.mean, atol=1e-9)

    def test_chart_error(self):
        g = SO3()
        cg = ConcentratedGaussian(g, np.eye(3), np.zeros(3), 0.01 * np.eye(3))
        bad_ref = g.exp(np.eye(3), np.array([np.pi - 1e-9, 0.0, 0.0]))
        with pytest.raises(ChartError):
            reexpress(cg, bad_ref)

    def test_remainder_scales_quadratically(self):
        # Frobenius gap to the Monte Carlo covariance, with the linear part
        # evaluated on the empirical base covariance and antithetic draws so
        # sampling error does not mask the second-order remainder
        g = SO3()
        rng = np.random.default_rng(9)
        mu = np.array([0.25, -0.1, 0.15])
        new_ref = g.exp(np.eye(3), mu + np.array([0.1, 0.05, -0.08]))
        gaps = []
        scales = (1e-3, 3e-3, 1e-2, 3e-2)
        z0 = rng.standard_normal((3, 50_000))
        z = np.concatenate([z0, -z0], axis=1)
        for s in scales:
            cov = s * np.eye(3)
            vs = mu + (np.sqrt(s) * z).T
            pts = so3_exp_batch(vs)
            rel = np.einsum("ji,njk->nik", new_ref, pts)
            coords = so3_log_batch(rel)
            emp = np.cov(coords.T)
            emp_base = np.cov(vs.T)
            xs = g.exp(np.eye(3), mu)
            D = g.jacobian_tangential_inv(new_ref, xs) @ g.jacobian_tangential(
                np.eye(3), xs
            )
            gaps.append(np.linalg.norm(emp - D @ emp_base @ D.T))
        slope = np.polyfit(np.log(scales), np.log(gaps), 1)[0]
        assert slope >= 1.7


class TestDensity:
    def test_zero_at_mode(self, group, rng):
        cg = ConcentratedGaussian(
            group,
            group.random_point(rng, 0.3),
            group.random_tangent(rng, 0.2),
            random_spd(rng, group.dim, 0.01),
        )
        assert abs(unnorm_log_density(cg, cg.mode)) < 1e-18

    def test_euclidean_unit(self):
        g = Euclidean(3)
        cg = ConcentratedGaussian(g, np.zeros(3), np.zeros(3), np.eye(3))
        assert np.isclose(unnorm_log_density(cg, np.array([1.0, 0, 0])), -0.5)

    def test_ranking_preserved_under_reexpression(self):
        g = SO3()
        cov = 0.01 * np.eye(3)
        cg = ConcentratedGaussian(g, np.eye(3), np.array([0.2, 0.0, 0.0]), cov)
        out = reexpress(cg, cg.mode)
        rng = np.random.default_rng(21)
        pts = [sample(cg, rng) for _ in range(100)]
        d1 = [unnorm_log_density(cg, p) for p in pts]
        d2 = [unnorm_log_density(out, p) for p in pts]
        rho = spearmanr(d1, d2).statistic
        assert rho >= 0.99
