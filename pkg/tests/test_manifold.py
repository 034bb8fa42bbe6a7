import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomekf.groups import SE3, SE23, SO3, Euclidean, so3_exp
from geomekf.manifold import (
    ChartError,
    Geometry,
    GeometryError,
    InjectivityWarning,
    ClosedFormFallbackWarning,
    UnsupportedOperation,
    fd_dlog_positional,
    fd_exp_jacobians,
    jacobian_order_fit,
    pt_ode_oracle,
)

from oracles import expm_series


class TestExpLog:
    def test_exp_zero_exact(self, geometry, rng):
        xi = geometry.random_point(rng, 0.5)
        assert np.array_equal(geometry.exp(xi, np.zeros(geometry.dim)), xi)

    def test_euclidean_exp_is_addition(self, rng):
        g = Euclidean(3)
        x = rng.standard_normal(3)
        v = rng.standard_normal(3)
        assert np.array_equal(g.exp(x, v), x + v)

    def test_so3_quarter_turn_vs_series(self):
        g = SO3()
        v = np.array([np.pi / 2.0, 0.0, 0.0])
        R = g.exp(np.eye(3), v)
        assert np.allclose(R, expm_series(g.hat(v)), atol=1e-12)

    def test_log_at_base_is_zero(self, geometry, rng):
        xi = geometry.random_point(rng, 0.5)
        assert np.allclose(geometry.log(xi, xi), 0.0, atol=1e-15)

    def test_log_recovers_small_perturbation(self, geometry, rng):
        for _ in range(20):
            xi = geometry.random_point(rng, 0.5)
            u = geometry.random_tangent(rng, 1.0)
            u *= min(1.0, 0.5 / max(np.linalg.norm(u), 1e-12))
            assert np.allclose(geometry.log(xi, geometry.exp(xi, u)), u, atol=1e-9)

    def test_boxplus_axioms_random(self, geometry, rng):
        # full 1000-case sweep lives in the acceptance suite
        for _ in range(200):
            xi = geometry.random_point(rng, 0.6)
            u = geometry.random_tangent(rng, 1.0)
            u *= min(1.0, 0.5 / max(np.linalg.norm(u), 1e-12))
            zeta = geometry.exp(xi, u)
            assert np.allclose(geometry.log(xi, zeta), u, atol=1e-9)
            assert np.allclose(
                geometry.exp(xi, geometry.log(xi, zeta)), zeta, atol=1e-9
            )

    def test_injectivity_warning(self):
        g = SO3()
        with pytest.warns(InjectivityWarning):
            g.exp(np.eye(3), np.array([3.5, 0.0, 0.0]))

    def test_dimension_mismatch(self, geometry):
        with pytest.raises(GeometryError):
            geometry.exp(geometry.identity_point(), np.zeros(geometry.dim + 1))

    def test_log_cut_locus_error(self):
        g = SO3()
        target = so3_exp(np.array([np.pi - 1e-9, 0, 0]))
        with pytest.raises(ChartError):
            g.log(np.eye(3), target)


class TestParallelTransport:
    def test_zero_geodesic(self, geometry, rng):
        xi = geometry.random_point(rng, 0.5)
        w = geometry.random_tangent(rng, 1.0)
        assert np.allclose(
            geometry.parallel_transport(xi, np.zeros(geometry.dim), w), w
        )

    def test_euclidean_flat(self, rng):
        g = Euclidean(4)
        w = rng.standard_normal(4)
        assert np.array_equal(g.parallel_transport(np.zeros(4), rng.standard_normal(4), w), w)

    def test_linear_in_w(self, group, rng):
        base = group.random_point(rng, 0.5)
        v = group.random_tangent(rng, 0.6)
        w1 = group.random_tangent(rng, 1.0)
        w2 = group.random_tangent(rng, 1.0)
        lhs = group.parallel_transport(base, v, 2.0 * w1 - 3.0 * w2)
        rhs = 2.0 * group.parallel_transport(base, v, w1) - 3.0 * group.parallel_transport(base, v, w2)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_so3_vs_ode_oracle(self, rng):
        g = SO3()
        v = g.random_tangent(rng, 0.5)
        w = g.random_tangent(rng, 1.0)
        closed = g.parallel_transport(np.eye(3), v, w)
        assert np.allclose(closed, pt_ode_oracle(g, np.eye(3), v, w, steps=10000), atol=1e-8)

    def test_ode_oracle_convergence_order(self, rng):
        g = SE23()
        base = g.identity_point()
        v = g.random_tangent(rng, 0.7)
        w = g.random_tangent(rng, 1.0)
        exact = g.parallel_transport(base, v, w)
        errs = [
            np.linalg.norm(pt_ode_oracle(g, base, v, w, steps=n) - exact)
            for n in (8, 16, 32)
        ]
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 3.5

    def test_unsupported_geometry(self):
        class Bare(Geometry):
            dim = 2
            name = "bare"

            def exp(self, base, v):
                return np.asarray(base) + v

            def log(self, base, target):
                return np.asarray(target) - np.asarray(base)

        with pytest.raises(UnsupportedOperation):
            pt_ode_oracle(Bare(), np.zeros(2), np.ones(2), np.ones(2))


class TestCurvature:
    def test_euclidean_zero(self, rng):
        g = Euclidean(5)
        x, y, z = (rng.standard_normal(5) for _ in range(3))
        assert np.array_equal(g.curvature(np.zeros(5), x, y, z), np.zeros(5))

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-1, 1, allow_nan=False), min_size=9, max_size=9),
        st.lists(st.floats(-1, 1, allow_nan=False), min_size=9, max_size=9),
        st.lists(st.floats(-1, 1, allow_nan=False), min_size=9, max_size=9),
    )
    def test_antisymmetry_se23(self, xs, ys, zs):
        g = SE23()
        base = g.identity_point()
        x, y, z = np.array(xs), np.array(ys), np.array(zs)
        assert np.allclose(
            g.curvature(base, x, y, z), -g.curvature(base, y, x, z), atol=1e-14
        )
        assert np.allclose(g.curvature(base, x, x, z), 0.0, atol=1e-14)

    def test_trilinearity(self, group, rng):
        base = group.identity_point()
        x, y, z, w = (group.random_tangent(rng, 1.0) for _ in range(4))
        a, b = 1.7, -0.4
        assert np.allclose(
            group.curvature(base, a * x + b * w, y, z),
            a * group.curvature(base, x, y, z) + b * group.curvature(base, w, y, z),
            atol=1e-12,
        )


class TestJacobians:
    def test_identity_at_coincident_points(self, geometry, rng):
        xi = geometry.random_point(rng, 0.5)
        for which in ("jacobian_tangential", "jacobian_positional"):
            J = getattr(geometry, which)(xi, xi)
            assert np.allclose(J, np.eye(geometry.dim), atol=1e-12)

    def test_euclidean_identity(self, rng):
        g = Euclidean(3)
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        assert np.allclose(g.jacobian_tangential(a, b), np.eye(3))
        assert np.allclose(g.jacobian_positional(a, b), np.eye(3))

    def test_so3_closed_vs_fd(self, rng):
        g = SO3()
        base = g.identity_point()
        target = g.exp(base, np.array([0.2, -0.1, 0.3]))
        J1_fd, J2_fd = fd_exp_jacobians(g, base, target)
        assert np.allclose(g.jacobian_tangential(base, target), J2_fd, atol=1e-7)
        assert np.allclose(g.jacobian_positional(base, target), J1_fd, atol=1e-7)

    def test_left_inverse_identity(self, group, rng):
        for _ in range(20):
            base = group.random_point(rng, 0.5)
            v = group.random_tangent(rng, 1.0)
            v *= min(1.0, 0.5 / np.linalg.norm(v))
            target = group.exp(base, v)
            J = group.jacobian_tangential(base, target)
            Jinv = group.jacobian_tangential_inv(base, target)
            assert np.allclose(Jinv @ J, np.eye(group.dim), atol=1e-8)

    def test_so3_closed_inverse_vs_numerical_fd_inverse(self, rng):
        g = SO3()
        base = g.identity_point()
        target = g.exp(base, g.random_tangent(rng, 0.4))
        _, J2_fd = fd_exp_jacobians(g, base, target)
        assert np.allclose(
            g.jacobian_tangential_inv(base, target), np.linalg.inv(J2_fd), atol=1e-7
        )

    def test_fd_jacobians_trivial_cases(self, rng):
        g = Euclidean(3)
        J1, J2 = fd_exp_jacobians(g, np.zeros(3), rng.standard_normal(3))
        assert np.allclose(J1, np.eye(3)) and np.allclose(J2, np.eye(3))
        so3 = SO3()
        J1, J2 = fd_exp_jacobians(so3, np.eye(3), np.eye(3))
        assert np.allclose(J1, np.eye(3), atol=1e-9)
        assert np.allclose(J2, np.eye(3), atol=1e-9)

    def test_fd_step_bounds(self):
        g = SO3()
        with pytest.raises(GeometryError):
            fd_exp_jacobians(g, np.eye(3), np.eye(3), h=1e-2)

    def test_unknown_mode(self):
        g = SO3()
        with pytest.raises(GeometryError):
            g.jacobian_tangential(np.eye(3), np.eye(3), mode="exact")

    def test_closed_form_fallback_warns(self, rng):
        class NoClosed(SO3):
            def _jt_closed(self, base, v):
                return None

        g = NoClosed()
        base = g.identity_point()
        target = g.exp(base, np.array([0.1, 0.0, 0.2]))
        with pytest.warns(ClosedFormFallbackWarning):
            J = g.jacobian_tangential(base, target, mode="closed_form")
        assert np.allclose(
            J, g.jacobian_tangential(base, target, mode="pt_curvature")
        )

    def test_no_global_two_sided_inverse(self):
        # J2(xi, zeta) J2(zeta, xi) is generally not the identity
        g = SO3()
        xi = np.eye(3)
        zeta = g.exp(xi, np.array([0.9, -0.4, 0.3]))
        P = g.jacobian_tangential(xi, zeta) @ g.jacobian_tangential(zeta, xi)
        assert np.linalg.norm(P - np.eye(3)) > 1e-3


class TestPositionalCarry:
    def test_coords_closed_vs_fd(self, group, rng):
        base = group.random_point(rng, 0.4)
        target = group.exp(base, group.random_tangent(rng, 0.3))
        J = group.jacobian_positional(base, target, carry="coords")
        J_fd = fd_exp_jacobians(group, base, target, carry="coords")[0]
        assert np.allclose(J, J_fd, atol=1e-7)

    def test_carry_variants_differ_at_first_order(self, rng):
        g = SE3("right")
        base = g.identity_point()
        v = g.random_tangent(rng, 0.3)
        target = g.exp(base, v)
        par = g.jacobian_positional(base, target, carry="parallel")
        coo = g.jacobian_positional(base, target, carry="coords")
        assert np.linalg.norm(par - coo) > 0.05

    def test_bad_carry(self):
        g = SO3()
        with pytest.raises(GeometryError):
            g.jacobian_positional(np.eye(3), np.eye(3), carry="frozen")


class TestApproximationOrders:
    @pytest.mark.parametrize("which", ["tangential", "positional"])
    def test_pt_curvature_fourth_order(self, group, which):
        fit = jacobian_order_fit(group, which, "pt_curvature", samples=3, seed=2)
        assert fit.slope >= 3.5

    @pytest.mark.parametrize("which", ["tangential", "positional"])
    def test_pt_only_second_order(self, group, which):
        fit = jacobian_order_fit(group, which, "pt_only", samples=3, seed=2)
        assert 1.8 <= fit.slope <= 2.5

    def test_pt_only_vs_fd_reference_moderate_scales(self):
        # the FD oracle resolves the pt_only error directly at these scales
        g = SO3()
        fit = jacobian_order_fit(
            g,
            "tangential",
            "pt_only",
            scales=np.logspace(-2, -1, 5),
            samples=3,
            seed=4,
            reference="finite_diff",
            resolution_floor=1e-9,
        )
        assert fit.slope >= 1.8


class TestDlog:
    def test_minus_identity_at_base(self, geometry, rng):
        xi = geometry.random_point(rng, 0.4)
        assert np.allclose(
            geometry.dlog_positional(xi, xi), -np.eye(geometry.dim), atol=1e-12
        )

    def test_euclidean_minus_identity(self, rng):
        g = Euclidean(3)
        assert np.allclose(
            g.dlog_positional(rng.standard_normal(3), rng.standard_normal(3)),
            -np.eye(3),
        )

    def test_matches_fd_oracle(self, group, rng):
        for _ in range(5):
            base = group.random_point(rng, 0.4)
            v = group.random_tangent(rng, 1.0)
            v *= min(1.0, 0.3 / np.linalg.norm(v))
            target = group.exp(base, v)
            D = group.dlog_positional(base, target)
            D_fd = fd_dlog_positional(group, base, target)
            assert np.allclose(D, D_fd, atol=1e-6)

    def test_construction_identity(self, group, rng):
        base = group.random_point(rng, 0.4)
        target = group.exp(base, group.random_tangent(rng, 0.3))
        D = group.dlog_positional(base, target)
        J2inv = group.jacobian_tangential_inv(base, target)
        J1 = group.jacobian_positional(base, target)
        assert np.array_equal(D, -J2inv @ J1)


def test_order_fit_csv_rows():
    fit = jacobian_order_fit(SO3(), "tangential", "pt_only", samples=2, seed=0)
    rows = fit.csv_rows()
    assert all(len(r) == 3 and r[0] == "pt_only" for r in rows)
