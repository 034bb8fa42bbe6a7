"""Smooth manifolds with affine connections.

A :class:`Geometry` bundles the operations an affine connection induces on a
manifold: the exponential/logarithm pair (normal coordinates), parallel
transport, the Riemann curvature tensor, and the two partial pushforward maps
of the exponential.  Tangent vectors are handled in trivialized coordinates,
i.e. as plain ``(dim,)`` arrays whose meaning is fixed by the geometry's
``convention`` tag and the base point they were produced at.

The pushforward maps are the workhorses of everything downstream:

* ``jacobian_tangential`` (J2) differentiates ``exp(base, v)`` in ``v`` and
  maps the tangent space at ``base`` to the tangent space at the target.
* ``jacobian_positional`` (J1) differentiates ``exp(base, v)`` in ``base``
  while ``v`` is carried along by parallel transport (``carry="parallel"``,
  the connection-covariant object below) or with its trivialized coordinates
  held fixed (``carry="coords"``, the chart derivative the filters need).

Both admit transport/curvature approximations

    J2 ~ PT(w + (1/6) R(v, w) v)        (error o(|v|^3); quartic in practice)
    J1 ~ PT(w + (1/2) R(v, w) v)        (error o(|v|^3))

which are available through the ``pt_curvature`` mode, alongside ``pt_only``
(drop the curvature term, second-order accurate), ``closed_form`` (exact, when
the geometry provides one) and ``finite_diff`` (central differences, used as
an independent oracle).  The module also carries the numerical oracles used to
validate the closed forms: finite-difference Jacobians, an RK4 integrator for
the parallel-transport ODE, a Jacobi-field ODE integrator, and a log-log
order-fit harness.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Geometry",
    "GeometryError",
    "ChartError",
    "UnsupportedOperation",
    "InjectivityWarning",
    "ClosedFormFallbackWarning",
    "JACOBIAN_MODES",
    "DEFAULT_FD_STEP",
    "fd_exp_jacobians",
    "fd_dlog_positional",
    "pt_ode_oracle",
    "jacobi_ode_jacobian",
    "OrderFitRow",
    "OrderFitResult",
    "jacobian_order_fit",
]

#: Central-difference step used by the finite-difference oracles.  Balances the
#: O(h^2) truncation error against roundoff amplification ~eps/h at double
#: precision; keep within [1e-7, 1e-3].
DEFAULT_FD_STEP = 1e-5

JACOBIAN_MODES = ("closed_form", "pt_curvature", "pt_only", "finite_diff")


class GeometryError(ValueError):
    """A geometric operation was called outside its domain."""


class ChartError(GeometryError):
    """A point lies outside the normal-coordinate chart in use."""


class UnsupportedOperation(NotImplementedError):
    """The geometry does not supply the data this operation needs."""


class InjectivityWarning(UserWarning):
    """A tangent argument exceeds the geometry's injectivity bound.

    The computation proceeds (group exponentials are globally defined), but
    exp/log are no longer mutually inverse at this magnitude.
    """


class ClosedFormFallbackWarning(UserWarning):
    """``closed_form`` mode fell back to ``pt_curvature``."""


class Geometry:
    """A manifold of dimension ``dim`` carrying an affine connection.

    Subclasses must provide the four primitives :meth:`exp`, :meth:`log`,
    :meth:`parallel_transport` and :meth:`curvature`; everything else has a
    generic implementation in terms of those.  Points are represented by
    arrays (matrices for matrix groups, vectors for Euclidean space); tangent
    vectors by ``(dim,)`` coordinate arrays under the trivialization named by
    ``convention``.

    All methods are pure functions of immutable inputs and safe to share
    across threads.
    """

    dim: int
    name: str
    convention: str = "left"
    #: Norm bound inside which exp/log are mutually inverse.  Operations warn
    #: rather than fail beyond it.
    injectivity_radius: float = np.inf

    # ------------------------------------------------------------------
    # primitives
    # ------------------------------------------------------------------

    def exp(self, base, v):
        """Geodesic exponential: follow the geodesic from ``base`` with
        initial velocity ``v`` (trivialized coordinates) for unit time."""
        raise NotImplementedError

    def log(self, base, target):
        """Inverse of :meth:`exp` on the normal neighborhood of ``base``."""
        raise NotImplementedError

    def parallel_transport(self, base, v, w):
        """Transport ``w`` along the geodesic ``t -> exp(base, t v)`` from
        t=0 to t=1.  Returns coordinates at ``exp(base, v)``."""
        raise NotImplementedError

    def curvature(self, base, x, y, z):
        """Riemann curvature R(x, y) z at ``base`` (trilinear, antisymmetric
        in the first two arguments)."""
        raise NotImplementedError

    # ------------------------------------------------------------------
    # optional hooks
    # ------------------------------------------------------------------

    def transport_matrix(self, base, v):
        """Matrix of ``w -> parallel_transport(base, v, w)``."""
        cols = [self.parallel_transport(base, v, e) for e in np.eye(self.dim)]
        return np.column_stack(cols)

    def curvature_quad(self, base, v):
        """Matrix of the quadratic curvature action ``w -> R(v, w) v``."""
        cols = [self.curvature(base, v, e, v) for e in np.eye(self.dim)]
        return np.column_stack(cols)

    def geodesic_transport_rhs(self, v, w):
        """Trivialized connection coefficients along the geodesic with
        velocity ``v``: returns dw/dt for the transport ODE.  Geometries
        without closed coefficients raise :class:`UnsupportedOperation`."""
        raise UnsupportedOperation(
            f"{self.name} does not supply trivialized transport coefficients"
        )

    def _jt_closed(self, base, v):
        """Closed-form tangential pushforward, or None if unavailable."""
        return None

    def _jt_inv_closed(self, base, v):
        return None

    def _jp_closed(self, base, v):
        """Closed-form positional pushforward, or None if unavailable."""
        return None

    def identity_point(self):
        """A canonical reference point (group identity / origin)."""
        raise NotImplementedError

    def project(self, point):
        """Re-project ``point`` onto the manifold's defining constraints."""
        return np.asarray(point, dtype=float)

    def check_point(self, point, tol=1e-9):
        """Validate structural invariants of ``point`` to tolerance ``tol``."""
        return True

    def within_injectivity(self, v):
        """Whether a tangent stays inside the bound where exp/log invert."""
        return float(np.linalg.norm(v)) <= self.injectivity_radius

    def random_tangent(self, rng, scale=1.0):
        """Tangent coordinates with independent N(0, scale^2) entries."""
        return scale * rng.standard_normal(self.dim)

    def random_point(self, rng, scale=1.0):
        """A random point: the identity perturbed by a random tangent."""
        return self.exp(self.identity_point(), self.random_tangent(rng, scale))

    # ------------------------------------------------------------------
    # derived operations
    # ------------------------------------------------------------------

    def _check_tangent(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise GeometryError(
                f"tangent shape {v.shape} does not match dim {self.dim}"
            )
        if not np.all(np.isfinite(v)):
            raise GeometryError("tangent coordinates must be finite")
        return v

    def jacobian_tangential(self, base, target, mode="closed_form"):
        """Pushforward J2 of exp in its tangential argument, as a map from
        the tangent space at ``base`` to the tangent space at ``target``."""
        self._check_mode(mode)
        v = self.log(base, target)
        if mode == "closed_form":
            closed = self._jt_closed(base, v)
            if closed is not None:
                return closed
            warnings.warn(
                f"{self.name}: no closed-form tangential Jacobian; using "
                "pt_curvature",
                ClosedFormFallbackWarning,
            )
            mode = "pt_curvature"
        if mode == "finite_diff":
            return fd_exp_jacobians(self, base, target)[1]
        P = self.transport_matrix(base, v)
        if mode == "pt_only":
            return P
        K = self.curvature_quad(base, v)
        return P @ (np.eye(self.dim) + K / 6.0)

    def jacobian_tangential_inv(self, base, target, mode="closed_form"):
        """Left inverse of :meth:`jacobian_tangential`."""
        self._check_mode(mode)
        if mode == "closed_form":
            v = self.log(base, target)
            closed = self._jt_inv_closed(base, v)
            if closed is not None:
                return closed
        J = self.jacobian_tangential(base, target, mode)
        try:
            return np.linalg.inv(J)
        except np.linalg.LinAlgError as err:
            raise GeometryError(
                "tangential Jacobian is singular (|v| at an injectivity "
                "boundary)"
            ) from err

    def jacobian_positional(self, base, target, mode="closed_form",
                            carry="parallel"):
        """Pushforward J1 of exp in its base point.

        ``carry`` fixes how the tangential argument varies with the base:
        ``parallel`` transports it along the perturbation geodesic (the
        connection-covariant object the transport/curvature approximations
        target), ``coords`` holds its trivialized coordinates fixed (the
        chart derivative that enters the measurement-residual linearization;
        frame dependent, so the generic approximation modes do not apply).
        """
        self._check_mode(mode)
        if carry not in ("parallel", "coords"):
            raise GeometryError(f"unknown carry {carry!r}")
        v = self.log(base, target)
        if carry == "coords":
            return self._jacobian_positional_coords(base, target, v, mode)
        if mode == "closed_form":
            closed = self._jp_closed(base, v)
            if closed is not None:
                return closed
            warnings.warn(
                f"{self.name}: no closed-form positional Jacobian; using "
                "pt_curvature",
                ClosedFormFallbackWarning,
            )
            mode = "pt_curvature"
        if mode == "finite_diff":
            return fd_exp_jacobians(self, base, target)[0]
        P = self.transport_matrix(base, v)
        if mode == "pt_only":
            return P
        K = self.curvature_quad(base, v)
        return P @ (np.eye(self.dim) + K / 2.0)

    def _jacobian_positional_coords(self, base, target, v, mode):
        if mode in ("closed_form", "pt_curvature", "pt_only"):
            closed = self._jp_coords_closed(base, v)
            if closed is not None:
                return closed
            if mode != "finite_diff" and mode != "closed_form":
                raise UnsupportedOperation(
                    "coordinate-carried positional pushforward has no "
                    f"transport approximation on {self.name}"
                )
            warnings.warn(
                f"{self.name}: no closed-form coordinate-carried positional "
                "Jacobian; using finite differences",
                ClosedFormFallbackWarning,
            )
        return fd_exp_jacobians(self, base, target, carry="coords")[0]

    def _jp_coords_closed(self, base, v):
        return None

    def jacobian_positional_inv(self, base, target, mode="closed_form",
                                carry="parallel"):
        J = self.jacobian_positional(base, target, mode, carry)
        try:
            return np.linalg.inv(J)
        except np.linalg.LinAlgError as err:
            raise GeometryError("positional Jacobian is singular") from err

    def dlog_positional(self, base, target, mode="closed_form"):
        """Differential of ``log(base, target)`` in its base argument,
        computed as ``-J2^{-1} @ J1``.  Equals minus the identity when
        ``target == base``."""
        J2inv = self.jacobian_tangential_inv(base, target, mode)
        J1 = self.jacobian_positional(base, target, mode)
        return -J2inv @ J1

    @staticmethod
    def _check_mode(mode):
        if mode not in JACOBIAN_MODES:
            raise GeometryError(
                f"unknown Jacobian mode {mode!r}; expected one of "
                f"{JACOBIAN_MODES}"
            )


# ----------------------------------------------------------------------
# finite-difference oracles
# ----------------------------------------------------------------------


def fd_exp_jacobians(geometry, base, target, h=DEFAULT_FD_STEP,
                     carry="parallel"):
    """Central-difference estimates ``(J1, J2)`` of the positional and
    tangential pushforwards of exp, with truncation error O(h^2).

    The positional probe moves the base point along coordinate geodesics;
    ``carry`` selects whether the tangential argument follows by parallel
    transport or by holding its trivialized coordinates, matching the two
    variants of :meth:`Geometry.jacobian_positional`.
    """
    if not 1e-7 <= h <= 1e-3:
        raise GeometryError(f"fd step h={h} outside [1e-7, 1e-3]")
    m = geometry.dim
    v = geometry.log(base, target)
    J1 = np.empty((m, m))
    J2 = np.empty((m, m))
    eye = np.eye(m)
    for i in range(m):
        e = eye[i]
        # tangential: perturb v
        plus = geometry.log(target, geometry.exp(base, v + h * e))
        minus = geometry.log(target, geometry.exp(base, v - h * e))
        J2[:, i] = (plus - minus) / (2.0 * h)
        # positional: perturb the base, carry v along the perturbation
        bp = geometry.exp(base, h * e)
        bm = geometry.exp(base, -h * e)
        if carry == "parallel":
            vp = geometry.parallel_transport(base, h * e, v)
            vm = geometry.parallel_transport(base, -h * e, v)
        else:
            vp = vm = v
        plus = geometry.log(target, geometry.exp(bp, vp))
        minus = geometry.log(target, geometry.exp(bm, vm))
        J1[:, i] = (plus - minus) / (2.0 * h)
    return J1, J2


def fd_dlog_positional(geometry, base, target, h=DEFAULT_FD_STEP):
    """Central-difference differential of ``log(., target)`` at ``base``.

    The perturbed logs live in tangent spaces at the perturbed base points;
    they are parallel-transported back to ``base`` before differencing so the
    result is the derivative of the vector field ``z -> log(z, target)``
    along each coordinate geodesic, directly comparable with
    :meth:`Geometry.dlog_positional`.
    """
    m = geometry.dim
    D = np.empty((m, m))
    for i in range(m):
        e = np.eye(m)[i]
        bp = geometry.exp(base, h * e)
        bm = geometry.exp(base, -h * e)
        lp = geometry.log(bp, target)
        lm = geometry.log(bm, target)
        # transport back to `base` along the reversed perturbation geodesic
        lp0 = geometry.parallel_transport(bp, geometry.log(bp, base), lp)
        lm0 = geometry.parallel_transport(bm, geometry.log(bm, base), lm)
        D[:, i] = (lp0 - lm0) / (2.0 * h)
    return D


# ----------------------------------------------------------------------
# ODE oracles
# ----------------------------------------------------------------------


def _rk4(f, y0, t1, steps):
    y = np.array(y0, dtype=float)
    h = t1 / steps
    t = 0.0
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return y


def pt_ode_oracle(geometry, base, v, w, steps=1000):
    """Parallel transport of ``w`` along the geodesic of ``v`` obtained by
    RK4 integration of the transport ODE in trivialized coordinates.

    Global error O(steps^-4).  Requires the geometry to supply trivialized
    connection coefficients via ``geodesic_transport_rhs``.
    """
    v = geometry._check_tangent(v)
    w = geometry._check_tangent(w)

    def rhs(_t, y):
        return geometry.geodesic_transport_rhs(v, y)

    return _rk4(rhs, w, 1.0, steps)


def jacobi_ode_jacobian(geometry, base, v, w, steps=400):
    """Tangential pushforward action ``J2[w]`` recovered from the Jacobi
    field ODE along the geodesic of ``v``.

    The second-order field equation is integrated in the tangent space at
    ``base`` by pulling the field back with parallel transport; with initial
    conditions (0, w) the field at t=1 equals ``J2[w]`` expressed at the
    geodesic endpoint.
    """
    v = geometry._check_tangent(v)
    w = geometry._check_tangent(w)
    m = geometry.dim

    def rhs(t, state):
        k, kdot = state[:m], state[m:]
        P = geometry.transport_matrix(base, t * v) if t != 0.0 else np.eye(m)
        r = geometry.curvature(base, v, P @ k, v)
        return np.concatenate([kdot, np.linalg.solve(P, r) if t != 0.0 else r])

    y0 = np.concatenate([np.zeros(m), w])
    out = _rk4(rhs, y0, 1.0, steps)
    return geometry.parallel_transport(base, v, out[:m])


# ----------------------------------------------------------------------
# order-fit diagnostics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class OrderFitRow:
    """One sampled point of an approximation-order sweep."""

    mode: str
    scale: float
    error: float


@dataclass(frozen=True)
class OrderFitResult:
    """Log-log slope fit of an approximation error against |v|."""

    geometry: str
    which: str
    mode: str
    slope: float
    max_error: float
    rows: tuple

    def csv_rows(self):
        return [(r.mode, r.scale, r.error) for r in self.rows]


def jacobian_order_fit(
    geometry,
    which="tangential",
    mode="pt_curvature",
    scales=None,
    samples=4,
    seed=0,
    reference="closed_form",
    resolution_floor=1e-11,
):
    """Fit the log-log error slope of an approximate Jacobian mode.

    For each scale ``s`` the error ``||J_mode - J_reference||_F`` is averaged
    over ``samples`` random directions with ``|v| = s``.  Scales whose mean
    error falls below ``resolution_floor`` are excluded from the fit (the
    difference is unresolvable in double precision there); they are kept in
    the rows for reporting.

    The default reference is the exact closed form.  A ``finite_diff``
    reference is supported but only resolves errors above ~1e-9, so restrict
    the scales accordingly when using it.
    """
    if scales is None:
        scales = np.logspace(-3, -1, 9)
    rng = np.random.default_rng(seed)
    base = geometry.identity_point()
    jac = {
        "tangential": geometry.jacobian_tangential,
        "positional": geometry.jacobian_positional,
    }[which]

    dirs = []
    for _ in range(samples):
        d = rng.standard_normal(geometry.dim)
        dirs.append(d / np.linalg.norm(d))

    rows = []
    for s in scales:
        errs = []
        for d in dirs:
            target = geometry.exp(base, s * d)
            J = jac(base, target, mode)
            Jref = jac(base, target, reference)
            errs.append(np.linalg.norm(J - Jref))
        rows.append(OrderFitRow(mode, float(s), float(np.mean(errs))))

    usable = [(r.scale, r.error) for r in rows if r.error > resolution_floor]
    if len(usable) < 3:
        raise GeometryError(
            "order fit has fewer than 3 resolvable scales; widen the window"
        )
    xs = np.log([u[0] for u in usable])
    ys = np.log([u[1] for u in usable])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return OrderFitResult(
        geometry=geometry.name,
        which=which,
        mode=mode,
        slope=slope,
        max_error=float(max(r.error for r in rows)),
        rows=tuple(rows),
    )
