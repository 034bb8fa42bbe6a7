"""Concrete geometries: Euclidean space, SO(3), SE(3) and SE2(3).

The matrix groups carry the symmetric bi-invariant (0)-connection, whose
geodesics through a point are the translated one-parameter subgroups.  With a
``left`` trivialization (``exp(base, v) = base @ expm(hat(v))``) the
connection data in coordinates is

    transport along v:   w(1) = expm(-1/2 ad_v) w(0)
    curvature:           R(x, y) z = -1/4 [[x, y], z]

and the two exponential pushforwards have exact closed forms

    J2 = phi(-ad_v),  phi(A) = (expm(A) - I) A^{-1}
    J1 = (I + Adjoint(expm(-hat(v)))) / 2.

A ``right`` trivialization (``exp(base, v) = expm(hat(v)) @ base``) flips the
sign of ad_v in the transport and in both closed forms.  Coordinate ordering
is fixed once here: SO(3) uses the rotation vector; SE(3) orders tangents as
(rotation, translation); SE2(3) as (rotation, velocity, position).
"""

from __future__ import annotations

import warnings

import numpy as np

from .manifold import (
    ChartError,
    Geometry,
    GeometryError,
    InjectivityWarning,
)

__all__ = [
    "Euclidean",
    "SO3",
    "SE3",
    "SE23",
    "hat3",
    "vee3",
    "so3_exp",
    "so3_log",
    "so3_exp_batch",
    "so3_log_batch",
    "so3_left_jacobian",
    "so3_left_jacobian_batch",
    "so3_left_jacobian_inv",
]

_SMALL_ANGLE = 1e-4  # switchover to series for the trigonometric closed forms


# ----------------------------------------------------------------------
# so(3) primitives
# ----------------------------------------------------------------------


def hat3(v):
    """Map a 3-vector to the corresponding skew-symmetric matrix."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee3(X):
    """Inverse of :func:`hat3`."""
    return np.array([X[2, 1], X[0, 2], X[1, 0]])


def so3_exp(phi):
    """Rodrigues rotation for a rotation vector ``phi``."""
    theta = np.linalg.norm(phi)
    K = hat3(phi)
    if theta < _SMALL_ANGLE:
        # exp = I + K + K^2/2 with relative error ~ theta^4/24
        return np.eye(3) + K + 0.5 * (K @ K) + (K @ K @ K) / 6.0
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def so3_log(R):
    """Principal rotation vector of ``R``; raises near the pi branch cut."""
    skew = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos_theta = 0.5 * (np.trace(R) - 1.0)
    sin_theta = np.linalg.norm(skew)
    theta = np.arctan2(sin_theta, cos_theta)
    if theta >= np.pi - 1e-6:
        raise ChartError(
            f"rotation angle {theta:.9f} is within 1e-6 of pi: logarithm is "
            "not uniquely defined"
        )
    if theta < _SMALL_ANGLE:
        # vee(R - R^T)/2 = sin(theta) * axis; sin(theta)/theta ~ 1 - theta^2/6
        return skew * (1.0 + theta * theta / 6.0)
    if theta > 3.0:
        # near pi the skew part loses precision; recover the axis from the
        # symmetric part and take signs from the skew part
        S = 0.5 * (R + R.T)
        axis_sq = np.clip((np.diag(S) - cos_theta) / (1.0 - cos_theta), 0.0, None)
        axis = np.sqrt(axis_sq)
        axis *= np.where(skew >= 0.0, 1.0, -1.0)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ChartError("rotation angle is numerically pi")
        return theta * axis / n
    return (theta / sin_theta) * skew


def so3_exp_batch(phis):
    """Vectorized Rodrigues map: ``(n, 3) -> (n, 3, 3)``."""
    phis = np.asarray(phis, dtype=float)
    n = phis.shape[0]
    theta = np.linalg.norm(phis, axis=1)
    K = np.zeros((n, 3, 3))
    K[:, 0, 1] = -phis[:, 2]
    K[:, 0, 2] = phis[:, 1]
    K[:, 1, 0] = phis[:, 2]
    K[:, 1, 2] = -phis[:, 0]
    K[:, 2, 0] = -phis[:, 1]
    K[:, 2, 1] = phis[:, 0]
    K2 = K @ K
    small = theta < _SMALL_ANGLE
    t2 = np.where(small, 1.0, theta * theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / np.sqrt(t2))
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / t2)
    return np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * K2


def so3_log_batch(Rs):
    """Vectorized principal log: ``(n, 3, 3) -> (n, 3)``.

    Assumes all rotation angles stay well inside the pi branch (the batched
    path is used for sampling statistics where that holds by construction).
    """
    Rs = np.asarray(Rs, dtype=float)
    skew = 0.5 * np.stack(
        [
            Rs[:, 2, 1] - Rs[:, 1, 2],
            Rs[:, 0, 2] - Rs[:, 2, 0],
            Rs[:, 1, 0] - Rs[:, 0, 1],
        ],
        axis=1,
    )
    cos_theta = 0.5 * (np.trace(Rs, axis1=1, axis2=2) - 1.0)
    sin_theta = np.linalg.norm(skew, axis=1)
    theta = np.arctan2(sin_theta, cos_theta)
    if np.any(theta >= np.pi - 1e-6):
        raise ChartError("batched log hit the pi branch cut")
    small = theta < _SMALL_ANGLE
    scale = np.where(
        small, 1.0 + theta * theta / 6.0, theta / np.where(small, 1.0, sin_theta)
    )
    return scale[:, None] * skew


def so3_left_jacobian_batch(phis):
    """Vectorized :func:`so3_left_jacobian`: ``(n, 3) -> (n, 3, 3)``."""
    phis = np.asarray(phis, dtype=float)
    n = phis.shape[0]
    theta = np.linalg.norm(phis, axis=1)
    K = np.zeros((n, 3, 3))
    K[:, 0, 1] = -phis[:, 2]
    K[:, 0, 2] = phis[:, 1]
    K[:, 1, 0] = phis[:, 2]
    K[:, 1, 2] = -phis[:, 0]
    K[:, 2, 0] = -phis[:, 1]
    K[:, 2, 1] = phis[:, 0]
    K2 = K @ K
    small = theta < _SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(th)) / th**2)
    b = np.where(
        small, 1.0 / 6.0 - theta**2 / 120.0, (th - np.sin(th)) / th**3
    )
    return np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * K2


def so3_left_jacobian(v):
    """Jacobian of the SO(3) exponential, J_l(v) = sum ad_v^k / (k+1)!."""
    theta = np.linalg.norm(v)
    K = hat3(v)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0 + (K @ K @ K) / 24.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian_inv(v):
    """Closed-form inverse of :func:`so3_left_jacobian`.

    Requires ``|v| < 2 pi`` where the Jacobian is invertible.
    """
    theta = np.linalg.norm(v)
    if theta >= 2.0 * np.pi - 1e-9:
        raise GeometryError(
            f"left Jacobian inverse is singular at |v| = {theta:.6f} ~ 2 pi"
        )
    K = hat3(v)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    # (1 + cos)/(2 sin) = cot(theta/2)/2, stable through theta = pi
    c = 1.0 / (theta * theta) - 1.0 / (2.0 * theta * np.tan(0.5 * theta))
    return np.eye(3) - 0.5 * K + c * (K @ K)


def _barfoot_Q(phi, rho):
    """Coupling block of the SE(3)-type left Jacobian.

    Q collects the mixed phi/rho terms of phi(ad) for the semidirect products
    so(3) x R^3; the same block serves the velocity and position factors of
    se2(3).
    """
    theta = np.linalg.norm(phi)
    px = hat3(phi)
    rx = hat3(rho)
    pr = px @ rx
    rp = rx @ px
    prp = px @ rx @ px
    if theta < _SMALL_ANGLE:
        c1, c2, c3 = 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0
    else:
        t2 = theta * theta
        t4 = t2 * t2
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / (t2 * theta)
        c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta)
    return (
        0.5 * rx
        + c1 * (pr + rp + prp)
        + c2 * (px @ pr + rp @ px - 3.0 * prp)
        + c3 * (prp @ px + px @ prp)
    )


# ----------------------------------------------------------------------
# geometries
# ----------------------------------------------------------------------


class Euclidean(Geometry):
    """Flat R^n: exp is addition, transport is the identity, curvature is 0."""

    def __init__(self, dim, name=None):
        if dim < 1:
            raise GeometryError("dim must be >= 1")
        self.dim = int(dim)
        self.name = name or f"R{dim}"
        self.convention = "left"
        self.injectivity_radius = np.inf

    def exp(self, base, v):
        v = self._check_tangent(v)
        return np.asarray(base, dtype=float) + v

    def log(self, base, target):
        return np.asarray(target, dtype=float) - np.asarray(base, dtype=float)

    def parallel_transport(self, base, v, w):
        self._check_tangent(v)
        return self._check_tangent(w).copy()

    def curvature(self, base, x, y, z):
        self._check_tangent(x), self._check_tangent(y), self._check_tangent(z)
        return np.zeros(self.dim)

    def transport_matrix(self, base, v):
        return np.eye(self.dim)

    def curvature_quad(self, base, v):
        return np.zeros((self.dim, self.dim))

    def geodesic_transport_rhs(self, v, w):
        return np.zeros(self.dim)

    def _jt_closed(self, base, v):
        return np.eye(self.dim)

    def _jt_inv_closed(self, base, v):
        return np.eye(self.dim)

    def _jp_closed(self, base, v):
        return np.eye(self.dim)

    def _jp_coords_closed(self, base, v):
        return np.eye(self.dim)

    def identity_point(self):
        return np.zeros(self.dim)


class MatrixLieGroup(Geometry):
    """Matrix Lie group with the Cartan-Schouten (0)-connection.

    Subclasses supply hat/vee, the group exponential/logarithm closed forms,
    the group adjoint and the algebra adjoint (ad).  ``convention`` selects
    the trivialization: ``left`` reads tangents as body-frame perturbations
    ``base @ expm(hat(u))``, ``right`` as world-frame ``expm(hat(u)) @ base``.
    """

    mat_dim: int

    def __init__(self, convention="left"):
        if convention not in ("left", "right"):
            raise GeometryError(f"convention must be left or right, got {convention}")
        self.convention = convention
        # transport along v is expm(sign/2 * ad_v) in trivialized coordinates
        self._pt_sign = -1.0 if convention == "left" else 1.0

    # subclass surface -------------------------------------------------

    def hat(self, x):
        raise NotImplementedError

    def vee(self, X):
        raise NotImplementedError

    def group_exp(self, x):
        """Group exponential of algebra coordinates ``x`` (closed form)."""
        raise NotImplementedError

    def group_log(self, g):
        """Principal-branch logarithm of ``g`` in algebra coordinates."""
        raise NotImplementedError

    def adjoint(self, g):
        """Matrix of Ad_g: satisfies exp(Ad_g x) = g exp(x) g^{-1}."""
        raise NotImplementedError

    def ad(self, x):
        """Matrix of ad_x = [x, .] on algebra coordinates."""
        raise NotImplementedError

    def inverse(self, g):
        raise NotImplementedError

    def rotation_angle(self, x):
        """Norm of the rotation block of algebra coordinates ``x``."""
        raise NotImplementedError

    # shared machinery ---------------------------------------------------

    def bracket(self, x, y):
        """Lie bracket in coordinates: vee(hat(x) hat(y) - hat(y) hat(x))."""
        return self.ad(x) @ np.asarray(y, dtype=float)

    def within_injectivity(self, v):
        return self.rotation_angle(v) <= self.injectivity_radius

    def exp(self, base, v):
        v = self._check_tangent(v)
        if self.rotation_angle(v) > self.injectivity_radius + 1e-12:
            warnings.warn(
                f"{self.name}: |v| exceeds the injectivity bound "
                f"{self.injectivity_radius:.6f}; exp remains defined but log "
                "will not invert it",
                InjectivityWarning,
            )
        E = self.group_exp(v)
        base = np.asarray(base, dtype=float)
        return base @ E if self.convention == "left" else E @ base

    def log(self, base, target):
        base = np.asarray(base, dtype=float)
        target = np.asarray(target, dtype=float)
        if self.convention == "left":
            rel = self.inverse(base) @ target
        else:
            rel = target @ self.inverse(base)
        return self.group_log(rel)

    def parallel_transport(self, base, v, w):
        v = self._check_tangent(v)
        w = self._check_tangent(w)
        return self.cs0_parallel_transport(v, w)

    def cs0_parallel_transport(self, v, w):
        """(0)-connection transport in trivialized coordinates; the matrix is
        expm(-ad_v / 2) for the left convention, expm(+ad_v / 2) for right."""
        return self._transport_matrix(v) @ np.asarray(w, dtype=float)

    def _transport_matrix(self, v):
        half = 0.5 * self._pt_sign * np.asarray(v, dtype=float)
        return self.adjoint(self.group_exp(half))

    def transport_matrix(self, base, v):
        return self._transport_matrix(self._check_tangent(v))

    def curvature(self, base, x, y, z):
        x = self._check_tangent(x)
        y = self._check_tangent(y)
        z = self._check_tangent(z)
        return self.cs0_curvature(x, y, z)

    def cs0_curvature(self, x, y, z):
        """(0)-connection curvature in coordinates: -[[x, y], z] / 4.

        The same expression serves both trivializations: transport signs
        flip with the convention, curvature does not.
        """
        return -0.25 * self.bracket(self.bracket(x, y), z)

    def curvature_quad(self, base, v):
        A = self.ad(self._check_tangent(v))
        return 0.25 * (A @ A)

    def geodesic_transport_rhs(self, v, w):
        return 0.5 * self._pt_sign * self.bracket(v, w)

    def _jt_closed(self, base, v):
        # phi(sign * ad_v) with phi(A) = (expm(A) - I)/A, evaluated blockwise
        return self._phi(self._pt_sign * np.asarray(v, dtype=float))

    def _jt_inv_closed(self, base, v):
        return self._phi_inv(self._pt_sign * np.asarray(v))

    def _jp_closed(self, base, v):
        g = self.group_exp(self._pt_sign * np.asarray(v, dtype=float))
        return 0.5 * (np.eye(self.dim) + self.adjoint(g))

    def _jp_coords_closed(self, base, v):
        # conjugation by the relative element: expm(sign * ad_v)
        g = self.group_exp(self._pt_sign * np.asarray(v, dtype=float))
        return self.adjoint(g)

    def _jacobian_positional_coords(self, base, target, v, mode):
        if mode == "finite_diff":
            from .manifold import fd_exp_jacobians

            return fd_exp_jacobians(self, base, target, carry="coords")[0]
        if mode == "closed_form":
            return self._jp_coords_closed(base, v)
        # transport-based approximations of expm(sign ad_v); the linear term
        # is the frame (trivialization) derivative of the carried coordinates
        P = self._transport_matrix(v)
        T = 0.5 * self._pt_sign * self.ad(v)
        if mode == "pt_only":
            return P @ (np.eye(self.dim) + T)
        T2 = T @ T
        return P @ (np.eye(self.dim) + T + 0.5 * T2 + (T2 @ T) / 6.0)

    def _phi(self, x):
        """Closed form of phi(ad_x) = sum ad_x^k/(k+1)! (subclass hook)."""
        raise NotImplementedError

    def _phi_inv(self, x):
        raise NotImplementedError

    def identity_point(self):
        return np.eye(self.mat_dim)


class SO3(MatrixLieGroup):
    """Rotation group; tangent coordinates are rotation vectors (rad)."""

    dim = 3
    mat_dim = 3
    injectivity_radius = np.pi

    def __init__(self, convention="left"):
        super().__init__(convention)
        self.name = f"SO3[{convention}]"

    def hat(self, x):
        return hat3(x)

    def vee(self, X):
        return vee3(X)

    def group_exp(self, x):
        return so3_exp(np.asarray(x, dtype=float))

    def group_log(self, g):
        return so3_log(np.asarray(g, dtype=float))

    def adjoint(self, g):
        return np.asarray(g, dtype=float).copy()

    def ad(self, x):
        return hat3(x)

    def inverse(self, g):
        return np.asarray(g, dtype=float).T

    def rotation_angle(self, x):
        return float(np.linalg.norm(x))

    def _phi(self, x):
        return so3_left_jacobian(x)

    def _phi_inv(self, x):
        return so3_left_jacobian_inv(x)

    def project(self, point):
        U, _, Vt = np.linalg.svd(np.asarray(point, dtype=float))
        R = U @ Vt
        if np.linalg.det(R) < 0.0:
            R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
        return R

    def check_point(self, point, tol=1e-9):
        R = np.asarray(point, dtype=float)
        if R.shape != (3, 3):
            raise GeometryError(f"SO3 point must be 3x3, got {R.shape}")
        if np.linalg.norm(R.T @ R - np.eye(3)) > tol or np.linalg.det(R) <= 0.0:
            raise GeometryError("matrix is not a rotation to tolerance")
        return True


class _PoseGroup(MatrixLieGroup):
    """Shared implementation for SE(3)-like groups: a rotation block plus
    ``n_cols`` translation-type columns, each transforming identically."""

    n_cols: int

    def __init__(self, convention="left"):
        super().__init__(convention)
        self.injectivity_radius = np.pi

    # block helpers ------------------------------------------------------

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        return x[:3], [x[3 + 3 * i : 6 + 3 * i] for i in range(self.n_cols)]

    def hat(self, x):
        phi, cols = self._split(x)
        X = np.zeros((self.mat_dim, self.mat_dim))
        X[:3, :3] = hat3(phi)
        for i, c in enumerate(cols):
            X[:3, 3 + i] = c
        return X

    def vee(self, X):
        X = np.asarray(X, dtype=float)
        parts = [vee3(X[:3, :3])]
        parts += [X[:3, 3 + i] for i in range(self.n_cols)]
        return np.concatenate(parts)

    def group_exp(self, x):
        phi, cols = self._split(x)
        J = so3_left_jacobian(phi)
        g = np.eye(self.mat_dim)
        g[:3, :3] = so3_exp(phi)
        for i, c in enumerate(cols):
            g[:3, 3 + i] = J @ c
        return g

    def group_log(self, g):
        g = np.asarray(g, dtype=float)
        phi = so3_log(g[:3, :3])
        Jinv = so3_left_jacobian_inv(phi)
        parts = [phi]
        parts += [Jinv @ g[:3, 3 + i] for i in range(self.n_cols)]
        return np.concatenate(parts)

    def adjoint(self, g):
        g = np.asarray(g, dtype=float)
        R = g[:3, :3]
        A = np.zeros((self.dim, self.dim))
        A[:3, :3] = R
        for i in range(self.n_cols):
            sl = slice(3 + 3 * i, 6 + 3 * i)
            A[sl, sl] = R
            A[sl, :3] = hat3(g[:3, 3 + i]) @ R
        return A

    def ad(self, x):
        phi, cols = self._split(x)
        px = hat3(phi)
        A = np.zeros((self.dim, self.dim))
        A[:3, :3] = px
        for i, c in enumerate(cols):
            sl = slice(3 + 3 * i, 6 + 3 * i)
            A[sl, sl] = px
            A[sl, :3] = hat3(c)
        return A

    def inverse(self, g):
        g = np.asarray(g, dtype=float)
        Rt = g[:3, :3].T
        out = np.eye(self.mat_dim)
        out[:3, :3] = Rt
        for i in range(self.n_cols):
            out[:3, 3 + i] = -Rt @ g[:3, 3 + i]
        return out

    def rotation_angle(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float)[:3]))

    def _phi(self, x):
        phi, cols = self._split(x)
        J = so3_left_jacobian(phi)
        out = np.zeros((self.dim, self.dim))
        out[:3, :3] = J
        for i, c in enumerate(cols):
            sl = slice(3 + 3 * i, 6 + 3 * i)
            out[sl, sl] = J
            out[sl, :3] = _barfoot_Q(phi, c)
        return out

    def _phi_inv(self, x):
        phi, cols = self._split(x)
        Jinv = so3_left_jacobian_inv(phi)
        out = np.zeros((self.dim, self.dim))
        out[:3, :3] = Jinv
        for i, c in enumerate(cols):
            sl = slice(3 + 3 * i, 6 + 3 * i)
            out[sl, sl] = Jinv
            out[sl, :3] = -Jinv @ _barfoot_Q(phi, c) @ Jinv
        return out

    def project(self, point):
        g = np.asarray(point, dtype=float).copy()
        U, _, Vt = np.linalg.svd(g[:3, :3])
        R = U @ Vt
        if np.linalg.det(R) < 0.0:
            R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
        g[:3, :3] = R
        g[3:, :3] = 0.0
        g[3:, 3:] = np.eye(self.mat_dim - 3)
        return g

    def check_point(self, point, tol=1e-9):
        g = np.asarray(point, dtype=float)
        if g.shape != (self.mat_dim, self.mat_dim):
            raise GeometryError(
                f"{self.name} point must be {self.mat_dim}x{self.mat_dim}"
            )
        R = g[:3, :3]
        if np.linalg.norm(R.T @ R - np.eye(3)) > tol or np.linalg.det(R) <= 0.0:
            raise GeometryError("rotation block violates orthonormality")
        bottom = g[3:, :]
        expected = np.hstack(
            [np.zeros((self.mat_dim - 3, 3)), np.eye(self.mat_dim - 3)]
        )
        if not np.array_equal(bottom, expected):
            raise GeometryError("structural bottom rows must be exactly (0 I)")
        return True


class SE3(_PoseGroup):
    """Rigid-body poses; tangents ordered (rotation rad, translation m)."""

    dim = 6
    mat_dim = 4
    n_cols = 1

    def __init__(self, convention="left"):
        super().__init__(convention)
        self.name = f"SE3[{convention}]"


class SE23(_PoseGroup):
    """Extended poses (R, v, p); tangents ordered (rotation rad,
    velocity m/s, position m)."""

    dim = 9
    mat_dim = 5
    n_cols = 2

    def __init__(self, convention="left"):
        super().__init__(convention)
        self.name = f"SE23[{convention}]"
