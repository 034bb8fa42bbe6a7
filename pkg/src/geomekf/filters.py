"""Extended Kalman filters on geometric manifolds.

The filter family shares one propagate step and dispatches the measurement
step on a :class:`FilterVariant`:

* ``geometric_update`` re-expresses the measurement noise covariance in the
  chart at the predicted output through the output-manifold pushforwards,
  ``R+ = J1^{-1} J2 R J2^T J1^{-T}`` evaluated from the predicted output to
  the received measurement.  Without the flag ``R+ = R`` (the classical EKF
  in exponential coordinates).
* ``geometric_reset`` transports the posterior covariance into the chart at
  the updated estimate, ``cov <- J2 cov J2^T`` with ``J2`` from the old
  reference to the new estimate.  Without the flag the covariance is reused
  unchanged.
* ``iterated`` relinearizes the update at successively better points (the
  iterated EKF); the geometric flags control the same two corrections inside
  each pass.

Mean conventions are fixed by the flat-space reduction: on Euclidean space
with a linear model every variant reproduces the textbook Kalman filter, and
the update moves the estimate toward the measurement.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .manifold import Geometry, GeometryError

__all__ = [
    "FilterState",
    "SystemModel",
    "MeasurementModel",
    "FilterVariant",
    "UpdateInfo",
    "StepInfo",
    "FilterNumericalError",
    "DivergenceError",
    "propagate",
    "update",
    "update_at",
    "reset",
    "iterated_update",
    "step",
]


class FilterNumericalError(RuntimeError):
    """A linear solve inside the filter failed; carries condition info."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class DivergenceError(RuntimeError):
    """The iterated update diverged; carries the iterate step norms."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class FilterState:
    """Estimate (a manifold point), covariance in its tangent chart, and the
    time index ``k``."""

    estimate: np.ndarray
    cov: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time system ``xi_{k+1} = F(xi_k, u) (+) process noise``.

    ``df`` returns the exact error-state transition matrix
    ``A = D theta_{F(xi)} ( F(exp_xi(eps), u) )`` at eps = 0; when absent it
    is obtained by central differences of that error map.  ``b_jac`` is the
    input Jacobian used to fold input noise into the process noise,
    ``Q = q_process + B q_input B^T``.
    """

    geometry: Geometry
    f: callable
    df: callable = None
    b_jac: callable = None
    q_process: np.ndarray = None
    q_input: np.ndarray = None
    input_dim: int = 0

    def transition_matrix(self, xi, u, h=1e-6):
        if self.df is not None:
            return np.asarray(self.df(xi, u), dtype=float)
        geo = self.geometry
        xi_next = self.f(xi, u)
        m = geo.dim
        A = np.empty((m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = h
            plus = geo.log(xi_next, self.f(geo.exp(xi, e), u))
            minus = geo.log(xi_next, self.f(geo.exp(xi, -e), u))
            A[:, i] = (plus - minus) / (2.0 * h)
        return A

    def input_matrix(self, xi, u, h=1e-6):
        if self.b_jac is not None:
            return np.asarray(self.b_jac(xi, u), dtype=float)
        if self.q_input is None:
            return None
        geo = self.geometry
        u = np.asarray(u, dtype=float)
        xi_next = self.f(xi, u)
        m, p = geo.dim, u.shape[0]
        B = np.empty((m, p))
        for i in range(p):
            e = np.zeros(p)
            e[i] = h
            plus = geo.log(xi_next, self.f(xi, u + e))
            minus = geo.log(xi_next, self.f(xi, u - e))
            B[:, i] = (plus - minus) / (2.0 * h)
        return B

    def process_noise(self, xi, u):
        m = self.geometry.dim
        Q = np.zeros((m, m)) if self.q_process is None else np.asarray(
            self.q_process, dtype=float
        ).copy()
        if self.q_input is not None:
            B = self.input_matrix(xi, u)
            Q = Q + B @ np.asarray(self.q_input, dtype=float) @ B.T
        return 0.5 * (Q + Q.T)


@dataclass(frozen=True)
class MeasurementModel:
    """Output map ``h`` into an output manifold with measurement noise
    covariance ``R`` expressed in the output chart.  ``dh`` returns the
    output Jacobian in the (state chart -> output chart) trivializations;
    when absent it is computed by central differences."""

    geometry_out: Geometry
    h: callable
    R: np.ndarray
    dh: callable = None
    geometry_state: Geometry = None

    def output_matrix(self, xi, h_step=1e-6):
        if self.dh is not None:
            return np.asarray(self.dh(xi), dtype=float)
        if self.geometry_state is None:
            raise GeometryError(
                "finite-difference output Jacobian needs geometry_state"
            )
        geo_s, geo_o = self.geometry_state, self.geometry_out
        y0 = self.h(xi)
        C = np.empty((geo_o.dim, geo_s.dim))
        for i in range(geo_s.dim):
            e = np.zeros(geo_s.dim)
            e[i] = h_step
            plus = geo_o.log(y0, self.h(geo_s.exp(xi, e)))
            minus = geo_o.log(y0, self.h(geo_s.exp(xi, -e)))
            C[:, i] = (plus - minus) / (2.0 * h_step)
        return C


@dataclass(frozen=True)
class FilterVariant:
    """Flag set selecting a filter from the family."""

    geometric_update: bool = False
    geometric_reset: bool = False
    iterated: bool = False
    max_iters: int = 10
    iter_tol: float = 1e-8
    name: str = ""

    def __post_init__(self):
        if self.iterated and self.max_iters < 1:
            raise ValueError("iterated variants need max_iters >= 1")


@dataclass(frozen=True)
class UpdateInfo:
    """Diagnostics from one measurement update."""

    innovation_cond: float = np.nan
    iterations: int = 0
    step_norms: tuple = ()


@dataclass(frozen=True)
class StepInfo:
    """Per-step trace record for the benchmark harness."""

    k: int
    mu: np.ndarray = None
    iterations: int = 0
    innovation_cond: float = np.nan

    def trace_row(self, state: FilterState):
        """Serialized row: k, flattened estimate, upper-triangular cov,
        correction mean, iteration count, condition number."""
        est = np.asarray(state.estimate, dtype=float).ravel()
        iu = np.triu_indices(state.cov.shape[0])
        mu = np.zeros(state.cov.shape[0]) if self.mu is None else self.mu
        return np.concatenate(
            [
                [float(self.k)],
                est,
                np.asarray(state.cov)[iu],
                mu,
                [float(self.iterations), float(self.innovation_cond)],
            ]
        )


# ----------------------------------------------------------------------
# filter steps
# ----------------------------------------------------------------------


def propagate(state: FilterState, u, model: SystemModel,
              noise_ref=None, mode="closed_form") -> FilterState:
    """Prediction: push the estimate through ``F`` and the covariance through
    the linearized error dynamics, ``cov <- A cov A^T + Q``.

    ``Q`` is used as assembled in the chart at the propagated estimate; the
    exact re-expression would require the unobservable noise-free propagated
    state, so the model covariance stands in for it.  For research
    comparisons a reference point may be supplied through ``noise_ref``
    (e.g. the noise-free propagation of the true state in a simulation), in
    which case the noise covariance is transported from its chart,
    ``Q <- J2^{-1} Q J2^{-T}``.  Off by default.
    """
    xi_next = model.f(state.estimate, u)
    A = model.transition_matrix(state.estimate, u)
    if not np.all(np.isfinite(A)):
        raise FilterNumericalError("non-finite transition matrix entries")
    Q = model.process_noise(state.estimate, u)
    if noise_ref is not None:
        J2inv = model.geometry.jacobian_tangential_inv(xi_next, noise_ref, mode)
        Q = J2inv @ Q @ J2inv.T
        Q = 0.5 * (Q + Q.T)
    cov = A @ state.cov @ A.T + Q
    return FilterState(xi_next, 0.5 * (cov + cov.T), state.k + 1)


def _r_dagger(geo_out, y_pred, y, R, mode="closed_form"):
    """Measurement covariance re-expressed at the predicted output:
    ``J1^{-1} J2 R J2^T J1^{-T}`` with both maps from ``y_pred`` to ``y``.

    ``J1`` is the coordinate-carried positional pushforward, so the residual
    linearization ``-J2^{-1} J1`` is the chart derivative of the output log
    and ``J1^{-1} J2`` undoes it; to first order in the residual this is the
    re-expression of the noise covariance from the chart at the measurement
    into the chart at the prediction.
    """
    J2 = geo_out.jacobian_tangential(y_pred, y, mode)
    J1 = geo_out.jacobian_positional(y_pred, y, mode, carry="coords")
    M = np.linalg.solve(J1, J2)
    out = M @ R @ M.T
    return 0.5 * (out + out.T)


def _spd_solve(S, B, what):
    """Solve S X = B for SPD S, reporting the condition number on failure."""
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    if w[0] <= 0.0:
        cond = np.inf if w[0] <= 0.0 else w[-1] / w[0]
        raise FilterNumericalError(
            f"{what} is not positive definite (eigenvalues in "
            f"[{w[0]:.3e}, {w[-1]:.3e}])",
            cond=cond,
        )
    return np.linalg.solve(S, B), w[-1] / w[0]


def update(state: FilterState, y, model: MeasurementModel, geometric: bool,
           mode="closed_form"):
    """Measurement update in the chart at the current estimate.

    Returns ``(mu, cov_plus, info)``: the posterior mean in the chart (the
    residual ``log(y_pred, y)`` scaled through the Kalman gain, signed so the
    estimate moves toward the measurement), the Joseph-stabilized posterior
    covariance, and solver diagnostics.
    """
    geo_out = model.geometry_out
    y_pred = model.h(state.estimate)
    r = geo_out.log(y_pred, y)
    C = model.output_matrix(state.estimate)
    R = np.asarray(model.R, dtype=float)
    Rd = _r_dagger(geo_out, y_pred, y, R, mode) if geometric else R
    S = C @ state.cov @ C.T + Rd
    SinvC_cov, cond = _spd_solve(S, C @ state.cov, "innovation covariance")
    K = SinvC_cov.T  # cov C^T S^{-1}
    mu = K @ r
    IKC = np.eye(state.cov.shape[0]) - K @ C
    cov_plus = IKC @ state.cov @ IKC.T + K @ Rd @ K.T
    cov_plus = 0.5 * (cov_plus + cov_plus.T)
    return mu, cov_plus, UpdateInfo(innovation_cond=cond)


def update_at(state: FilterState, y, model: MeasurementModel,
              geometry: Geometry, lin_point, geometric: bool,
              mode="closed_form"):
    """Measurement update linearized at an arbitrary point ``lin_point``.

    The prior is re-expressed in the chart at the linearization point,
    ``cov+dagger = J2^{-1} cov J2^{-T}`` with ``J2`` from ``lin_point`` to the
    estimate, and the posterior is assembled in information form:

        cov_plus = (cov_dagger^{-1} + C^T Rd^{-1} C)^{-1}
        mu       = cov_plus (C^T Rd^{-1} r + cov_dagger^{-1} b)

    with ``r = log(h(lin_point), y)`` and ``b = log(lin_point, estimate)``.
    At ``lin_point == estimate`` this reproduces :func:`update` exactly.
    Returns ``(mu, cov_plus, cov_dagger, info)`` in the ``lin_point`` chart.
    """
    geo_out = model.geometry_out
    m = geometry.dim
    b = geometry.log(lin_point, state.estimate)
    if geometric:
        J2 = geometry.jacobian_tangential(lin_point, state.estimate, mode)
        X = np.linalg.solve(J2, state.cov)
        cov_dagger = np.linalg.solve(J2, X.T).T
        cov_dagger = 0.5 * (cov_dagger + cov_dagger.T)
    else:
        cov_dagger = state.cov
    y_pred = model.h(lin_point)
    r = geo_out.log(y_pred, y)
    C = model.output_matrix(lin_point)
    R = np.asarray(model.R, dtype=float)
    Rd = _r_dagger(geo_out, y_pred, y, R, mode) if geometric else R
    Rd_inv_C, cond_r = _spd_solve(Rd, C, "re-expressed measurement covariance")
    Rd_inv_r = np.linalg.solve(Rd, r)
    prior_info, cond_p = _spd_solve(cov_dagger, np.eye(m), "prior covariance")
    info_mat = prior_info + C.T @ Rd_inv_C
    cov_plus, cond_s = _spd_solve(info_mat, np.eye(m), "posterior information")
    cov_plus = 0.5 * (cov_plus + cov_plus.T)
    mu = cov_plus @ (C.T @ Rd_inv_r + prior_info @ b)
    return mu, cov_plus, cov_dagger, UpdateInfo(
        innovation_cond=max(cond_r, cond_p, cond_s)
    )


def reset(geometry: Geometry, ref, mu, cov_plus, geometric: bool, k=0,
          mode="closed_form"):
    """Move the reference point to ``ref (+) mu`` and re-center the
    covariance there: ``cov <- J2 cov_plus J2^T`` (geometric) or unchanged.

    A correction beyond the chart bound is applied anyway (the group
    exponential is globally defined) with a warning.
    """
    mu = np.asarray(mu, dtype=float)
    if np.linalg.norm(mu) > geometry.injectivity_radius:
        warnings.warn(
            "reset correction exceeds the chart bound; transport is "
            "evaluated on the principal branch",
            UserWarning,
        )
    new_est = geometry.exp(ref, mu)
    if geometric:
        J2 = geometry.jacobian_tangential(ref, new_est, mode)
        cov = J2 @ cov_plus @ J2.T
        cov = 0.5 * (cov + cov.T)
    else:
        cov = cov_plus
    return FilterState(new_est, cov, k)


def iterated_update(state: FilterState, y, model: MeasurementModel,
                    geometry: Geometry, variant: FilterVariant,
                    mode="closed_form"):
    """Iterated measurement update (relinearize, step, repeat) plus reset.

    Starting from the prediction, each pass computes the posterior mean in
    the chart at the current linearization point and moves the point by it;
    iteration stops when a step falls below ``iter_tol`` or the budget is
    exhausted.  The final pass supplies the posterior used for the reset,
    applied at the converged point so the (small) residual step is not lost.
    ``info.iterations`` counts the applied full steps.
    """
    if not variant.iterated:
        raise ValueError("iterated_update requires variant.iterated")
    lin = state.estimate
    norms = []
    grow = 0
    applied = 0
    for i in range(variant.max_iters):
        mu, cov_plus, _, uinfo = update_at(
            state, y, model, geometry, lin, variant.geometric_update, mode
        )
        n = float(np.linalg.norm(mu))
        norms.append(n)
        # growth below tolerance scale is roundoff jitter, not divergence
        if len(norms) >= 2 and n > norms[-2] and n > 10.0 * variant.iter_tol:
            grow += 1
            if grow >= 3:
                raise DivergenceError(
                    "iterated update diverged: step norm grew for 3 "
                    "consecutive iterations",
                    norms,
                )
        else:
            grow = 0
        if n < variant.iter_tol or i == variant.max_iters - 1:
            break
        lin = geometry.exp(lin, mu)
        applied += 1
    out = reset(geometry, lin, mu, cov_plus, variant.geometric_reset,
                k=state.k, mode=mode)
    info = UpdateInfo(innovation_cond=uinfo.innovation_cond,
                      iterations=applied, step_norms=tuple(norms))
    return out, info


def step(state: FilterState, u, y, system: SystemModel,
         measurement: MeasurementModel = None,
         variant: FilterVariant = FilterVariant(), mode="closed_form"):
    """One full filter cycle: propagate, then (if a measurement is present)
    update and reset according to the variant flags.

    Returns ``(state, StepInfo)``.
    """
    state = propagate(state, u, system)
    if y is None:
        return state, StepInfo(k=state.k)
    if variant.iterated:
        new_state, uinfo = iterated_update(
            state, y, measurement, system.geometry, variant, mode
        )
        mu = None
    else:
        mu, cov_plus, uinfo = update(
            state, y, measurement, variant.geometric_update, mode
        )
        new_state = reset(
            system.geometry, state.estimate, mu, cov_plus,
            variant.geometric_reset, k=state.k, mode=mode,
        )
    return new_state, StepInfo(
        k=new_state.k,
        mu=mu,
        iterations=uinfo.iterations,
        innovation_cond=uinfo.innovation_cond,
    )
