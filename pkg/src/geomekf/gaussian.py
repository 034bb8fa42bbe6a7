"""Concentrated Gaussian distributions on geometric manifolds.

A concentrated Gaussian is a Gaussian-shaped density in the normal
coordinates anchored at a reference point: ``xi = ref (+) (mu + L n)`` with
``n`` standard normal and ``L L^T = cov``.  The class stores the chart data
``(ref, mu, cov)``; the normalizer of the density is never computed (it would
require instantiating a volume measure on the manifold), so densities are
exposed in unnormalized log form only, which is all the filters need.

``reexpress`` moves a distribution to a different chart with minimal
information loss: the anchor point ``ref (+) mu`` is preserved exactly and
the covariance is conjugated by the tangential pushforwards evaluated at that
anchor, which is optimal up to a remainder of order ``tr(cov^2)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .manifold import Geometry, GeometryError, InjectivityWarning

__all__ = [
    "ConcentratedGaussian",
    "covariance_pushforward",
    "reexpress",
    "sample",
    "unnorm_log_density",
    "spd_floor_events",
    "reset_spd_floor_counter",
]

# count of covariance eigenvalue-floor interventions (diagnostic)
_SPD_FLOOR_EVENTS = 0


def spd_floor_events():
    """Number of times an eigenvalue floor was applied to a covariance."""
    return _SPD_FLOOR_EVENTS


def reset_spd_floor_counter():
    global _SPD_FLOOR_EVENTS
    _SPD_FLOOR_EVENTS = 0


def _symmetrize_spd(cov, dim):
    """Symmetrize and, if needed, floor eigenvalues at 1e-12 tr/m."""
    global _SPD_FLOOR_EVENTS
    cov = 0.5 * (cov + cov.T)
    w = np.linalg.eigvalsh(cov)
    floor = 1e-12 * max(np.trace(cov), 0.0) / dim
    if w[0] <= 0.0 or w[0] < floor:
        vals, vecs = np.linalg.eigh(cov)
        vals = np.maximum(vals, floor if floor > 0.0 else 1e-300)
        cov = vecs @ np.diag(vals) @ vecs.T
        cov = 0.5 * (cov + cov.T)
        _SPD_FLOOR_EVENTS += 1
    return cov


@dataclass(frozen=True)
class ConcentratedGaussian:
    """Gaussian in the normal coordinates at ``ref``: mean ``mu`` in R^m and
    SPD covariance ``cov``.  The covariance is symmetrized on construction."""

    geometry: Geometry
    ref: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = self.geometry.dim
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (m,):
            raise GeometryError(f"mean must have shape ({m},), got {mean.shape}")
        if cov.shape != (m, m):
            raise GeometryError(f"cov must be {m}x{m}, got {cov.shape}")
        if not self.geometry.within_injectivity(mean):
            warnings.warn(
                "mean lies outside the chart's injectivity bound",
                InjectivityWarning,
            )
        object.__setattr__(self, "ref", np.asarray(self.ref, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _symmetrize_spd(cov, m))

    @property
    def mode(self):
        """The anchor point ``ref (+) mean``."""
        return self.geometry.exp(self.ref, self.mean)


def sample(g: ConcentratedGaussian, rng):
    """Draw ``ref (+) (mu + L n)`` with ``n`` standard normal.

    ``rng`` is a seed or a ``numpy.random.Generator``; parallel consumers
    should pass independent generators for reproducible streams.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    try:
        L = np.linalg.cholesky(g.cov)
    except np.linalg.LinAlgError as err:
        raise GeometryError("covariance is not positive definite") from err
    n = rng.standard_normal(g.geometry.dim)
    return g.geometry.exp(g.ref, g.mean + L @ n)


def covariance_pushforward(D, cov):
    """Covariance of a linearized map: ``D cov D^T``, symmetrized.

    For a nonlinear map this is the leading term; the neglected remainder is
    of order ``tr(cov^2)``.
    """
    D = np.asarray(D, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if D.ndim != 2 or cov.shape != (D.shape[1], D.shape[1]):
        raise GeometryError(f"shape mismatch: D is {D.shape}, cov is {cov.shape}")
    out = D @ cov @ D.T
    return 0.5 * (out + out.T)


def reexpress(g: ConcentratedGaussian, new_ref, mode="closed_form"):
    """Re-express ``g`` in the normal coordinates at ``new_ref``.

    The anchor ``xs = g.ref (+) g.mean`` is preserved exactly:
    ``new_mean = log(new_ref, xs)``.  The covariance picks up both tangential
    pushforwards evaluated at ``xs``,

        cov2 = J2(new_ref -> xs)^{-1} J2(g.ref -> xs) cov J2^T J2^{-T},

    which minimizes the KL divergence to ``g`` up to O(tr(cov^2)).
    """
    geo = g.geometry
    xs = g.mode
    mu2 = geo.log(new_ref, xs)  # raises ChartError outside the chart overlap
    J_old = geo.jacobian_tangential(g.ref, xs, mode)
    J_new_inv = geo.jacobian_tangential_inv(new_ref, xs, mode)
    D = J_new_inv @ J_old
    return ConcentratedGaussian(
        geo, np.asarray(new_ref, dtype=float), mu2, covariance_pushforward(D, g.cov)
    )


def unnorm_log_density(g: ConcentratedGaussian, xi):
    """Log density up to the (never computed) normalizing constant:
    ``-(log(ref, xi) - mu)^T cov^{-1} (...) / 2``."""
    r = g.geometry.log(g.ref, xi) - g.mean
    return -0.5 * float(r @ np.linalg.solve(g.cov, r))
