"""Independent numerical oracles used by the tests.

These deliberately avoid the closed forms in the package: the matrix
exponential is summed term by term, the matrix logarithm comes from scipy's
inverse-scaling-and-squaring implementation, and the Kalman filter is the
textbook dense recursion.
"""

import numpy as np
import scipy.linalg


def expm_series(X, tol=1e-14, max_terms=80):
    """Term-by-term power series for expm, summed until |term| < tol."""
    X = np.asarray(X, dtype=float)
    out = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    for k in range(1, max_terms):
        term = term @ X / k
        out = out + term
        if np.abs(term).max() < tol:
            return out
    raise RuntimeError("expm series did not converge")


def logm_iss(X):
    """Matrix logarithm via inverse scaling and squaring (scipy)."""
    return np.real(scipy.linalg.logm(np.asarray(X, dtype=float)))


def phi_series(A, tol=1e-15, max_terms=80):
    """sum_{k>=0} A^k / (k+1)!  (the Jacobian of the exponential)."""
    A = np.asarray(A, dtype=float)
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, max_terms):
        term = term @ A / (k + 1)
        out = out + term
        if np.abs(term).max() < tol:
            return out
    raise RuntimeError("phi series did not converge")


class ReferenceKalman:
    """Textbook linear Kalman filter: x' = Ax + Bu + w, y = Cx + v."""

    def __init__(self, A, B, C, Q, R):
        self.A, self.B, self.C, self.Q, self.R = (
            np.asarray(M, dtype=float) for M in (A, B, C, Q, R)
        )

    def predict(self, x, P, u):
        x = self.A @ x + self.B @ u
        P = self.A @ P @ self.A.T + self.Q
        return x, P

    def update(self, x, P, y):
        S = self.C @ P @ self.C.T + self.R
        K = P @ self.C.T @ np.linalg.inv(S)
        x = x + K @ (y - self.C @ x)
        P = (np.eye(P.shape[0]) - K @ self.C) @ P
        return x, P


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + np.eye(n))
