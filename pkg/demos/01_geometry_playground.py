"""Tour of the geometry layer: charts, transport, curvature, Jacobians.

Walks through the operations every other piece of the package is built on,
using SO(3) and the extended pose group SE2(3).  Saves an approximation-order
plot to demos/out/.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from geomekf.groups import SE23, SO3
from geomekf.manifold import fd_exp_jacobians, jacobian_order_fit, pt_ode_oracle

rng = np.random.default_rng(0)
out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

# --- exp / log are a chart ------------------------------------------------
# A tangent vector (here: a rotation vector) is mapped onto the manifold by
# exp and recovered by log.  The pair is exact on the injectivity domain.
so3 = SO3()
R0 = so3.exp(np.eye(3), np.array([0.3, -0.2, 0.5]))
v = np.array([0.4, 0.1, -0.2])
R1 = so3.exp(R0, v)
print("log(exp) round trip error:", np.abs(so3.log(R0, R1) - v).max())

# --- parallel transport ----------------------------------------------------
# Transport keeps a tangent vector "as constant as the connection allows"
# along a geodesic.  The closed form is a half-angle rotation; the ODE
# integrator reproduces it.
w = np.array([1.0, 0.0, 0.0])
moved = so3.parallel_transport(R0, v, w)
ode = pt_ode_oracle(so3, R0, v, w, steps=2000)
print("transport closed form vs ODE:", np.abs(moved - ode).max())

# --- curvature -------------------------------------------------------------
# The curvature tensor measures how transport around small loops fails to
# close.  On SO(3) it is -[[x,y],z]/4 in trivialized coordinates.
x, y, z = np.eye(3)
print("R(e1,e2)e1 =", so3.curvature(R0, x, y, x), "(expect (0, -1/4, 0))")

# --- the two pushforwards of exp ------------------------------------------
# jt differentiates exp in the tangent argument, jp in the base point.  Both
# have exact closed forms on the groups, validated here against central
# finite differences.
se23 = SE23()
base = se23.random_point(rng, 0.4)
target = se23.exp(base, se23.random_tangent(rng, 0.3))
J1_fd, J2_fd = fd_exp_jacobians(se23, base, target)
print("SE2(3) jt closed vs FD:", np.abs(se23.jacobian_tangential(base, target) - J2_fd).max())
print("SE2(3) jp closed vs FD:", np.abs(se23.jacobian_positional(base, target) - J1_fd).max())

# --- transport/curvature approximations ------------------------------------
# When no closed form is available the Jacobians can be approximated by
# parallel transport alone (second order) or with a curvature correction
# (fourth order).  The log-log error slopes make the orders visible.
fig, ax = plt.subplots(figsize=(6, 4))
for mode, marker in (("pt_curvature", "o"), ("pt_only", "s")):
    fit = jacobian_order_fit(se23, "tangential", mode, samples=4, seed=1)
    s = [r.scale for r in fit.rows]
    e = [max(r.error, 1e-18) for r in fit.rows]
    ax.loglog(s, e, marker=marker, label=f"{mode} (slope {fit.slope:.2f})")
    print(f"{mode}: slope {fit.slope:.2f}")
ax.set_xlabel("|v|")
ax.set_ylabel("Frobenius error vs closed form")
ax.grid(alpha=0.3, which="both")
ax.legend()
fig.tight_layout()
path = os.path.join(out, "jacobian_orders.png")
fig.savefig(path, dpi=120)
print("wrote", path)
