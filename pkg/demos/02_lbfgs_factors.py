"""
Square-root L-BFGS factors
==========================

The quasi-Newton kernel never forms a d x d matrix. It keeps the BFGS
estimate B of the Hessian as a product of rank-one updates, B = C C^T, with
S S^T = B^-1, and only ever applies C, S or their transposes to vectors.
Here we build the factors from a few secant pairs and compare them with the
textbook dense recursion.
"""
import numpy as np

from qnsmc import lbfgs

rng = np.random.default_rng(1)
d, m = 6, 4

# pairs from a quadratic with Hessian H: y = H s
q, _ = np.linalg.qr(rng.standard_normal((d, d)))
H = q @ np.diag(np.linspace(0.2, 5.0, d)) @ q.T
s = rng.standard_normal((m, d))
y = s @ H

f = lbfgs.build_factors(s, y, np.ones(d), omega=1.0)
print("shift beta:", float(f.beta))

# dense BFGS from the identity
B = np.eye(d)
for sr, yr in zip(s, y):
    Bs = B @ sr
    B = B - np.outer(Bs, Bs) / (sr @ Bs) + np.outer(yr, yr) / (sr @ yr)

C = lbfgs.apply_C(f, np.eye(d)).T
S = lbfgs.apply_S(f, np.eye(d)).T
print("max |C C^T - B_dense|   :", np.abs(C @ C.T - B).max())
print("max |C C^T S S^T - I|   :", np.abs(C @ C.T @ S @ S.T - np.eye(d)).max())
print("secant residual B s - y :", np.linalg.norm(lbfgs.apply_B(f, s[-1]) - y[-1]))
print("log det B, factored/dense:", float(f.log_det_B), np.linalg.slogdet(B)[1])

# pairs with negative curvature are repaired by shifting y along B0 s, which
# keeps every curvature product positive and the factors positive definite
y_bad = y.copy()
y_bad[1] = -y_bad[1]
g = lbfgs.build_factors(s, y_bad, np.ones(d), omega=1.0)
Cg = lbfgs.apply_C(g, np.eye(d)).T
print("after repair: beta =", float(g.beta), " min eigenvalue =", np.linalg.eigvalsh(Cg @ Cg.T).min())
