"""
MALA against quasi-Newton MALA on an ill-conditioned Gaussian
=============================================================

The target is N(0, Q) in 20 dimensions with standard deviations spread
from 0.01 to 1. A single stepsize has to suit the narrowest direction, so
plain MALA crawls along the wide ones. The quasi-Newton kernel rescales each
particle's proposal using curvature learnt from its own trajectory.
"""
import time

import numpy as np

from qnsmc import SmcConfig, anisotropic_gaussian_model, gaussian_kl, run, weighted_moments
from qnsmc.kernels import KernelState

model = anisotropic_gaussian_model(20)
state = KernelState(init_strategy="ensemble_diag")

for kernel in ("mala", "qn_mala"):
    start = time.perf_counter()
    trace = run(model, model.sample_prior,
                SmcConfig(n_particles=500, kernel=kernel, kernel_state=state, seed=3))
    ens = trace.ensemble
    mean, cov = weighted_moments(ens.x, ens.weights)
    kl = gaussian_kl(mean, cov, np.zeros(model.dim), model.covariance)
    sd = np.sqrt(np.diag(cov))
    print(f"{kernel:8s} T={trace.iterations:3d}  KL to truth={kl:8.3f}  "
          f"final stepsize={trace.records[-1].epsilon:.2e}  ({time.perf_counter() - start:.1f}s)")
    print("          fitted sd of the widest three coordinates:", np.round(sd[-3:], 3),
          "(truth", np.round(model.scales[-3:], 3), ")")
