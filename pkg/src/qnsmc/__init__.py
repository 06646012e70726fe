"""Tempered sequential Monte Carlo with quasi-Newton Langevin kernels."""
from .model import Evaluation, EvaluationError, TemperedModel, CountingModel, tempered_potential, tempered_gradient
from .ensemble import (Ensemble, Particles, History, DegenerateWeightsError, ess, reweight,
                       multinomial_resample, weighted_moments, gaussian_kl)
from .tempering import TemperConfig, ConvergenceError, solve_next_lambda
from .lbfgs import LbfgsFactors, FactorError, adjust_pairs, build_factors
from .kernels import KernelState, StepNoise, mh_step, adapt_stepsize
from .smc import SmcConfig, RunTrace, TraceRecord, SmcError, initialise, smc_step, run
from .targets import (AnisotropicGaussian, ConjugateGaussian, GaussianMixture, GmmHyper,
                      anisotropic_gaussian_model, gmm_model, load_stamps, simplex_forward,
                      simplex_inverse)

__version__ = "0.1.0"
