"""Adaptive tempered SMC sampler with Langevin moves.

Each iteration: resample if the ESS dropped below ``kappa * N``, move every
particle once with a kernel invariant for the current tempered target, choose
the next temperature so the ESS decays by ``rho``, reweight (accumulating the
evidence estimate), and adapt the stepsize towards the target acceptance.

Random numbers come from streams keyed by ``(seed, iteration, purpose)``; the
move noise for particle ``i`` is row ``i`` of its iteration's draw, so the
output does not depend on how particles are split across workers.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ensemble import (
    Ensemble,
    History,
    Particles,
    DegenerateWeightsError,
    ess,
    multinomial_resample,
    normalise_log_weights,
    incremental_log_weights,
    reweight,
)
from .kernels import (
    MALA,
    QN_MALA,
    KernelState,
    MoveResult,
    StepNoise,
    adapt_stepsize,
    ensemble_init_diag,
    mh_step,
)
from .tempering import ConvergenceError, TemperConfig, solve_next_lambda

__all__ = [
    "SmcConfig",
    "TraceRecord",
    "RunTrace",
    "SmcError",
    "initialise",
    "smc_step",
    "run",
]

log = logging.getLogger(__name__)

_INIT, _RESAMPLE, _MOVE = 0, 1, 2


class SmcError(RuntimeError):
    """A run failed part-way; ``trace`` holds everything recorded so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class SmcConfig:
    n_particles: int = 1000
    kappa: float = 0.5
    kernel: str = QN_MALA
    kernel_state: KernelState = field(default_factory=KernelState)
    temper: TemperConfig = field(default_factory=TemperConfig)
    seed: int = 0
    max_iters: int = 10_000
    n_moves: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if not 0 < self.kappa <= 1:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.kernel not in (MALA, QN_MALA):
            raise ValueError(f"kernel must be {MALA!r} or {QN_MALA!r}, got {self.kernel!r}")
        if self.max_iters < 1 or self.n_moves < 1 or self.workers < 1:
            raise ValueError("max_iters, n_moves and workers must be positive")

    @property
    def rho(self):
        return self.temper.rho


@dataclass(frozen=True)
class TraceRecord:
    t: int
    lam: float
    ess: float
    resampled: bool
    mean_accept: float
    epsilon: float
    log_z_inc: float
    log_z_cum: float


@dataclass
class RunTrace:
    records: list
    ensemble: Ensemble
    completed: bool = True
    error: str = ""

    @property
    def iterations(self):
        """Number of iterations after initialisation (``T``)."""
        return len(self.records) - 1

    @property
    def log_evidence(self):
        return self.ensemble.log_evidence

    @property
    def lambdas(self):
        return np.array([r.lam for r in self.records])


def _stream(seed, t, purpose):
    return np.random.default_rng([seed, t, purpose])


def initialise(model, prior_sampler, cfg, rng):
    """Draw from the prior, pick the first temperature and weight the particles."""
    n = cfg.n_particles
    x = np.asarray(prior_sampler(rng, n), dtype=float).reshape(n, model.dim)
    ev = model.evaluate(x)
    target = cfg.temper.rho * n
    lam0 = solve_next_lambda(ev.log_lik, np.full(n, 1.0 / n), 0.0, cfg.temper, target)
    try:
        log_w, log_sum = normalise_log_weights(incremental_log_weights(ev.log_lik, lam0))
    except DegenerateWeightsError as exc:
        raise DegenerateWeightsError(
            "initial weights are degenerate; increase n_particles or decrease rho") from exc
    log_z0 = log_sum - math.log(n)
    history = History.start(x, ev, cfg.kernel_state.memory + 1)
    return Ensemble(Particles(x, ev, history), log_w, log_z0, lam0)


def _move(ens, model, cfg, state, noise, init_diag):
    n = ens.n
    if cfg.workers == 1 or n < 2 * cfg.workers:
        return mh_step(ens.particles, model, ens.lam, cfg.kernel, state, noise, init_diag)
    bounds = np.linspace(0, n, cfg.workers + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(cfg.workers) as pool:
        parts = list(pool.map(
            lambda sl: mh_step(ens.particles[sl], model, ens.lam, cfg.kernel, state,
                               noise[sl], init_diag),
            chunks))
    return MoveResult(
        Particles.concatenate([p.particles for p in parts]),
        np.concatenate([p.proposed for p in parts]),
        np.concatenate([p.accepted for p in parts]),
        np.concatenate([p.accept_prob for p in parts]),
    )


def smc_step(ens, model, cfg, state, t):
    """Run iteration ``t`` (1-based) and return ``(ensemble, state, record)``."""
    if not ens.lam < 1.0:
        raise ValueError("ensemble is already at lambda = 1")
    n = ens.n
    ess_before = ess(ens.weights)
    resampled = ess_before < cfg.kappa * n
    if resampled:
        ens = multinomial_resample(ens, _stream(cfg.seed, t, _RESAMPLE))

    init_diag = None
    if cfg.kernel == QN_MALA and state.init_strategy == "ensemble_diag":
        init_diag = ensemble_init_diag(ens.x, ens.weights)

    move_rng = _stream(cfg.seed, t, _MOVE)
    accept = []
    for _ in range(cfg.n_moves):
        noise = StepNoise.draw(move_rng, n, ens.dim)
        result = _move(ens, model, cfg, state, noise, init_diag)
        ens = replace(ens, particles=result.particles)
        accept.append(result.accept_prob)
    mean_accept = float(np.mean(accept))

    target = cfg.temper.rho * ess(ens.weights)
    lam = solve_next_lambda(ens.particles.ev.log_lik, ens.weights, ens.lam, cfg.temper, target)
    ens, log_inc = reweight(ens, lam)

    epsilon_used = state.epsilon
    state = replace(state, epsilon=adapt_stepsize(state.epsilon, mean_accept, state))
    record = TraceRecord(t, lam, ess_before, bool(resampled), mean_accept, epsilon_used,
                         log_inc, ens.log_evidence)
    return ens, state, record


def run(model, prior_sampler, cfg):
    """Run the sampler from the prior until the temperature reaches 1.

    ``prior_sampler(rng, n)`` returns an ``(n, d)`` array of prior draws. If
    ``max_iters`` is hit the partial trace is returned with ``completed`` set
    to False. Other failures raise :class:`SmcError` carrying the partial trace.
    """
    state = cfg.kernel_state
    ens = initialise(model, prior_sampler, cfg, _stream(cfg.seed, 0, _INIT))
    records = [TraceRecord(0, ens.lam, float(ens.n), False, math.nan, state.epsilon,
                           ens.log_evidence, ens.log_evidence)]
    trace = RunTrace(records, ens)
    t = 0
    while ens.lam < 1.0:
        if t >= cfg.max_iters:
            trace.completed = False
            trace.error = f"max_iters={cfg.max_iters} reached at lambda={ens.lam:.6g}"
            log.warning(trace.error)
            return trace
        t += 1
        try:
            ens, state, record = smc_step(ens, model, cfg, state, t)
        except (ConvergenceError, DegenerateWeightsError, np.linalg.LinAlgError) as exc:
            trace.completed = False
            trace.error = str(exc)
            raise SmcError(f"iteration {t} failed: {exc}", trace) from exc
        records.append(record)
        trace.ensemble = ens
        log.debug("t=%d lambda=%.6g accept=%.3f eps=%.3g", t, record.lam,
                  record.mean_accept, record.epsilon)
    return trace
