"""Stochastic ascent on the unconstrained barycenter dual.

Each of the n transport problems contributes a potential pair (f_i, g_i).
The batch objective is the Monte Carlo mean of

    sum_i lam_i * [ f_i(x_i) - R*( f_i(x_i) + g_i(y) - gbar(y) - c(x_i, y) ) ]

with gbar = sum_j lam_j g_j, one x_i per input measure and one shared y
per tuple.  Subtracting gbar makes the zero-sum constraint on the
centered potentials hold by construction, so the maximization is
unconstrained.  Updates use Adam in ascent direction; all randomness
flows from one seed through spawned child streams.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .measures import SupportMeasure, validate_weights
from .potentials import LinearCombinationPotential, init_mlp, init_rff
from .regularization import (
    RegularizerSpec,
    SquaredEuclideanCost,
    r_star,
    r_star_prime,
)

EMA_DECAY = 0.99

_cost = SquaredEuclideanCost()


class SolverAbort(RuntimeError):
    """Raised when the batch objective goes non-finite."""

    def __init__(self, step, epsilon, max_f, max_g):
        self.step = step
        self.epsilon = epsilon
        self.max_f = max_f
        self.max_g = max_g
        super().__init__(
            f"non-finite objective at step {step} "
            f"(epsilon={epsilon:g}, max|f|={max_f:g}, max|g|={max_g:g})"
        )


@dataclass(frozen=True)
class PotentialSpec:
    """Recipe for building one potential: family plus its knobs."""

    kind: str = "mlp"
    n_features: int = 2048
    freq_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mlp", "rff"):
            raise ValueError(f"unknown potential kind {self.kind!r}")

    def build(self, d: int, rng, out: int = 1):
        if self.kind == "rff":
            return init_rff(
                d, rng, n_features=self.n_features,
                freq_scale=self.freq_scale, out=out,
            )
        return init_mlp(d, rng, out=out)


@dataclass(frozen=True)
class SolverConfig:
    weights: np.ndarray
    regularizer: RegularizerSpec
    support: Optional[SupportMeasure] = None
    batch_size: int = 1024
    total_steps: int = 10_000
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    parameterization: PotentialSpec = field(default_factory=PotentialSpec)
    log_interval: int = 100

    def __post_init__(self):
        w = validate_weights(self.weights, np.asarray(self.weights).size)
        object.__setattr__(self, "weights", w)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def n_inputs(self) -> int:
        return self.weights.size


class SolverState:
    """Potential pairs plus Adam moments, a step counter, and the EMA."""

    def __init__(self, config: SolverConfig, f_potentials, g_potentials):
        self.config = config
        self.f_potentials = list(f_potentials)
        self.g_potentials = list(g_potentials)
        self.step_count = 0
        self.ema_objective = None
        self._moments = [
            [(np.zeros_like(a), np.zeros_like(a)) for a in p.param_arrays()]
            for p in self.f_potentials + self.g_potentials
        ]

    def potentials(self):
        return self.f_potentials + self.g_potentials

    def centered_g(self):
        """The zero-sum potentials g_i - sum_j lam_j g_j.

        These are what downstream consumers should treat as the dual's
        g-side; their weighted sum vanishes identically.
        """
        lam = self.config.weights
        out = []
        for i in range(len(self.g_potentials)):
            coef = -lam.copy()
            coef[i] += 1.0
            out.append(LinearCombinationPotential(coef, self.g_potentials))
        return out


def init_state(config: SolverConfig, d: int) -> SolverState:
    """Build the 2n potentials from per-potential spawned seeds."""
    n = config.n_inputs
    seeds = np.random.SeedSequence(config.seed).spawn(2 * n)
    spec = config.parameterization
    f_pots = [spec.build(d, np.random.default_rng(seeds[i])) for i in range(n)]
    g_pots = [
        spec.build(d, np.random.default_rng(seeds[n + i])) for i in range(n)
    ]
    return SolverState(config, f_pots, g_pots)


def sample_batch(sources, support: SupportMeasure, batch_size: int, rng):
    """Draw B tuples: one x per source plus one shared y per tuple."""
    xs = [src.sample(batch_size, rng) for src in sources]
    y = support.sample(batch_size, rng)
    return xs, y


def _batch_terms(state: SolverState, xs, y):
    """Stacked values F, G and penalty arguments T, each of shape (n, B)."""
    F = np.stack(
        [f.value_batch(x) for f, x in zip(state.f_potentials, xs)]
    )
    G = np.stack([g.value_batch(y) for g in state.g_potentials])
    gbar = state.config.weights @ G
    C = np.stack([_cost.pairwise_rows(x, y) for x in xs])
    return F, G, F + G - gbar - C


def objective_estimate(state: SolverState, batch) -> float:
    """Monte Carlo value of the dual objective on one batch.

    ``batch`` is a pair (xs, y) as produced by :func:`sample_batch`.
    Entropic overflow in the penalty propagates to the caller.
    """
    xs, y = batch
    F, _, T = _batch_terms(state, xs, y)
    lam = state.config.weights
    per_tuple = lam @ (F - r_star(state.config.regularizer, T))
    return float(per_tuple.mean())


def batch_gradients(state: SolverState, xs, y):
    """Ascent gradients for every potential on one batch.

    Returns (objective, f_grads, g_grads) where the gradient lists align
    with each potential's ``param_arrays``.  The batch gradient is the
    mean of the per-tuple gradients.
    """
    cfg = state.config
    lam = cfg.weights
    B = y.shape[0]
    F, G, T = _batch_terms(state, xs, y)
    rp = r_star_prime(cfg.regularizer, T)
    obj = float((lam @ (F - r_star(cfg.regularizer, T))).mean())
    if not np.isfinite(obj):
        raise SolverAbort(
            state.step_count,
            cfg.regularizer.epsilon,
            float(np.max(np.abs(F))),
            float(np.max(np.abs(G))),
        )
    weighted_rp = lam @ rp
    f_grads = []
    g_grads = []
    for i, (f, g) in enumerate(zip(state.f_potentials, state.g_potentials)):
        upstream_f = lam[i] * (1.0 - rp[i]) / B
        upstream_g = lam[i] * (weighted_rp - rp[i]) / B
        f_grads.append(f.param_gradient_batch(upstream_f, xs[i]))
        g_grads.append(g.param_gradient_batch(upstream_g, y))
    return obj, f_grads, g_grads


def _adam_apply(potential, grads, moments, t, cfg: SolverConfig):
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for param, grad, (m, v) in zip(potential.param_arrays(), grads, moments):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        param += cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)


def sgd_step(state: SolverState, sources, rng) -> float:
    """One ascent step on a fresh batch; returns the batch objective."""
    cfg = state.config
    xs, y = sample_batch(sources, cfg.support, cfg.batch_size, rng)
    obj, f_grads, g_grads = batch_gradients(state, xs, y)
    state.step_count += 1
    t = state.step_count
    n = cfg.n_inputs
    for i in range(n):
        _adam_apply(state.f_potentials[i], f_grads[i], state._moments[i], t, cfg)
        _adam_apply(
            state.g_potentials[i], g_grads[i], state._moments[n + i], t, cfg
        )
    if state.ema_objective is None:
        state.ema_objective = obj
    else:
        state.ema_objective = EMA_DECAY * state.ema_objective + (1 - EMA_DECAY) * obj
    return obj


class LogRecord(NamedTuple):
    step: int
    ema_objective: float
    wall_ms: float


class SolveResult(NamedTuple):
    f_potentials: list
    g_centered: list
    g_raw: list
    log: list
    state: SolverState


def solve(
    config: SolverConfig,
    sources,
    support: Optional[SupportMeasure] = None,
    checkpoint_callback=None,
    checkpoint_interval: int = 0,
) -> SolveResult:
    """Run the full training loop and return the trained potential pairs.

    The returned g-side potentials are the centered versions whose
    weighted sum is identically zero.  ``support`` overrides the one in
    the config when given.  When ``checkpoint_interval`` > 0 the callback
    receives (step, state) every that many steps and at the end.
    """
    if support is not None:
        config = SolverConfig(
            **{**config.__dict__, "support": support}
        )
    if config.support is None:
        raise ValueError("a support measure is required")
    if len(sources) != config.n_inputs:
        raise ValueError("one weight per source required")
    d = sources[0].d
    if any(s.d != d for s in sources) or config.support.d != d:
        raise ValueError("sources and support must share one dimension")

    state = init_state(config, d)
    train_seed = np.random.SeedSequence(config.seed).spawn(2 * config.n_inputs + 1)[-1]
    rng = np.random.default_rng(train_seed)
    log = []
    start = time.perf_counter()
    for _ in range(config.total_steps):
        sgd_step(state, sources, rng)
        step = state.step_count
        if step % config.log_interval == 0 or step == config.total_steps:
            wall_ms = (time.perf_counter() - start) * 1000.0
            log.append(LogRecord(step, state.ema_objective, wall_ms))
        if (
            checkpoint_callback is not None
            and checkpoint_interval > 0
            and (step % checkpoint_interval == 0 or step == config.total_steps)
        ):
            checkpoint_callback(step, state)
    return SolveResult(
        state.f_potentials, state.centered_g(), state.g_potentials, log, state
    )
