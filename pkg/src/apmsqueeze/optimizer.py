"""Two-phase optimizer: Adam warmup, then compressed preconditioned momentum SGD.

The first ``t_warmup`` steps are ordinary Adam on the exactly averaged
gradient. At the end of warmup the second-moment vector is frozen and every
later step

* forms a local momentum candidate ``beta1 * m + (1 - beta1) * g_i`` on each
  worker from the shared momentum ``m``,
* averages the candidates through :func:`compressed_allreduce`, and
* moves ``x`` by ``lr * m / max(sqrt(v_frozen), eta_floor)``.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import rng as rngmod
from .collective import (
    CollectiveState,
    compressed_allreduce,
    compressed_gradient_allgather,
    identity_bits_per_step,
)
from .compression import CompressorSpec
from .exceptions import APMSqueezeError, ConfigError, DimensionError, StateError
from .metrics import MetricsRecord
from .numerics import DEFAULT_FLOOR, as_vector, l2_norm

Schedule = Union[float, Callable[[int], float]]


class Phase(enum.Enum):
    WARMUP = "warmup"
    SQUEEZE = "squeeze"


class Variant(enum.Enum):
    MOMENTUM = "apmsqueeze"  # compress the momentum (the main algorithm)
    GRADIENT = "apgsqueeze"  # compress the gradient, keep momentum local


class DivergenceError(APMSqueezeError, FloatingPointError):
    """Loss became non-finite. ``records`` holds the trajectory up to that point."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def step_decay(base: float, every: int, factor: float) -> Callable[[int], float]:
    """Learning rate ``base * factor ** (t // every)``."""
    if every < 1:
        raise ConfigError("decay interval must be positive")

    def schedule(t: int) -> float:
        return base * factor ** (t // every)

    return schedule


@dataclass
class OptimizerConfig:
    lr: Schedule = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 1e-8  # Adam's additive denominator term
    eta_floor: float = DEFAULT_FLOOR  # lower bound on sqrt(v_frozen) after warmup
    t_warmup: int = 100
    t_total: int = 1000
    compressor: CompressorSpec = field(default_factory=CompressorSpec)
    freeze_bias_corrected: bool = False

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.eta < 0:
            raise ConfigError("eta must be non-negative")
        if not self.eta_floor > 0:
            raise ConfigError("eta_floor must be positive")
        if self.t_warmup < 1:
            raise ConfigError("t_warmup must be at least 1")
        if self.t_total <= self.t_warmup:
            raise ConfigError("t_total must exceed t_warmup")
        if not callable(self.lr) and not self.lr > 0:
            raise ConfigError("learning rate must be positive")

    def gamma(self, t: int) -> float:
        return float(self.lr(t)) if callable(self.lr) else float(self.lr)


@dataclass
class OptimizerState:
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    v_frozen: np.ndarray | None = None
    t: int = 0
    phase: Phase = Phase.WARMUP

    @classmethod
    def initial(cls, x0) -> "OptimizerState":
        x0 = as_vector(x0, "x0").copy()
        return cls(x=x0, m=np.zeros_like(x0), v=np.zeros_like(x0))

    def preconditioner(self, floor: float) -> np.ndarray:
        """``max(sqrt(v_frozen), floor)``: the per-coordinate denominator after warmup."""
        if self.v_frozen is None:
            raise StateError("variance has not been frozen yet")
        return np.maximum(np.sqrt(self.v_frozen), floor)


def _check_grads(grads, dim):
    out = []
    for i, g in enumerate(grads):
        g = as_vector(g, f"gradient[{i}]")
        if g.shape[0] != dim:
            raise DimensionError(f"gradient[{i}] has length {g.shape[0]}, expected {dim}")
        out.append(g)
    if not out:
        raise DimensionError("no worker gradients supplied")
    return out


def adam_warmup_step(cfg: OptimizerConfig, state: OptimizerState, grads) -> OptimizerState:
    """One Adam step on the exact mean of the worker gradients (in place)."""
    if state.phase is not Phase.WARMUP:
        raise StateError("adam_warmup_step called after warmup ended")
    grads = _check_grads(grads, state.x.shape[0])
    g = sum(grads) / len(grads)
    b1, b2 = cfg.beta1, cfg.beta2
    step = state.t + 1
    state.m = b1 * state.m + (1 - b1) * g
    state.v = b2 * state.v + (1 - b2) * g * g
    m_hat = state.m / (1 - b1**step)
    v_hat = state.v / (1 - b2**step)
    state.x = state.x - cfg.gamma(state.t) * m_hat / (np.sqrt(v_hat) + cfg.eta)
    state.t = step
    if step == cfg.t_warmup:
        state.v_frozen = v_hat.copy() if cfg.freeze_bias_corrected else state.v.copy()
        state.phase = Phase.SQUEEZE
    return state


def _squeeze_update(cfg, state, momentum):
    state.m = momentum
    state.x = state.x - cfg.gamma(state.t) * momentum / state.preconditioner(cfg.eta_floor)
    state.t += 1
    return state


def _check_squeeze(state, collective):
    if state.phase is not Phase.SQUEEZE or state.v_frozen is None:
        raise StateError("squeeze step requires a finished warmup")
    if collective.dim != state.x.shape[0]:
        raise DimensionError("collective was built for a different dimension")


def squeeze_step(cfg: OptimizerConfig, state: OptimizerState, collective: CollectiveState, grads) -> OptimizerState:
    """Compressed momentum step: average the workers' momentum candidates, then update ``x``."""
    _check_squeeze(state, collective)
    grads = _check_grads(grads, state.x.shape[0])
    b1 = cfg.beta1
    candidates = [b1 * state.m + (1 - b1) * g for g in grads]
    return _squeeze_update(cfg, state, compressed_allreduce(collective, candidates))


def gradient_squeeze_step(cfg: OptimizerConfig, state: OptimizerState, collective: CollectiveState,
                          grads) -> OptimizerState:
    """Ablation: compress the gradients instead and update the momentum locally."""
    _check_squeeze(state, collective)
    grads = _check_grads(grads, state.x.shape[0])
    g = compressed_gradient_allgather(collective, grads)
    return _squeeze_update(cfg, state, cfg.beta1 * state.m + (1 - cfg.beta1) * g)


@dataclass
class RunResult:
    records: list
    state: OptimizerState
    collective: CollectiveState
    final_loss: float
    final_grad_norm_sq: float

    @property
    def total_bits(self) -> int:
        return self.records[-1].bits_cum if self.records else 0


def run(cfg: OptimizerConfig, problem, n_workers: int | None = None, seed: int = 0, *,
        variant: Variant | str = Variant.MOMENTUM, x0=None, probes: bool = True,
        record_wall_time: bool = False) -> RunResult:
    """Run warmup then squeeze steps on ``problem`` and record one :class:`MetricsRecord` per step.

    Worker ``i`` at step ``t`` samples its minibatch from the stream
    ``(seed, SAMPLING, i, t)`` and stochastic codecs draw from streams keyed
    by ``seed`` as well, so the whole trajectory is a function of ``seed``.
    ``probes=False`` skips the full-gradient and residual measurements; the
    iterates are the same either way.
    """
    n = problem.n_workers if n_workers is None else int(n_workers)
    if n != problem.n_workers:
        raise ConfigError(f"problem has {problem.n_workers} shards but n_workers={n}")
    variant = Variant(variant) if not isinstance(variant, Variant) else variant
    step_fn = squeeze_step if variant is Variant.MOMENTUM else gradient_squeeze_step

    d = problem.dim
    state = OptimizerState.initial(problem.initial_point() if x0 is None else x0)
    collective = CollectiveState(n, d, dataclasses.replace(cfg.compressor, seed=seed))
    warm_bits = identity_bits_per_step(d, n)
    records = []
    bits_cum = 0

    for t in range(cfg.t_total):
        tick = time.perf_counter()
        x_t = state.x
        samples = [problem.sample_gradient(i, x_t, rngmod.stream(seed, rngmod.SAMPLING, i, t)) for i in range(n)]
        grads = [s.gradient for s in samples]
        phase = state.phase
        if phase is Phase.WARMUP:
            adam_warmup_step(cfg, state, grads)
            bits = warm_bits
        else:
            before = collective.bits_sent_total
            step_fn(cfg, state, collective, grads)
            bits = collective.bits_sent_total - before
        bits_cum += bits
        wall = (time.perf_counter() - tick) * 1e3 if record_wall_time else 0.0

        if probes:
            full_grad, loss = problem.full_gradient_and_loss(x_t)
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at step {t}", records)
            gsq = float(full_grad @ full_grad)
            if phase is Phase.SQUEEZE:
                gsq_v = float(np.sum(full_grad**2 / state.preconditioner(cfg.eta_floor)))
            else:
                gsq_v = math.nan
            eps_w, eps_s = collective.error_norms()
            mean_norm = l2_norm(sum(grads) / n)
        else:
            loss = gsq = gsq_v = eps_w = eps_s = mean_norm = math.nan
        records.append(
            MetricsRecord(t, phase.value, loss, gsq, gsq_v, bits, bits_cum, eps_w, eps_s, wall, mean_norm)
        )
        if not np.all(np.isfinite(state.x)):
            raise DivergenceError(f"parameters became non-finite at step {t}", records)

    final_grad, final_loss = problem.full_gradient_and_loss(state.x)
    return RunResult(records, state, collective, final_loss, float(final_grad @ final_grad))
