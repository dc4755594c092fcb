"""Single-machine quantized Generic Adam with error feedback.

One step, given the stochastic gradient ``g`` sampled at the (weight
quantized) current point::

    v     <- theta_t * v + (1 - theta_t) * g**2
    m     <- beta * m + (1 - beta) * g
    delta  = alpha_t * m / sqrt(v + eps)
    sent   = Q_g(delta + e)
    x     <- x - sent
    e     <- delta + e - sent

There is no bias correction and ``eps`` sits under the square root.  With
error feedback switched off the residual is dropped and ``e`` stays zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .quantize import QuantizedTensor, Quantizer

SCHEDULES = ("decay_sqrt_t", "fixed_horizon", "epoch_halving")

# learning-rate grid used to tune the base rate
ALPHA_GRID = (0.01, 0.001, 0.005, 0.0005, 0.0001)


@dataclass(frozen=True)
class Hyperparams:
    """Base rates and the schedule that turns them into per-step values.

    ``horizon`` is the fixed run length for ``fixed_horizon``; ``period`` is
    the halving interval (in steps) for ``epoch_halving``.
    """

    alpha: float = 0.001
    beta: float = 0.99
    theta: float = 0.999
    epsilon: float = 1e-5
    schedule: str = "decay_sqrt_t"
    horizon: int | None = None
    period: int | None = None

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be positive, got {self.alpha}", field="alpha")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must be in [0, 1), got {self.beta}", field="beta")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must be in (0, 1], got {self.theta}", field="theta")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}", field="eps")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}", field="schedule")
        if self.schedule == "fixed_horizon" and not (self.horizon and self.horizon >= 1):
            raise ConfigError("fixed_horizon needs a horizon T >= 1", field="horizon")
        if self.schedule == "epoch_halving" and not (self.period and self.period >= 1):
            raise ConfigError("epoch_halving needs a period >= 1", field="period")


def schedule_at(h: Hyperparams, t: int) -> tuple[float, float]:
    """Return ``(alpha_t, theta_t)`` for step ``t >= 1``."""
    if t < 1:
        raise ValueError(f"steps are numbered from 1, got t={t}")
    if h.schedule == "fixed_horizon":
        return h.alpha / math.sqrt(h.horizon), 1.0 - h.theta / h.horizon
    theta_t = 1.0 - h.theta / t
    if h.schedule == "epoch_halving":
        return h.alpha * 2.0 ** -(t // h.period), theta_t
    return h.alpha / math.sqrt(t), theta_t


@dataclass
class OptimizerState:
    """Moments, error-feedback residual and the 1-based step counter.

    The arrays are replaced, never modified, by :func:`step`.
    """

    m: np.ndarray
    v: np.ndarray
    e: np.ndarray
    t: int = 1

    @classmethod
    def zeros(cls, dim: int) -> "OptimizerState":
        z = np.zeros(dim)
        return cls(z, z.copy(), z.copy(), 1)

    def __len__(self):
        return int(self.m.shape[0])


@dataclass
class StepOutput:
    applied_update: np.ndarray
    delta: np.ndarray
    new_error_norm: float
    bits_sent: int
    message: QuantizedTensor | np.ndarray = field(repr=False)
    error_in: np.ndarray = field(repr=False)
    alpha_t: float = 0.0
    theta_t: float = 0.0
    # 1 - ||input - Q(input)|| / ||input|| for this step's quantizer input, nan if input is 0
    contraction: float = float("nan")


def moments_update(state: OptimizerState, g, theta_t: float, beta: float) -> OptimizerState:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.m.shape:
        raise ShapeError(f"gradient length {g.shape[0]} != state length {len(state)}")
    v = theta_t * state.v + (1.0 - theta_t) * (g * g)
    m = beta * state.m + (1.0 - beta) * g
    return replace(state, m=m, v=v)


def compute_delta(state: OptimizerState, alpha_t: float, epsilon: float) -> np.ndarray:
    return alpha_t * state.m / np.sqrt(state.v + epsilon)


def adam_update(
    state: OptimizerState,
    g,
    h: Hyperparams,
    qg: Quantizer,
    ef: bool = True,
) -> tuple[OptimizerState, StepOutput]:
    """Everything in a step except moving ``x``; shared by the worker loop."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise DomainError("non-finite stochastic gradient")
    alpha_t, theta_t = schedule_at(h, state.t)
    state = moments_update(state, g, theta_t, h.beta)
    delta = compute_delta(state, alpha_t, h.epsilon)
    target = delta + state.e if ef else delta
    message = qg.compress(target)
    applied = qg.decompress(message)
    residual = target - applied
    if ef:
        new_e = residual
    else:
        new_e = np.zeros_like(delta)

    in_norm = float(np.sqrt(np.add.accumulate(target * target)[-1])) if target.size else 0.0
    if in_norm > 0.0:
        contraction = 1.0 - float(np.sqrt(np.add.accumulate(residual * residual)[-1])) / in_norm
    else:
        contraction = float("nan")
    err_norm = float(np.sqrt(np.add.accumulate(new_e * new_e)[-1])) if new_e.size else 0.0

    out = StepOutput(
        applied_update=applied,
        delta=delta,
        new_error_norm=err_norm,
        bits_sent=qg.message_bits(delta.shape[0]),
        message=message,
        error_in=state.e,
        alpha_t=alpha_t,
        theta_t=theta_t,
        contraction=contraction,
    )
    return replace(state, e=new_e, t=state.t + 1), out


def step(
    state: OptimizerState,
    x,
    g,
    h: Hyperparams,
    qg: Quantizer,
    ef: bool = True,
) -> tuple[np.ndarray, OptimizerState, StepOutput]:
    """One full step; ``g`` must already be sampled at ``Q_x(x)``."""
    if state.t < 1:
        raise ValueError("optimizer state counter must start at 1")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != state.m.shape:
        raise ShapeError(f"parameter length {x.shape[0]} != state length {len(state)}")
    state, out = adam_update(state, g, h, qg, ef)
    return x - out.applied_update, state, out


def minimize(
    problem,
    h: Hyperparams,
    steps: int,
    *,
    qg: Quantizer | None = None,
    qx: Quantizer | None = None,
    ef: bool = True,
    seed=0,
    x0=None,
    snapshots: bool = False,
):
    """Run the single-machine loop for ``steps`` iterations and return a Trace."""
    from .problems import GradientStream
    from .trace import TraceRecorder

    if steps < 1:
        raise ConfigError("steps must be >= 1", field="steps")
    qg = qg or Quantizer("identity", role="gradient")
    qx = qx or Quantizer("identity", role="weight")
    x = np.array(problem.x0 if x0 is None else x0, dtype=np.float64)
    state = OptimizerState.zeros(problem.dim)
    stream = GradientStream(seed)
    config = {
        "mode": "single",
        "problem": problem.name,
        "dim": problem.dim,
        "workers": 1,
        "steps": steps,
        "kg": qg.label(),
        "kx": qx.label(),
        "ef": ef,
        "alpha": h.alpha,
        "beta": h.beta,
        "theta": h.theta,
        "eps": h.epsilon,
        "schedule": h.schedule,
        "horizon": h.horizon,
        "period": h.period,
        "seed": seed,
        "seeds": [seed],
    }
    rec = TraceRecorder(config, problem, n_workers=1, snapshots=snapshots)
    for _ in range(steps):
        weight_msg = qx.compress(x)
        x_hat = qx.decompress(weight_msg)
        g = problem.stochastic_gradient(x_hat, stream)
        x_next, state, out = step(state, x, g, h, qg, ef)
        bits = qx.message_bits(problem.dim) + out.bits_sent
        rec.record(x, x_hat, [g], [out], [state], bits)
        x = x_next
    rec.finish(x, [state])
    return rec.trace
