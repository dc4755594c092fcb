"""Synchronous parameter-server simulation.

Each round the server broadcasts ``Q_x(x)``; every worker samples a gradient
at the dequantized point, runs the Adam moment update, and reports
``Q_g(delta + e)``; the server subtracts the mean of the dequantized reports.
The server keeps ``x`` in full precision and holds no optimizer state.

Workers are independent, so their rounds could run in any order or in
parallel; the server always reduces reports in ascending worker id, which
makes every schedule bit-identical to the sequential one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptionError, ProtocolError
from .optimizer import Hyperparams, OptimizerState, adam_update
from .problems import GradientStream, Problem
from .quantize import QuantizedTensor, Quantizer
from .trace import Trace, TraceRecorder
from .wire import bits_for_message, encode, write_frames

__all__ = [
    "Broadcast",
    "Report",
    "ServerState",
    "WorkerState",
    "RunConfig",
    "worker_round",
    "server_round",
    "run_synchronous",
    "bits_for_message",
]


@dataclass(frozen=True)
class Broadcast:
    round: int
    payload: QuantizedTensor | np.ndarray


@dataclass(frozen=True)
class Report:
    worker_id: int
    round: int
    payload: QuantizedTensor | np.ndarray


@dataclass
class ServerState:
    x: np.ndarray
    round: int = 1
    qx: Quantizer = field(default_factory=lambda: Quantizer("identity", role="weight"))

    def broadcast(self) -> Broadcast:
        return Broadcast(self.round, self.qx.compress(self.x))


@dataclass
class WorkerState:
    id: int
    opt: OptimizerState
    qg: Quantizer
    rng_seed: object
    stream: GradientStream = field(default=None, repr=False)
    ef: bool = True

    def __post_init__(self):
        if self.stream is None:
            self.stream = GradientStream(self.rng_seed)

    @property
    def expected_round(self) -> int:
        return self.opt.t


@dataclass
class WorkerMetrics:
    step: object  # optimizer.StepOutput
    gradient: np.ndarray


def _payload_len(payload) -> int:
    return len(payload) if isinstance(payload, QuantizedTensor) else int(np.asarray(payload).shape[0])


def worker_round(w: WorkerState, broadcast: Broadcast, problem: Problem, h: Hyperparams):
    """Answer one broadcast; returns ``(w', report, metrics)``.

    The worker's stream is advanced in place; everything else is new.
    """
    if broadcast.round != w.expected_round:
        raise ProtocolError(
            f"worker {w.id} expected round {w.expected_round}, got broadcast for round {broadcast.round}"
        )
    if _payload_len(broadcast.payload) != len(w.opt):
        raise CorruptionError(
            f"broadcast length {_payload_len(broadcast.payload)} != model length {len(w.opt)}"
        )
    x_hat = Quantizer.decompress(broadcast.payload)
    g = problem.stochastic_gradient(x_hat, w.stream)
    opt, out = adam_update(w.opt, g, h, w.qg, w.ef)
    report = Report(w.id, broadcast.round, out.message)
    return replace(w, opt=opt), report, WorkerMetrics(out, g)


def server_round(s: ServerState, reports, n_workers: int | None = None):
    """Apply one round of reports; returns ``(s', next_broadcast)``."""
    reports = list(reports)
    n = len(reports) if n_workers is None else n_workers
    ids = [r.worker_id for r in reports]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate worker report in round {s.round}: ids {sorted(ids)}")
    if sorted(ids) != list(range(n)):
        raise ProtocolError(f"round {s.round} expects reports from workers 0..{n - 1}, got {sorted(ids)}")
    for r in reports:
        if r.round != s.round:
            raise ProtocolError(f"report from worker {r.worker_id} tagged round {r.round}, server at {s.round}")
        if _payload_len(r.payload) != s.x.shape[0]:
            raise CorruptionError(f"report from worker {r.worker_id} has wrong length")
    acc = np.zeros_like(s.x)
    for r in sorted(reports, key=lambda r: r.worker_id):
        acc = acc + Quantizer.decompress(r.payload)
    x = s.x - acc / n
    s2 = replace(s, x=x, round=s.round + 1)
    return s2, s2.broadcast()


@dataclass
class RunConfig:
    """Everything that determines a synchronous run."""

    problem: Problem
    workers: int = 1
    steps: int = 1000
    hyper: Hyperparams = field(default_factory=Hyperparams)
    kg: Quantizer | str | int = "fp"
    kx: Quantizer | str | int = "fp"
    ef: bool = True
    seeds: list | None = None
    seed: int = 0
    snapshots: bool = False
    message_log: str | Path | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}", field="workers")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}", field="steps")
        self.kg = Quantizer.parse(self.kg, role="gradient")
        self.kx = Quantizer.parse(self.kx, role="weight")
        if self.seeds is None:
            self.seeds = [[self.seed, i] for i in range(self.workers)]
        if len(self.seeds) != self.workers:
            raise ConfigError(f"need {self.workers} seeds, got {len(self.seeds)}", field="seeds")

    def echo(self) -> dict:
        h = self.hyper
        out = {
            "mode": "distributed",
            "problem": self.problem.name,
            "dim": self.problem.dim,
            "workers": self.workers,
            "steps": self.steps,
            "kg": self.kg.label(),
            "kx": self.kx.label(),
            "ef": self.ef,
            "alpha": h.alpha,
            "beta": h.beta,
            "theta": h.theta,
            "eps": h.epsilon,
            "schedule": h.schedule,
            "horizon": h.horizon,
            "period": h.period,
            "seed": self.seed,
            "seeds": [list(s) if isinstance(s, (list, tuple)) else s for s in self.seeds],
        }
        out.update(self.extra)
        return out


def _frame(payload) -> bytes:
    if isinstance(payload, QuantizedTensor):
        return encode(payload)
    return np.asarray(payload, dtype="<f8").tobytes()


def run_synchronous(config: RunConfig) -> Trace:
    """Run ``config.steps`` rounds and return the trace.

    Metrics are evaluated at the broadcast point (``loss``/``grad_norm``) and
    at the server's full-precision ``x`` (``loss_x``/``grad_norm_x``).  With
    ``message_log`` set, every message is appended to that file in wire
    format (full-precision messages as raw little-endian float64).
    """
    p = config.problem
    d = p.dim
    server = ServerState(np.array(p.x0, dtype=np.float64), 1, config.kx)
    workers = [
        WorkerState(i, OptimizerState.zeros(d), config.kg, config.seeds[i], ef=config.ef)
        for i in range(config.workers)
    ]
    round_bits = config.kx.message_bits(d) + config.workers * config.kg.message_bits(d)
    rec = TraceRecorder(config.echo(), p, config.workers, snapshots=config.snapshots)
    log = Path(config.message_log) if config.message_log else None
    if log is not None:
        log.parent.mkdir(parents=True, exist_ok=True)
        log.write_bytes(b"")

    bc = server.broadcast()
    for _ in range(config.steps):
        x_hat = Quantizer.decompress(bc.payload)
        reports, metrics = [], []
        for i, w in enumerate(workers):
            workers[i], rep, met = worker_round(w, bc, p, config.hyper)
            reports.append(rep)
            metrics.append(met)
        if log is not None:
            write_frames(log, [_frame(bc.payload)] + [_frame(r.payload) for r in reports])
        rec.record(
            server.x,
            x_hat,
            [m.gradient for m in metrics],
            [m.step for m in metrics],
            [w.opt for w in workers],
            round_bits,
        )
        server, bc = server_round(server, reports, config.workers)
    return rec.finish(server.x, [w.opt for w in workers])
