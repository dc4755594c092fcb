"""Per-round run records and their CSV / JSON forms."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = (
    "round",
    "loss",
    "grad_norm",
    "mean_delta_norm",
    "mean_err_norm",
    "cum_bits",
    "alpha_t",
    "theta_t",
)

# one value per round
ROUND_FIELDS = (
    "loss",
    "grad_norm",
    "loss_x",
    "grad_norm_x",
    "x_norm",
    "alpha_t",
    "theta_t",
    "round_bits",
    "cum_bits",
    "weight_contraction",
)
# one value per (round, worker)
WORKER_FIELDS = (
    "delta_norm",
    "err_norm",
    "err_in_norm",
    "g_norm",
    "m_norm",
    "v_l1",
    "contraction",
)
SNAPSHOT_FIELDS = ("x", "x_hat", "m", "v", "e", "delta", "g")


def _mean_rows(a: np.ndarray) -> np.ndarray:
    # sum workers in id order, left to right
    return np.add.accumulate(a, axis=1)[:, -1] / a.shape[1]


@dataclass
class Trace:
    """Everything observed during a run.

    ``rounds`` maps each name in ``ROUND_FIELDS`` to a length-T array and
    ``workers`` maps each name in ``WORKER_FIELDS`` to a ``(T, N)`` array.
    ``err_norm[t]`` is the residual left after step ``t`` and
    ``err_in_norm[t]`` the one that entered it.  When recorded,
    ``snapshots`` holds full vectors: ``x`` and ``e`` have T+1 rows (the
    last row is the state after the final step), the others T rows.
    """

    config: dict
    n_workers: int
    dim: int
    rounds: dict
    workers: dict
    bounds: dict = field(default_factory=dict)
    initial_loss: float = float("nan")
    final_x: np.ndarray | None = None
    snapshots: dict | None = None
    wall_time: float = 0.0

    def __len__(self):
        return int(self.rounds["loss"].shape[0])

    @property
    def ef(self) -> bool:
        return bool(self.config.get("ef", True))

    @property
    def gradient_quantized(self) -> bool:
        return str(self.config.get("kg", "fp")) != "fp"

    @property
    def weight_quantized(self) -> bool:
        return str(self.config.get("kx", "fp")) != "fp"

    def max_gradient_norm(self) -> float:
        return float(np.max(self.workers["g_norm"])) if len(self) else 0.0

    def min_contraction(self, worker: int | None = None) -> float:
        """Smallest empirical contraction factor seen on quantizer inputs."""
        c = self.workers["contraction"]
        if worker is not None:
            c = c[:, worker]
        c = c[np.isfinite(c)]
        return float(np.min(c)) if c.size else 1.0

    def min_weight_contraction(self) -> float:
        c = self.rounds["weight_contraction"]
        c = c[np.isfinite(c)]
        return float(np.min(c)) if c.size else 1.0

    def csv_rows(self):
        delta = _mean_rows(self.workers["delta_norm"])
        err = _mean_rows(self.workers["err_norm"])
        for i in range(len(self)):
            yield (
                i + 1,
                float(self.rounds["loss"][i]),
                float(self.rounds["grad_norm"][i]),
                float(delta[i]),
                float(err[i]),
                int(self.rounds["cum_bits"][i]),
                float(self.rounds["alpha_t"][i]),
                float(self.rounds["theta_t"][i]),
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.csv_rows():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "n_workers": self.n_workers,
            "dim": self.dim,
            "bounds": self.bounds,
            "initial_loss": self.initial_loss,
            "final_x": None if self.final_x is None else self.final_x.tolist(),
            "rounds": {k: v.tolist() for k, v in self.rounds.items()},
            "workers": {k: v.tolist() for k, v in self.workers.items()},
        }
        if self.snapshots is not None:
            out["snapshots"] = {k: v.tolist() for k, v in self.snapshots.items()}
        return out

    def to_json(self) -> str:
        # NaN contraction entries survive as the non-standard token NaN
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Trace":
        rounds = {k: np.asarray(v, dtype=np.float64) for k, v in data["rounds"].items()}
        workers = {k: np.asarray(v, dtype=np.float64) for k, v in data["workers"].items()}
        snaps = data.get("snapshots")
        if snaps is not None:
            snaps = {k: np.asarray(v, dtype=np.float64) for k, v in snaps.items()}
        final_x = data.get("final_x")
        return cls(
            config=data["config"],
            n_workers=int(data["n_workers"]),
            dim=int(data["dim"]),
            rounds=rounds,
            workers=workers,
            bounds=data.get("bounds", {}),
            initial_loss=float(data.get("initial_loss", float("nan"))),
            final_x=None if final_x is None else np.asarray(final_x, dtype=np.float64),
            snapshots=snaps,
        )

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_csv(cls, text: str, config: dict | None = None) -> "Trace":
        """Rebuild the round-level part of a trace from its CSV form.

        Per-worker columns other than the means are unavailable, so checks
        that need them report not-applicable.
        """
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected trace CSV header {header}")
        rows = [r for r in reader if r]
        cols = list(zip(*rows)) if rows else [()] * len(CSV_COLUMNS)
        get = {name: np.asarray([float(v) for v in col]) for name, col in zip(CSV_COLUMNS, cols)}
        n = len(rows)
        nan = np.full(n, np.nan)
        rounds = {name: nan.copy() for name in ROUND_FIELDS}
        for name in ("loss", "grad_norm", "cum_bits", "alpha_t", "theta_t"):
            rounds[name] = get[name]
        workers = {name: np.full((n, 1), np.nan) for name in WORKER_FIELDS}
        workers["delta_norm"] = get["mean_delta_norm"].reshape(n, 1)
        workers["err_norm"] = get["mean_err_norm"].reshape(n, 1)
        cfg = dict(config or {})
        cfg.setdefault("source", "csv")
        return cls(cfg, 1, 0, rounds, workers)


class TraceRecorder:
    """Accumulates per-round observations into preallocated arrays."""

    def __init__(self, config: dict, problem, n_workers: int, snapshots: bool = False):
        self.config = config
        self.problem = problem
        self.n = n_workers
        self.snapshots = snapshots
        self._rounds = {k: [] for k in ROUND_FIELDS}
        self._workers = {k: [] for k in WORKER_FIELDS}
        self._snaps = {k: [] for k in SNAPSHOT_FIELDS} if snapshots else None
        self._cum_bits = 0
        self._initial_loss = None
        self._t0 = time.perf_counter()
        self.trace: Trace | None = None

    def record(self, x, x_hat, grads, outs, states, bits: int) -> None:
        p = self.problem
        if self._initial_loss is None:
            self._initial_loss = float(p.loss(x))
            if self._snaps is not None:
                self._snaps["e"].append(np.stack([o.error_in for o in outs]))
        loss_hat = p.loss(x_hat)
        gn_hat = float(np.sqrt(np.add.accumulate(p.full_gradient(x_hat) ** 2)[-1]))
        if x_hat is x or np.array_equal(x_hat, x):
            loss_x, gn_x = loss_hat, gn_hat
        else:
            loss_x = p.loss(x)
            gn_x = float(np.sqrt(np.add.accumulate(p.full_gradient(x) ** 2)[-1]))
        self._cum_bits += bits
        r = self._rounds
        r["loss"].append(loss_hat)
        r["grad_norm"].append(gn_hat)
        r["loss_x"].append(loss_x)
        r["grad_norm_x"].append(gn_x)
        r["x_norm"].append(float(np.sqrt(np.add.accumulate(x * x)[-1])))
        r["alpha_t"].append(outs[0].alpha_t)
        r["theta_t"].append(outs[0].theta_t)
        r["round_bits"].append(bits)
        r["cum_bits"].append(self._cum_bits)
        xn = r["x_norm"][-1]
        r["weight_contraction"].append(1.0 - _l2(x - x_hat) / xn if xn > 0 else float("nan"))

        w = self._workers
        w["delta_norm"].append([_l2(o.delta) for o in outs])
        w["err_norm"].append([o.new_error_norm for o in outs])
        w["err_in_norm"].append([_l2(o.error_in) for o in outs])
        w["g_norm"].append([_l2(g) for g in grads])
        w["m_norm"].append([_l2(s.m) for s in states])
        w["v_l1"].append([float(np.add.accumulate(s.v)[-1]) for s in states])
        w["contraction"].append([o.contraction for o in outs])

        if self._snaps is not None:
            s = self._snaps
            s["x"].append(np.array(x))
            s["x_hat"].append(np.array(x_hat))
            s["m"].append(np.stack([st.m for st in states]))
            s["v"].append(np.stack([st.v for st in states]))
            s["e"].append(np.stack([st.e for st in states]))
            s["delta"].append(np.stack([o.delta for o in outs]))
            s["g"].append(np.stack([np.asarray(g, dtype=np.float64) for g in grads]))

    def finish(self, x_final, states) -> Trace:
        rounds = {k: np.asarray(v, dtype=np.float64) for k, v in self._rounds.items()}
        workers = {
            k: np.asarray(v, dtype=np.float64).reshape(-1, self.n) for k, v in self._workers.items()
        }
        snaps = None
        if self._snaps is not None:
            self._snaps["x"].append(np.array(x_final))
            snaps = {k: np.asarray(v, dtype=np.float64) for k, v in self._snaps.items()}
        b = self.problem.bounds
        self.trace = Trace(
            config=self.config,
            n_workers=self.n,
            dim=self.problem.dim,
            rounds=rounds,
            workers=workers,
            bounds=b.as_dict(),
            initial_loss=float(self._initial_loss),
            final_x=np.array(x_final, dtype=np.float64),
            snapshots=snaps,
            wall_time=time.perf_counter() - self._t0,
        )
        return self.trace


def _l2(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.add.accumulate(a * a)[-1]))
