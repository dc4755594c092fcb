"""Test objectives with exact gradients and seeded stochastic oracles.

Each problem exposes ``loss``, ``full_gradient``, ``stochastic_gradient``
(drawing from a :class:`GradientStream`) and the constants the analysis
needs.  Noise always has finite support so the gradient bound ``G`` is a hard
bound rather than a high-probability one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "Bounds",
    "GradientStream",
    "Problem",
    "Quadratic",
    "LogisticSynthetic",
    "TinyMLP",
    "quadratic",
    "logistic_synthetic",
    "logistic_from_csv",
    "mlp_tiny",
    "make_problem",
]


@dataclass(frozen=True)
class Bounds:
    """Problem constants; ``None`` means not known in closed form.

    ``D`` is the radius of the ball on which ``G`` is guaranteed, not a
    constraint on the iterates.
    """

    G: float | None = None
    L: float | None = None
    D: float | None = None
    f_star: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _key(seed) -> int:
    state = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    return int(state[0]) | (int(state[1]) << 64)


class GradientStream:
    """Counter-based sample stream.

    Draw number ``c`` of the stream with seed ``s`` always sees the same
    random bits, regardless of what was drawn before.  ``seed`` may be an int
    or a sequence of ints (e.g. ``(run_seed, worker_id)``).
    """

    def __init__(self, seed, counter: int = 0):
        self.seed = seed
        self.counter = counter
        self._key = _key(seed)
        self._bitgen = np.random.Philox(key=self._key)
        self._template = self._bitgen.state
        self._rng = np.random.Generator(self._bitgen)

    def generator(self, counter: int) -> np.random.Generator:
        """Generator positioned at the start of draw ``counter``.

        The returned object is shared and repositioned by the next call.
        """
        state = dict(self._template)
        # draw index in the second counter word, so draws never overlap
        state["state"] = {
            "counter": np.array([0, counter, 0, 0], dtype=np.uint64),
            "key": self._template["state"]["key"],
        }
        self._bitgen.state = state
        return self._rng

    def next(self) -> np.random.Generator:
        rng = self.generator(self.counter)
        self.counter += 1
        return rng

    def __repr__(self):
        return f"GradientStream(seed={self.seed!r}, counter={self.counter})"


class Problem:
    """Interface shared by all objectives."""

    name = "problem"
    dim: int
    bounds: Bounds
    x0: np.ndarray

    def loss(self, x) -> float:
        raise NotImplementedError

    def full_gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def stochastic_gradient(self, x, stream: GradientStream) -> np.ndarray:
        raise NotImplementedError

    def second_moment(self, x) -> np.ndarray | None:
        """Exact ``E[g**2]`` coordinatewise, or None when unavailable."""
        return None

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, **self.bounds.as_dict()}


class Quadratic(Problem):
    """``f(x) = 0.5 (x - x*)^T A (x - x*)`` with diagonal ``A``.

    Stochastic gradients add per-coordinate noise drawn uniformly from a
    finite zero-mean set of values.
    """

    name = "quadratic"

    def __init__(self, eigenvalues, x_star, noise=(), radius: float = 10.0, x0=None):
        self.a = np.asarray(eigenvalues, dtype=np.float64)
        self.x_star = np.asarray(x_star, dtype=np.float64)
        self.dim = int(self.a.shape[0])
        if self.x_star.shape != self.a.shape:
            raise ConfigError("x_star and eigenvalues must have the same length", field="dim")
        self.noise = np.asarray(sorted(noise) if len(noise) else [0.0], dtype=np.float64)
        spread = float(np.max(np.abs(self.noise)))
        if abs(float(np.mean(self.noise))) > 1e-12 * max(spread, 1.0):
            raise ConfigError("noise set must have zero mean", field="noise")
        self.noise_var = float(np.mean(self.noise**2))
        self.radius = float(radius)
        self.x0 = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=np.float64)
        lmax = float(np.max(self.a))
        xs = float(np.linalg.norm(self.x_star))
        G = lmax * (self.radius + xs) + math.sqrt(self.dim) * spread
        self.bounds = Bounds(G=G, L=lmax, D=self.radius, f_star=0.0)

    def loss(self, x) -> float:
        r = np.asarray(x, dtype=np.float64) - self.x_star
        return 0.5 * float(np.sum(self.a * r * r))

    def full_gradient(self, x) -> np.ndarray:
        return self.a * (np.asarray(x, dtype=np.float64) - self.x_star)

    def stochastic_gradient(self, x, stream: GradientStream) -> np.ndarray:
        grad = self.full_gradient(x)
        if self.noise.shape[0] == 1:
            return grad
        u = stream.next().random(self.dim)
        idx = (u * self.noise.shape[0]).astype(np.intp)
        return grad + self.noise[idx]

    def second_moment(self, x) -> np.ndarray:
        return self.full_gradient(x) ** 2 + self.noise_var


def quadratic(
    dim: int,
    condition_number: float = 1.0,
    noise_levels=(),
    *,
    seed: int = 0,
    x_star=None,
    radius: float | None = None,
    x0=None,
) -> Quadratic:
    """Diagonal quadratic with eigenvalues spread geometrically over [1, kappa].

    ``x_star`` defaults to a seeded draw from ``U(-1, 1)^dim``; the start
    point defaults to the origin.  ``radius`` defaults to ``2 ||x* - x0|| + 1``.
    """
    if dim < 1:
        raise ConfigError("dim must be >= 1", field="dim")
    if not condition_number >= 1.0:
        raise ConfigError(f"condition number must be >= 1, got {condition_number}", field="condition_number")
    eig = np.geomspace(1.0, condition_number, dim) if dim > 1 else np.ones(1)
    if x_star is None:
        x_star = np.random.default_rng(seed).uniform(-1.0, 1.0, size=dim)
    x_star = np.asarray(x_star, dtype=np.float64)
    start = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    if radius is None:
        radius = 2.0 * float(np.linalg.norm(x_star - start)) + float(np.linalg.norm(start)) + 1.0
    noise = np.asarray(noise_levels, dtype=np.float64).ravel()
    return Quadratic(eig, x_star, noise, radius=radius, x0=start)


def _sample_rows(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    if batch == n:
        return np.arange(n)
    # the b smallest of n iid uniform keys form a uniform b-subset
    return np.argpartition(rng.random(n), batch - 1)[:batch]


class LogisticSynthetic(Problem):
    """Mean logistic loss ``log(1 + exp(-y a.w))`` over a fixed dataset.

    Labels are in {-1, +1}.  The stochastic oracle averages a minibatch drawn
    uniformly without replacement.
    """

    name = "logistic"

    def __init__(self, features, labels, batch: int, w_true=None):
        self.A = np.asarray(features, dtype=np.float64)
        self.y = np.asarray(labels, dtype=np.float64)
        n, d = self.A.shape
        if batch < 1:
            raise ConfigError("batch must be >= 1", field="batch")
        if batch > n:
            raise ConfigError(f"batch {batch} exceeds n_samples {n}", field="batch")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ConfigError("labels must be -1/+1 (or 0/1 before mapping)", field="labels")
        self.n, self.dim, self.batch = n, d, batch
        self.w_true = w_true
        self.x0 = np.zeros(d)
        row_norms = np.linalg.norm(self.A, axis=1)
        # each per-sample gradient is sigma(.) * y * a with |sigma| < 1
        G = float(np.max(row_norms))
        L = float(np.linalg.eigvalsh(self.A.T @ self.A / n)[-1]) / 4.0
        self.bounds = Bounds(G=G, L=L, D=None, f_star=0.0)

    def _margins(self, x, rows=None):
        A = self.A if rows is None else self.A[rows]
        y = self.y if rows is None else self.y[rows]
        return A, y, y * (A @ np.asarray(x, dtype=np.float64))

    def loss(self, x) -> float:
        _, _, z = self._margins(x)
        return float(np.mean(np.logaddexp(0.0, -z)))

    def _grad(self, x, rows=None) -> np.ndarray:
        A, y, z = self._margins(x, rows)
        # d/dz log(1+exp(-z)) = -sigmoid(-z)
        s = -y * _sigmoid(-z)
        return A.T @ s / A.shape[0]

    def per_sample_gradients(self, x) -> np.ndarray:
        _, _, z = self._margins(x)
        return (-self.y * _sigmoid(-z))[:, None] * self.A

    def full_gradient(self, x) -> np.ndarray:
        return self._grad(x)

    def stochastic_gradient(self, x, stream: GradientStream) -> np.ndarray:
        if self.batch == self.n:
            return self._grad(x)
        rows = _sample_rows(stream.next(), self.n, self.batch)
        return self._grad(x, rows)

    def second_moment(self, x) -> np.ndarray:
        # mean of b draws without replacement: Var = (n-b)/(b(n-1)) * population variance
        per = self.per_sample_gradients(x)
        mean = per.mean(axis=0)
        if self.n == 1:
            return mean**2
        pop_var = per.var(axis=0)
        shrink = (self.n - self.batch) / (self.batch * (self.n - 1))
        return mean**2 + shrink * pop_var


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def logistic_synthetic(
    dim: int,
    n_samples: int,
    batch: int,
    seed: int = 0,
    *,
    label_noise: float = 0.0,
) -> LogisticSynthetic:
    """Standard normal features, labels from a random unit separator.

    ``label_noise`` flips each label independently with that probability;
    0 gives linearly separable data.
    """
    if dim < 1 or n_samples < 1:
        raise ConfigError("dim and n_samples must be >= 1", field="dim")
    if batch < 1:
        raise ConfigError("batch must be >= 1", field="batch")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, 1.0, size=(n_samples, dim))
    w_true = rng.normal(size=dim)
    w_true /= np.linalg.norm(w_true)
    y = np.where(A @ w_true >= 0.0, 1.0, -1.0)
    if label_noise > 0.0:
        flips = rng.random(n_samples) < label_noise
        y[flips] *= -1.0
    return LogisticSynthetic(A, y, batch, w_true=w_true)


def logistic_from_csv(path, batch: int) -> LogisticSynthetic:
    """Load a dataset whose last column is the label (0/1 or -1/+1); header required."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty dataset file", field="data")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise ConfigError(f"{path}: non-numeric value ({exc})", field="data") from None
    if not rows or len(rows[0]) < 2:
        raise ConfigError(f"{path}: need at least one feature column and a label", field="data")
    data = np.asarray(rows, dtype=np.float64)
    y = data[:, -1]
    y = np.where(y == 0.0, -1.0, y)
    return LogisticSynthetic(data[:, :-1], y, batch)


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda z, a: _sigmoid(z)),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
}


class TinyMLP(Problem):
    """Fully connected regression network with squared loss.

    Parameters are one flat vector laid out layer by layer as ``W`` (row
    major, shape ``out x in``) followed by ``b``.  The loss is
    ``mean_i 0.5 ||net(a_i) - y_i||^2`` and gradients come from hand-written
    backpropagation.
    """

    name = "mlp"

    def __init__(self, widths, activation, inputs, targets, batch: int, x0):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 3:
            raise ConfigError("need input, at least one hidden, and output widths", field="layers")
        if min(self.widths) < 1:
            raise ConfigError("layer widths must be >= 1", field="layers")
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {sorted(_ACTIVATIONS)}", field="activation")
        self.activation = activation
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.n = self.inputs.shape[0]
        if not 1 <= batch <= self.n:
            raise ConfigError(f"batch must be in [1, {self.n}]", field="batch")
        self.batch = batch
        self.shapes = [(o, i) for i, o in zip(self.widths[:-1], self.widths[1:])]
        self.dim = sum(o * i + o for o, i in self.shapes)
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.bounds = Bounds(G=None, L=None, D=None, f_star=0.0)

    def unflatten(self, x):
        x = np.asarray(x, dtype=np.float64)
        params, pos = [], 0
        for o, i in self.shapes:
            W = x[pos : pos + o * i].reshape(o, i)
            pos += o * i
            b = x[pos : pos + o]
            pos += o
            params.append((W, b))
        return params

    def _forward(self, x, inputs):
        act, _ = _ACTIVATIONS[self.activation]
        params = self.unflatten(x)
        h = inputs
        cache = []
        for li, (W, b) in enumerate(params):
            z = h @ W.T + b
            a = z if li == len(params) - 1 else act(z)
            cache.append((h, z, a))
            h = a
        return h, cache, params

    def _loss_grad(self, x, rows=None, need_grad=True):
        X = self.inputs if rows is None else self.inputs[rows]
        Y = self.targets if rows is None else self.targets[rows]
        out, cache, params = self._forward(x, X)
        resid = out - Y
        loss = 0.5 * float(np.sum(resid * resid)) / X.shape[0]
        if not need_grad:
            return loss, None
        _, dact = _ACTIVATIONS[self.activation]
        grads = []
        upstream = resid / X.shape[0]
        for li in range(len(params) - 1, -1, -1):
            h_in, z, a = cache[li]
            if li != len(params) - 1:
                upstream = upstream * dact(z, a)
            W, _ = params[li]
            grads.append((upstream.T @ h_in, upstream.sum(axis=0)))
            upstream = upstream @ W
        flat = []
        for gW, gb in reversed(grads):
            flat.append(gW.ravel())
            flat.append(gb)
        return loss, np.concatenate(flat)

    def loss(self, x) -> float:
        return self._loss_grad(x, need_grad=False)[0]

    def full_gradient(self, x) -> np.ndarray:
        return self._loss_grad(x)[1]

    def stochastic_gradient(self, x, stream: GradientStream) -> np.ndarray:
        if self.batch == self.n:
            return self.full_gradient(x)
        rows = _sample_rows(stream.next(), self.n, self.batch)
        return self._loss_grad(x, rows)[1]


def mlp_tiny(
    layer_widths=(4, 8, 1),
    activation: str = "tanh",
    dataset_seed: int = 0,
    *,
    n_samples: int = 64,
    batch: int = 16,
) -> TinyMLP:
    """Small MLP on a regression set generated by a random teacher network.

    Targets are centred to have exactly zero mean per output.
    """
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 3:
        raise ConfigError("need at least one hidden layer", field="layers")
    if min(widths) < 1:
        raise ConfigError("layer widths must be >= 1", field="layers")
    rng = np.random.default_rng(dataset_seed)
    X = rng.normal(size=(n_samples, widths[0]))
    teacher = rng.normal(size=widths[1] * widths[0])
    hidden = np.tanh(X @ teacher.reshape(widths[1], widths[0]).T)
    Y = hidden @ rng.normal(size=(widths[1], widths[-1])) / math.sqrt(widths[1])
    Y = Y - Y.mean(axis=0)
    init = []
    for i, o in zip(widths[:-1], widths[1:]):
        init.append(rng.normal(0.0, 1.0 / math.sqrt(i), size=o * i))
        init.append(np.zeros(o))
    return TinyMLP(widths, activation, X, Y, batch, np.concatenate(init))


def make_problem(name: str, dim: int = 10, seed: int = 0, **kw) -> Problem:
    """Build a problem from CLI-style settings."""
    if name == "quadratic":
        noise = kw.get("noise", 0.1)
        levels = (-noise, noise) if noise else ()
        return quadratic(dim, kw.get("condition_number", 1.0), levels, seed=seed)
    if name == "logistic":
        if kw.get("data"):
            return logistic_from_csv(kw["data"], kw.get("batch", 32))
        return logistic_synthetic(
            dim, kw.get("n_samples", 500), kw.get("batch", 32), seed, label_noise=kw.get("label_noise", 0.05)
        )
    if name == "mlp":
        hidden = kw.get("hidden", 8)
        return mlp_tiny((dim, hidden, 1), kw.get("activation", "tanh"), seed,
                        n_samples=kw.get("n_samples", 64), batch=kw.get("batch", 16))
    raise ConfigError(f"unknown problem {name!r}", field="problem")
