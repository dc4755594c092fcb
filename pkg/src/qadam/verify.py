"""Analysis constants and inequality checks over recorded traces.

The constants follow the convergence bounds for quantized Generic Adam:
``C1`` is a product of ``theta_j / theta'`` over the early steps where
``theta_j < theta'`` and is handled as a logarithm throughout.  The checks
are pure functions of a :class:`~qadam.trace.Trace`; each returns a
:class:`CheckReport` whose ``status`` is ``"pass"``, ``"fail"`` or ``"n/a"``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, MissingSnapshotsError
from .optimizer import Hyperparams, schedule_at

REL_SLACK = 1e-9
EF_TOLERANCE = 1e-10

__all__ = [
    "AnalysisConstants",
    "CheckReport",
    "compute_constants",
    "constants_for_trace",
    "theoretical_bound",
    "check_ef_identity",
    "check_lemma1",
    "check_moment_bound",
    "check_sum_bounds",
    "check_second_moment",
    "check_theorem_bound",
    "verify_trace",
    "hyperparams_from_config",
]


@dataclass(frozen=True)
class AnalysisConstants:
    theta_prime: float
    gamma: float
    n_cut: int
    log_c1: float
    theta_1: float
    c2: float
    c3: float
    C: float
    C_prime: float
    c5: float
    c6: float
    c7: float
    c8: float
    c9: float
    c10: float
    # inputs echoed for theoretical_bound
    alpha: float
    beta: float
    theta: float
    epsilon: float
    G: float
    L: float
    D: float
    d: int
    delta_g: float
    delta_x: float
    f_gap: float
    schedule: str
    horizon: int | None = None

    @property
    def c1(self) -> float:
        return math.exp(self.log_c1)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["c1"] = self.c1
        return out


@dataclass(frozen=True)
class CheckReport:
    name: str
    status: str
    margin: float = float("nan")
    detail: str = ""
    diagnostic: bool = False

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    def line(self) -> str:
        tag = " (diagnostic)" if self.diagnostic else ""
        return f"{self.name}\t{self.status}\t{self.margin!r}\t{self.detail}{tag}"


def _n_cut(h: Hyperparams, theta_prime: float) -> int:
    # theta_j < theta' <=> j (1 - theta') < theta, decided exactly on the
    # binary inputs; evaluating 1 - theta/j in floats misplaces ties
    theta, gap = Fraction(h.theta), 1 - Fraction(theta_prime)
    if h.schedule == "fixed_horizon":
        return h.horizon if h.horizon * gap < theta else 0
    # theta_j = 1 - theta/j is increasing: the largest j with j * gap < theta
    return max(math.ceil(theta / gap) - 1, 0)


def compute_constants(
    h: Hyperparams,
    *,
    G: float,
    L: float,
    d: int,
    f_gap: float,
    D: float = 0.0,
    delta_g: float = 1.0,
    delta_x: float = 1.0,
    theta_prime: float | None = None,
) -> AnalysisConstants:
    """Evaluate every constant of the convergence bounds.

    ``f_gap`` is ``f(x_1) - f*``.  ``theta_prime`` defaults to the midpoint
    ``(1 + beta**2) / 2``.
    """
    beta, theta, alpha, eps = h.beta, h.theta, h.alpha, h.epsilon
    tp = (1.0 + beta * beta) / 2.0 if theta_prime is None else float(theta_prime)
    if not beta * beta < tp < 1.0:
        raise ConfigError(f"theta' must lie in (beta^2, 1) = ({beta * beta}, 1), got {tp}", field="theta_prime")
    if not beta < tp:
        raise ConfigError(f"theta' must exceed beta={beta} for gamma = beta/theta' < 1", field="theta_prime")
    for name, val in (("delta_g", delta_g), ("delta_x", delta_x)):
        if not 0.0 < val <= 1.0:
            raise ConfigError(f"{name} must be in (0, 1], got {val}", field=name)
    if G is None or L is None:
        raise ConfigError("G and L must be known to evaluate the constants", field="bounds")

    gamma = beta / tp
    n_cut = _n_cut(h, tp)
    log_c1 = 0.0
    for j in range(1, n_cut + 1):
        _, th = schedule_at(h, j)
        if th <= 0.0:
            raise ConfigError("theta_j = 0 makes C1 vanish; use theta < 1", field="theta")
        log_c1 += math.log(th / tp)
    _, theta_1 = schedule_at(h, 1)
    if theta_1 <= 0.0:
        raise ConfigError("theta_1 = 0 makes C2 undefined; use theta < 1", field="theta")

    log_1mg = math.log1p(-gamma)
    # 1 / (theta_1 C1 (1 - gamma)), the factor that makes C2 large
    inv_small = math.exp(-(math.log(theta_1) + log_c1 + log_1mg))
    rt = math.sqrt(theta)
    c2 = (
        5 * alpha * G**3 * (1 - beta) / (2 * eps * rt) * (beta / (1 - beta) * math.sqrt(inv_small) + 1) ** 2
        + 5 * alpha * G**3 / (2 * eps * rt)
        + 5 * beta**2 * alpha * d * math.sqrt(eps) / (2 * rt * (1 - beta)) * inv_small
        + 5 * alpha * math.sqrt(G * G + eps) * G * G * beta**2 / (2 * (1 - beta) * rt * eps) * inv_small
        + 5 * alpha * math.sqrt(G * G + eps) * beta**2 * d / (2 * (1 - beta) * rt) * inv_small
    )
    inv_root_c1 = math.exp(-0.5 * log_c1)
    denom = 1.0 - math.sqrt(gamma)
    sq = math.sqrt(G * G + eps * d)
    quant_term = L * (2 - delta_g) * G * G * alpha**2 / (eps * delta_g)
    c3 = inv_root_c1 / denom * (quant_term + c2 * theta)
    C = 2 * sq / ((1 - beta) * alpha) * f_gap
    C_prime = 2 * sq * c3 / ((1 - beta) * alpha)
    c6 = 2 * sq * inv_root_c1 / ((1 - beta) * alpha * denom) * (L * G * G * alpha**2 / eps + c2 * theta)
    c7 = 8 * (1 - delta_x) * sq * L * D * G * inv_root_c1 / ((1 - beta) * math.sqrt(eps) * denom)
    c9 = 2 * sq * inv_root_c1 / ((1 - beta) * alpha * denom) * (quant_term + c2 * theta)
    c10 = 8 * sq * (1 - delta_x) * L * D * G * inv_root_c1 / (denom * math.sqrt(eps) * (1 - beta))
    return AnalysisConstants(
        theta_prime=tp,
        gamma=gamma,
        n_cut=n_cut,
        log_c1=log_c1,
        theta_1=theta_1,
        c2=c2,
        c3=c3,
        C=C,
        C_prime=C_prime,
        c5=C,
        c6=c6,
        c7=c7,
        c8=C,
        c9=c9,
        c10=c10,
        alpha=alpha,
        beta=beta,
        theta=theta,
        epsilon=eps,
        G=G,
        L=L,
        D=D,
        d=d,
        delta_g=delta_g,
        delta_x=delta_x,
        f_gap=f_gap,
        schedule=h.schedule,
        horizon=h.horizon,
    )


def theoretical_bound(c: AnalysisConstants, T: int) -> float:
    """Right-hand side of the applicable bound on ``E||grad f||^2`` after T steps.

    The general (gradient + weight quantized) form covers the others: it
    reduces to the gradient-only bound when ``delta_x = 1`` and to the
    weight-only bound when ``delta_g = 1``.  For ``fixed_horizon`` the
    fixed-step-size variant is used, whose neighborhood term is half of
    ``C10``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if c.schedule == "decay_sqrt_t":
        harmonic = math.fsum(1.0 / t for t in range(1, T + 1))
        return (c.c8 + c.c9 * harmonic) / math.sqrt(T) + c.c10
    if c.schedule == "fixed_horizon":
        inv_root_c1 = math.exp(-0.5 * c.log_c1)
        denom = 1.0 - math.sqrt(c.gamma)
        sq = math.sqrt(c.G**2 + c.epsilon * c.d)
        inner = (
            c.f_gap
            + inv_root_c1 / denom * _quant_term(c)
            + c.c2 * c.theta * inv_root_c1 / denom
        )
        return 2 * sq / ((1 - c.beta) * c.alpha * math.sqrt(T)) * inner + c.c10 / 2.0
    raise ValueError(f"no convergence bound for schedule {c.schedule!r}")


def _quant_term(c: AnalysisConstants) -> float:
    return c.L * (2 - c.delta_g) * c.G**2 * c.alpha**2 / (c.epsilon * c.delta_g)


def hyperparams_from_config(cfg: dict) -> Hyperparams:
    return Hyperparams(
        alpha=float(cfg["alpha"]),
        beta=float(cfg["beta"]),
        theta=float(cfg["theta"]),
        epsilon=float(cfg["eps"]),
        schedule=cfg.get("schedule", "decay_sqrt_t"),
        horizon=cfg.get("horizon"),
        period=cfg.get("period"),
    )


def constants_for_trace(trace, theta_prime: float | None = None, G: float | None = None) -> AnalysisConstants:
    """Constants with every unknown filled from the trace itself.

    ``G`` is the larger of the declared bound and the largest observed
    gradient, ``D`` the largest observed ``||x_t||``, and the contraction
    factors are the trace minima (1 when the quantizer is off).
    """
    h = hyperparams_from_config(trace.config)
    b = trace.bounds or {}
    if G is None:
        G = max(trace.max_gradient_norm(), b.get("G") or 0.0)
    L = b.get("L")
    if L is None:
        raise ConfigError("problem has no smoothness constant L", field="bounds")
    D = float(np.max(trace.rounds["x_norm"])) if len(trace) else 0.0
    dg = trace.min_contraction() if trace.gradient_quantized else 1.0
    dx = trace.min_weight_contraction() if trace.weight_quantized else 1.0
    f_gap = max(trace.initial_loss - b.get("f_star", 0.0), 0.0)
    return compute_constants(
        h, G=G, L=L, d=trace.dim, f_gap=f_gap, D=D, delta_g=dg, delta_x=dx, theta_prime=theta_prime
    )


def _prefix_report(name, lhs, rhs, detail="") -> CheckReport:
    """Pass iff ``lhs <= rhs`` everywhere, up to relative slack."""
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if lhs.size == 0:
        return CheckReport(name, "pass", 0.0, "empty trace")
    scale = np.maximum(np.abs(rhs), 1e-300)
    rel = (rhs - lhs) / scale
    ok = lhs <= rhs + REL_SLACK * np.abs(rhs) + 1e-300
    margin = float(np.min(rel))
    if ok.all():
        return CheckReport(name, "pass", margin, detail)
    first = int(np.argmin(ok)) + 1
    return CheckReport(name, "fail", margin, f"first violation at step {first}; {detail}".strip("; "))


def check_ef_identity(trace) -> CheckReport:
    """Max violation of ``(x_{t+1} - e_{t+1}) - (x_t - e_t) + delta_t`` (worker means)."""
    name = "ef_identity"
    if not trace.ef:
        return CheckReport(name, "n/a", detail="error feedback disabled")
    s = trace.snapshots
    if s is None:
        raise MissingSnapshotsError("ef_identity needs x, e and delta snapshots")
    x, e, delta = s["x"], s["e"], s["delta"]
    n = e.shape[1]
    e_mean = np.cumsum(e, axis=1)[:, -1, :] / n
    d_mean = np.cumsum(delta, axis=1)[:, -1, :] / n
    corrected = x - e_mean
    viol = corrected[1:] - corrected[:-1] + d_mean
    worst = float(np.max(np.abs(viol))) if viol.size else 0.0
    status = "pass" if worst <= EF_TOLERANCE else "fail"
    return CheckReport(name, status, worst, f"max |violation| {worst:.3e}, tolerance {EF_TOLERANCE:g}")


def check_lemma1(trace, delta_g: float | None = None) -> CheckReport:
    """Residual/step cross-sum bound, at every prefix, for every worker.

    Both pairings are checked: the residual left after step t and the one
    that entered it, each against ``||delta_t||``.  ``delta_g`` defaults to
    each worker's smallest observed contraction factor.
    """
    name = "lemma1"
    if not trace.ef:
        return CheckReport(name, "n/a", detail="error feedback disabled")
    w = trace.workers
    worst = math.inf
    for i in range(trace.n_workers):
        dg = trace.min_contraction(i) if delta_g is None else delta_g
        if not 0.0 < dg <= 1.0:
            return CheckReport(name, "fail", -math.inf, f"worker {i}: contraction {dg} outside (0, 1]")
        dn = w["delta_norm"][:, i]
        rhs = (1.0 - dg) / dg * np.cumsum(dn * dn)
        for label, en in (("after", w["err_norm"][:, i]), ("before", w["err_in_norm"][:, i])):
            rep = _prefix_report(name, np.cumsum(en * dn), rhs)
            worst = min(worst, rep.margin)
            if rep.failed:
                return CheckReport(name, "fail", rep.margin, f"worker {i} ({label}-step residual): {rep.detail}")
    return CheckReport(name, "pass", worst, f"{trace.n_workers} worker(s)")


def check_moment_bound(trace, consts: AnalysisConstants) -> CheckReport:
    """``m_t**2 <= v_t / (C1 (1 - gamma) (1 - theta_t))`` coordinatewise, in log space."""
    name = "moment_bound"
    s = trace.snapshots
    if s is None:
        raise MissingSnapshotsError("moment_bound needs m and v snapshots")
    m, v = s["m"], s["v"]
    theta_t = trace.rounds["theta_t"]
    one_minus = 1.0 - theta_t
    with np.errstate(divide="ignore"):
        log_cap = -consts.log_c1 - math.log1p(-consts.gamma) - np.log(one_minus)
    log_cap = log_cap[:, None, None]
    nz = m != 0.0
    if np.any(nz & (v <= 0.0)):
        return CheckReport(name, "fail", -math.inf, "nonzero first moment with zero second moment")
    with np.errstate(divide="ignore"):
        lhs = np.where(nz, 2.0 * np.log(np.abs(m)), -np.inf)
        rhs = np.where(nz, np.log(np.where(v > 0, v, 1.0)) + log_cap, np.inf)
    gap = rhs - lhs
    finite = np.isfinite(gap)
    margin = float(np.min(gap[finite])) if finite.any() else math.inf
    ok = bool(np.all(gap >= -REL_SLACK))
    return CheckReport(name, "pass" if ok else "fail", margin, "log-space margin (log rhs - log lhs)")


def check_sum_bounds(trace, G: float | None = None, h: Hyperparams | None = None) -> CheckReport:
    """Step-size sums and the l1 bound on v, per worker and per prefix.

    Checked: ``||v_t||_1 <= G^2``, ``||delta_t||^2 <= G^2 alpha_t^2 / eps``,
    ``sum ||delta_t||^2 <= G^2/eps sum alpha_t^2`` and
    ``sum ||delta_t|| <= G/sqrt(eps) sum alpha_t``; for the ``alpha/sqrt(t)``
    schedule also the closed forms ``G^2 alpha^2/eps H_T`` and
    ``2 G alpha sqrt(T/eps)``.  ``G`` defaults to the largest gradient norm
    each worker observed.
    """
    name = "sum_bounds"
    h = h or hyperparams_from_config(trace.config)
    w = trace.workers
    alpha_t = trace.rounds["alpha_t"]
    T = np.arange(1, len(trace) + 1, dtype=np.float64)
    worst = math.inf
    for i in range(trace.n_workers):
        Gi = float(np.max(w["g_norm"][:, i])) if G is None else G
        dn = w["delta_norm"][:, i]
        checks = [
            ("v_l1", w["v_l1"][:, i], np.full_like(dn, Gi * Gi)),
            ("step", dn * dn, Gi * Gi * alpha_t**2 / h.epsilon),
            ("sum_sq", np.cumsum(dn * dn), Gi * Gi / h.epsilon * np.cumsum(alpha_t**2)),
            ("sum", np.cumsum(dn), Gi / math.sqrt(h.epsilon) * np.cumsum(alpha_t)),
        ]
        if h.schedule == "decay_sqrt_t":
            checks.append(("sum_sq_closed", np.cumsum(dn * dn), Gi * Gi * h.alpha**2 / h.epsilon * np.cumsum(1.0 / T)))
            checks.append(("sum_closed", np.cumsum(dn), 2 * Gi * h.alpha * np.sqrt(T) / math.sqrt(h.epsilon)))
        for label, lhs, rhs in checks:
            rep = _prefix_report(name, lhs, rhs)
            worst = min(worst, rep.margin)
            if rep.failed:
                return CheckReport(name, "fail", rep.margin, f"worker {i} {label}: {rep.detail}")
    return CheckReport(name, "pass", worst, f"G={'observed' if G is None else G}")


def check_second_moment(trace, problem) -> CheckReport:
    """Checks that need the exact ``E[g^2]`` at each evaluated point.

    With ``vhat_t = theta_t v_{t-1} + (1 - theta_t) E[g_t^2]``: ``||vhat_t||_1
    <= G^2`` for the declared G, and ``||grad f||^2 <= sqrt(||vhat+eps||_1)
    sum_k grad_k^2 / sqrt(vhat_k + eps)``.
    """
    name = "second_moment"
    if problem is None or trace.snapshots is None:
        return CheckReport(name, "n/a", detail="needs snapshots and the problem object")
    x_hat = trace.snapshots["x_hat"]
    if problem.second_moment(x_hat[0]) is None:
        return CheckReport(name, "n/a", detail="problem has no closed-form second moment")
    G = problem.bounds.G
    if G is None:
        return CheckReport(name, "n/a", detail="problem declares no gradient bound")
    eps = float(trace.config["eps"])
    theta_t = trace.rounds["theta_t"]
    v = trace.snapshots["v"]
    worst = math.inf
    for t in range(len(trace)):
        sigma2 = problem.second_moment(x_hat[t])
        grad = problem.full_gradient(x_hat[t])
        g2 = float(np.sum(grad * grad))
        for i in range(trace.n_workers):
            v_prev = v[t - 1, i] if t > 0 else np.zeros_like(sigma2)
            vhat = theta_t[t] * v_prev + (1.0 - theta_t[t]) * sigma2
            l1 = float(np.sum(vhat))
            weighted = math.sqrt(l1 + eps * vhat.shape[0]) * float(np.sum(grad * grad / np.sqrt(vhat + eps)))
            for lhs, rhs in ((l1, G * G), (g2, weighted)):
                margin = (rhs - lhs) / max(abs(rhs), 1e-300)
                worst = min(worst, margin)
                if lhs > rhs + REL_SLACK * abs(rhs):
                    return CheckReport(name, "fail", margin, f"step {t + 1}, worker {i}")
    return CheckReport(name, "pass", worst)


def check_theorem_bound(trace, consts: AnalysisConstants | None = None) -> CheckReport:
    """Empirical mean of ``||grad f(xhat_t)||^2`` against the theorem's RHS."""
    name = "theorem_bound"
    try:
        consts = consts or constants_for_trace(trace)
        rhs = theoretical_bound(consts, len(trace))
    except (ConfigError, ValueError) as exc:
        return CheckReport(name, "n/a", detail=str(exc), diagnostic=True)
    lhs = float(np.mean(trace.rounds["grad_norm"] ** 2))
    status = "pass" if math.isfinite(rhs) and lhs <= rhs else "fail"
    detail = f"mean grad^2 {lhs:.4g} vs bound {rhs:.4g}"
    if consts.c2 > 1e8:
        detail += f"; C2={consts.c2:.3g} is very large"
    return CheckReport(name, status, rhs - lhs, detail, diagnostic=True)


def verify_trace(trace, problem=None, theta_prime: float | None = None) -> list[CheckReport]:
    """Run every check that applies to ``trace``."""
    reports = []
    snap = trace.snapshots is not None
    have_workers = not np.all(np.isnan(trace.workers["g_norm"]))
    if snap:
        reports.append(check_ef_identity(trace))
    else:
        reports.append(CheckReport("ef_identity", "n/a", detail="no snapshots"))
    if have_workers and not np.all(np.isnan(trace.workers["contraction"])):
        reports.append(check_lemma1(trace))
    else:
        reports.append(CheckReport("lemma1", "n/a", detail="per-worker norms not recorded"))
    consts = None
    try:
        consts = constants_for_trace(trace, theta_prime=theta_prime)
    except (ConfigError, KeyError) as exc:
        const_err = str(exc)
    if snap and consts is not None:
        reports.append(check_moment_bound(trace, consts))
    else:
        why = "no snapshots" if not snap else f"constants unavailable: {const_err}"
        reports.append(CheckReport("moment_bound", "n/a", detail=why))
    if have_workers:
        reports.append(check_sum_bounds(trace))
    else:
        reports.append(CheckReport("sum_bounds", "n/a", detail="per-worker norms not recorded"))
    reports.append(check_second_moment(trace, problem))
    if consts is not None:
        reports.append(check_theorem_bound(trace, consts))
    else:
        reports.append(CheckReport("theorem_bound", "n/a", detail="constants unavailable", diagnostic=True))
    return reports
