"""High-precision reference values shared by several test modules."""

import mpmath as mp

mp.mp.dps = 50


def oracle_constants(alpha, beta, theta, eps, G, L, d, f_gap, D, dg, dx, tp=None, horizon=None):
    """The constant definitions evaluated in 50-digit arithmetic."""
    a, b, th, e = (mp.mpf(v) for v in (alpha, beta, theta, eps))
    G, L, D, f_gap, dg, dx = (mp.mpf(v) for v in (G, L, D, f_gap, dg, dx))
    tp = (1 + b**2) / 2 if tp is None else mp.mpf(tp)

    def theta_j(j):
        return 1 - th / (horizon if horizon else j)

    gamma = b / tp
    n_cut = 0
    j = 1
    while theta_j(j) < tp and (horizon is None or j <= horizon):
        n_cut = j
        j += 1
        if horizon is not None and j > horizon:
            break
    c1 = mp.fprod(theta_j(j) / tp for j in range(1, n_cut + 1))
    t1 = theta_j(1)
    core = t1 * c1 * (1 - gamma)
    c2 = (
        5 * a * G**3 * (1 - b) / (2 * e * mp.sqrt(th)) * (b / ((1 - b) * mp.sqrt(core)) + 1) ** 2
        + 5 * a * G**3 / (2 * e * mp.sqrt(th))
        + 5 * b**2 * a * d * mp.sqrt(e) / (2 * mp.sqrt(th) * (1 - b) * core)
        + 5 * a * mp.sqrt(G**2 + e) * G**2 * b**2 / (2 * (1 - b) * mp.sqrt(th) * core * e)
        + 5 * a * mp.sqrt(G**2 + e) * b**2 * d / (2 * (1 - b) * mp.sqrt(th) * core)
    )
    root = mp.sqrt(G**2 + e * d)
    pre = 1 / (mp.sqrt(c1) * (1 - mp.sqrt(gamma)))
    c3 = pre * (L * (2 - dg) * G**2 * a**2 / (e * dg) + c2 * th)
    return {
        "gamma": gamma,
        "n_cut": n_cut,
        "log_c1": mp.log(c1) if n_cut else mp.mpf(0),
        "c2": c2,
        "c3": c3,
        "C": 2 * root / ((1 - b) * a) * f_gap,
        "C_prime": 2 * root * c3 / ((1 - b) * a),
        "c6": 2 * root / ((1 - b) * a) * pre * (L * G**2 * a**2 / e + c2 * th),
        "c7": 8 * (1 - dx) * root * L * D * G / ((1 - b) * mp.sqrt(e * c1) * (1 - mp.sqrt(gamma))),
        "c9": 2 * root / ((1 - b) * a) * pre * (L * (2 - dg) * G**2 * a**2 / (e * dg) + c2 * th),
        "c10": 8 * root * (1 - dx) * L * D * G / (mp.sqrt(c1) * (1 - mp.sqrt(gamma)) * mp.sqrt(e) * (1 - b)),
    }


def assert_matches_oracle(c, ref, rtol=1e-9):
    assert c.n_cut == ref["n_cut"]
    for name in ("gamma", "log_c1", "c2", "c3", "C", "C_prime", "c6", "c7", "c9", "c10"):
        got, want = getattr(c, name), ref[name]
        if want == 0:
            assert got == 0, name
        else:
            assert abs(mp.mpf(got) - want) <= rtol * abs(want), name
