import numpy as np

from qadam.distributed import RunConfig, run_synchronous
from qadam.optimizer import Hyperparams, minimize
from qadam.problems import quadratic
from qadam.quantize import Quantizer
from qadam.trace import CSV_COLUMNS, ROUND_FIELDS, SNAPSHOT_FIELDS, WORKER_FIELDS, Trace


def make_trace(snapshots=True):
    p = quadratic(6, 2.0, (-0.1, 0.1), seed=2)
    cfg = RunConfig(p, workers=3, steps=40, hyper=Hyperparams(alpha=0.01), kg=3, kx=6, snapshots=snapshots, seed=5)
    return run_synchronous(cfg)


def test_shapes():
    tr = make_trace()
    T, N, d = 40, 3, 6
    assert len(tr) == T
    assert set(tr.rounds) == set(ROUND_FIELDS) and set(tr.workers) == set(WORKER_FIELDS)
    assert all(v.shape == (T,) for v in tr.rounds.values())
    assert all(v.shape == (T, N) for v in tr.workers.values())
    assert set(tr.snapshots) == set(SNAPSHOT_FIELDS)
    assert tr.snapshots["x"].shape == (T + 1, d)
    assert tr.snapshots["e"].shape == (T + 1, N, d)
    assert tr.snapshots["delta"].shape == (T, N, d)
    assert np.array_equal(tr.snapshots["x"][-1], tr.final_x)


def test_residual_bookkeeping():
    tr = make_trace()
    # the residual entering step t+1 is the one left by step t
    assert np.array_equal(tr.workers["err_in_norm"][1:], tr.workers["err_norm"][:-1])
    assert not tr.workers["err_in_norm"][0].any()
    assert np.allclose(np.linalg.norm(tr.snapshots["e"][1:], axis=2), tr.workers["err_norm"], rtol=1e-14)


def test_csv_format_round_trips():
    tr = make_trace(snapshots=False)
    text = tr.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 41
    back = Trace.from_csv(text)
    for name in ("loss", "grad_norm", "cum_bits", "alpha_t", "theta_t"):
        assert np.array_equal(back.rounds[name], tr.rounds[name])
    assert np.allclose(back.workers["delta_norm"][:, 0], tr.workers["delta_norm"].mean(axis=1), rtol=1e-15)
    assert back.to_csv() == text


def test_json_round_trip():
    tr = make_trace()
    back = Trace.from_json(tr.to_json())
    assert back.to_json() == tr.to_json()
    assert back.config == tr.config
    for k in SNAPSHOT_FIELDS:
        assert np.array_equal(back.snapshots[k], tr.snapshots[k])


def test_metrics_at_broadcast_and_server_point():
    p = quadratic(6, 2.0, (-0.1, 0.1), seed=2)
    tr = minimize(p, Hyperparams(alpha=0.01), 30, qx=Quantizer.parse(3, role="weight"), snapshots=True)
    xh, x = tr.snapshots["x_hat"], tr.snapshots["x"][:-1]
    assert np.allclose(tr.rounds["grad_norm"], np.linalg.norm(p.a * (xh - p.x_star), axis=1), rtol=1e-14)
    assert np.allclose(tr.rounds["grad_norm_x"], np.linalg.norm(p.a * (x - p.x_star), axis=1), rtol=1e-14)
    assert tr.min_weight_contraction() < 1.0


def test_config_echo():
    tr = make_trace(snapshots=False)
    c = tr.config
    assert (c["workers"], c["steps"], c["kg"], c["kx"], c["ef"]) == (3, 40, "3", "6", True)
    assert c["seeds"] == [[5, 0], [5, 1], [5, 2]]
