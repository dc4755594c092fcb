"""Command-line front end: ``run``, ``sweep`` and ``verify``.

Every flag has a config-file equivalent (``key = value`` per line, ``#``
comments); flags given on the command line override the file.  The
effective configuration is written next to the outputs as ``config.txt``.

Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .distributed import RunConfig, run_synchronous
from .errors import ConfigError, WireFormatError
from .optimizer import Hyperparams
from .problems import make_problem
from .quantize import Quantizer
from .trace import Trace
from .verify import verify_trace

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "QADAM_OUT"
DEFAULT_OUT = "qadam-out"

# key -> (parser, default); the file and the flags share these names
KEYS = {
    "problem": (str, "quadratic"),
    "dim": (int, 10),
    "workers": (int, 1),
    "steps": (int, 1000),
    "kg": (str, "fp"),
    "kx": (str, "fp"),
    "ef": (str, "on"),
    "alpha": (float, 0.001),
    "beta": (float, 0.99),
    "theta": (float, 0.999),
    "eps": (float, 1e-5),
    "schedule": (str, "decay_sqrt_t"),
    "horizon": (int, None),
    "period": (int, None),
    "seed": (int, 0),
    "problem_seed": (int, 0),
    "snapshots": (str, "off"),
    "out": (str, None),
    "message_log": (str, "off"),
    # problem-specific
    "condition_number": (float, 1.0),
    "noise": (float, 0.1),
    "n_samples": (int, None),
    "batch": (int, None),
    "label_noise": (float, None),
    "hidden": (int, None),
    "activation": (str, None),
    "data": (str, None),
    # sweep
    "axis": (str, None),
    "values": (str, None),
    "jobs": (int, 1),
}
PROBLEM_KEYS = ("condition_number", "noise", "n_samples", "batch", "label_noise", "hidden", "activation", "data")
SWEEP_AXES = ("kg", "kx", "alpha")
_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


def parse_bool(value, field: str) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ConfigError(f"{field}: expected on/off, got {value!r}", field=field)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; unknown keys are a config error."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value", field="config")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}", field=key)
            out[key] = value
    return out


def _coerce(key: str, value):
    kind, _ = KEYS[key]
    if value is None or isinstance(value, kind):
        return value
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}", field=key) from None


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = {k: default for k, (_, default) in KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    if cfg["out"] is None:
        cfg["out"] = os.environ.get(OUT_ENV, DEFAULT_OUT)
    return cfg


def build_run(cfg: dict) -> RunConfig:
    """Validate ``cfg`` and turn it into a :class:`RunConfig`."""
    kw = {k: cfg[k] for k in PROBLEM_KEYS if cfg.get(k) is not None}
    if cfg["dim"] < 1:
        raise ConfigError(f"dim must be >= 1, got {cfg['dim']}", field="dim")
    problem = make_problem(cfg["problem"], cfg["dim"], cfg["problem_seed"], **kw)
    hyper = Hyperparams(
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        theta=cfg["theta"],
        epsilon=cfg["eps"],
        schedule=cfg["schedule"],
        horizon=cfg["horizon"],
        period=cfg["period"],
    )
    log = None
    if str(cfg.get("message_log", "off")).lower() not in _FALSE:
        log = Path(cfg["out"]) / "messages.bin" if cfg["message_log"].lower() in _TRUE else Path(cfg["message_log"])
    extra = {"problem_seed": cfg["problem_seed"], "problem_kw": kw}
    return RunConfig(
        problem=problem,
        workers=cfg["workers"],
        steps=cfg["steps"],
        hyper=hyper,
        kg=Quantizer.parse(cfg["kg"], role="gradient"),
        kx=Quantizer.parse(cfg["kx"], role="weight"),
        ef=parse_bool(cfg["ef"], "ef"),
        seed=cfg["seed"],
        snapshots=parse_bool(cfg["snapshots"], "snapshots"),
        message_log=log,
        extra=extra,
    )


def summarize(trace: Trace) -> dict:
    loss = trace.rounds["loss"]
    return {
        "final_loss": float(loss[-1]),
        "best_loss": float(loss.min()),
        "final_grad_norm": float(trace.rounds["grad_norm"][-1]),
        "final_loss_x": float(trace.rounds["loss_x"][-1]),
        "final_grad_norm_x": float(trace.rounds["grad_norm_x"][-1]),
        "delta_g": trace.min_contraction() if trace.gradient_quantized else 1.0,
        "delta_x": trace.min_weight_contraction() if trace.weight_quantized else 1.0,
        "empirical_D": float(trace.rounds["x_norm"].max()),
        "cum_bits": int(trace.rounds["cum_bits"][-1]),
        "config": trace.config,
    }


def _format_config(cfg: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items() if v is not None)


def write_outputs(trace: Trace, out: Path, cfg: dict | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace.to_csv())
    (out / "trace.json").write_text(trace.to_json())
    summary = summarize(trace)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg is not None:
        (out / "config.txt").write_text(_format_config(cfg))
    return summary


def execute(cfg: dict) -> dict:
    """Run one configuration and write its files under ``cfg['out']``."""
    trace = run_synchronous(build_run(cfg))
    return write_outputs(trace, Path(cfg["out"]), cfg)


def cmd_run(args) -> int:
    cfg = effective_config(args)
    summary = execute(cfg)
    print(
        f"final loss {summary['final_loss']!r}  grad norm {summary['final_grad_norm']!r}  "
        f"bits {summary['cum_bits']}  -> {cfg['out']}"
    )
    return EXIT_OK


def sweep_configs(cfg: dict) -> list[tuple[str, dict]]:
    """Expand a sweep into tagged single-run configurations."""
    axis = cfg.get("axis")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}", field="axis")
    values = [v.strip() for v in str(cfg.get("values") or "").split(",") if v.strip()]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values", field="values")
    ef_modes = [True, False] if str(cfg["ef"]).lower() == "both" else [parse_bool(cfg["ef"], "ef")]
    root = Path(cfg["out"])
    runs = []
    for v in values:
        for ef in ef_modes:
            tag = f"{axis}={v}" + (f"_ef={'on' if ef else 'off'}" if len(ef_modes) > 1 else "")
            sub = dict(cfg, **{axis: _coerce(axis, v), "ef": "on" if ef else "off", "out": str(root / tag)})
            sub.pop("axis")
            sub.pop("values")
            build_run(sub)  # validate every point before running any
            runs.append((tag, sub))
    return runs


SWEEP_COLUMNS = ("tag", "value", "ef", "final_loss", "best_loss", "final_grad_norm", "final_grad_norm_x", "cum_bits")


def cmd_sweep(args) -> int:
    cfg = effective_config(args)
    runs = sweep_configs(cfg)
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(cfg["jobs"]) as pool:
            summaries = list(pool.map(execute, [c for _, c in runs]))
    else:
        summaries = [execute(c) for _, c in runs]
    root = Path(cfg["out"])
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for (tag, c), s in zip(runs, summaries):
        rows.append(
            {
                "tag": tag,
                "value": c[cfg["axis"]],
                "ef": c["ef"],
                **{k: s[k] for k in SWEEP_COLUMNS[3:]},
            }
        )
    with open(root / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    (root / "sweep.json").write_text(json.dumps({"axis": cfg["axis"], "runs": rows}, indent=2) + "\n")
    for r in rows:
        print(f"{r['tag']:<24} final loss {r['final_loss']:.6g}  grad norm {r['final_grad_norm']:.6g}")
    return EXIT_OK


def load_trace(path: Path) -> Trace:
    if path.is_dir():
        path = path / "trace.json" if (path / "trace.json").exists() else path / "trace.csv"
    text = path.read_text()
    if path.suffix == ".csv":
        return Trace.from_csv(text)
    return Trace.from_json(text)


def problem_for_trace(trace: Trace):
    """Rebuild the problem a trace was recorded on, when the config allows it."""
    cfg = trace.config
    if "problem" not in cfg or "dim" not in cfg:
        return None
    try:
        return make_problem(cfg["problem"], int(cfg["dim"]), int(cfg.get("problem_seed", 0)), **cfg.get("problem_kw", {}))
    except (ConfigError, OSError):
        return None


def cmd_verify(args) -> int:
    failed = False
    lines = []
    for p in args.traces:
        path = Path(p)
        trace = load_trace(path)
        problem = problem_for_trace(trace)
        tp = args.theta_prime
        lines.append(f"# {path}")
        for rep in verify_trace(trace, problem, theta_prime=tp):
            lines.append(rep.line())
            failed |= rep.failed and not rep.diagnostic
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text)
    return EXIT_VERIFY if failed else EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    for key in KEYS:
        if key in ("axis", "values", "jobs"):
            continue
        # parse as text here; typing happens after merging with the file
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=key.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qadam", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one configuration")
    _add_run_flags(run)
    run.set_defaults(func=cmd_run)
    sweep = sub.add_parser("sweep", help="run one configuration per value of an axis")
    _add_run_flags(sweep)
    sweep.add_argument("--axis", choices=SWEEP_AXES, default=None)
    sweep.add_argument("--values", default=None, help="comma-separated, e.g. 4,6,8")
    sweep.add_argument("--jobs", default=None, help="parallel worker processes")
    sweep.set_defaults(func=cmd_sweep)
    ver = sub.add_parser("verify", help="check recorded traces")
    ver.add_argument("traces", nargs="+", help="run directories, trace.json or trace.csv files")
    ver.add_argument("--report", help="also write the report to this file")
    ver.add_argument("--theta-prime", type=float, default=None)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        field = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"config error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, WireFormatError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # a bad value that slipped past validation is still a config problem
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
