"""Command-line front end: ``thermoimpact <command> [options]``.

Commands read one flat ``key = value`` config file (an optional ``[run]``
section header is allowed), apply ``--set key=value`` overrides and the
dedicated flags, and write JSON or CSV.  Every output carries the resolved
config so a run can be reproduced from its output alone.

Exit codes: 0 success, 2 invalid input or config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .ensemble import StrategyEnsemble, calibrate_beta, decomposition_residual, gibbs_state
from .empirical import (
    bound_violation_report,
    convexity_test,
    estimate_impact_curve,
    realized_variance,
    synthesize_tape,
)
from .exceptions import ConvergenceError, InvalidInputError
from .impact_models import model_from_config
from .monte_carlo import SimConfig, simulate_paths
from .strategies import (
    build_ramp,
    build_square_wave,
    build_triangular,
    build_zero,
    random_roundtrip,
    read_strategy_csv,
)
from .thermo_core import analyze, multi_asset_bound

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

DEFAULTS = {
    "temp.kind": "linear",
    "temp.eta": "1.0",
    "assets": "1",
    "strategy.kind": "triangular",
    "strategy.vbar": "1.0",
    "strategy.T": "1.0",
    "strategy.n": "1",
    "sigma": "1.0",
    "sim.dt": "0.001",
    "sim.n_paths": "10000",
    "sim.seed": "0",
    "sim.antithetic": "false",
    "sim.workers": "1",
    "sim.block_size": "4096",
    "pipeline.n_tapes": "200",
    "pipeline.dt": "0.001",
    "pipeline.n_bins": "20",
    "pipeline.flag_level": "0.001",
    "pipeline.convexity_z": "3",
}

SWEEP_COLUMNS = ["work", "variance_term", "pnl_variance", "profit_prob_exact", "chernoff_bound", "beta_v"]


def load_config(path=None, overrides=()):
    """Defaults, then the file, then ``key=value`` overrides, as a sorted ``dict``."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=("#",))
        parser.optionxform = str
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise InvalidInputError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            cfg.update(parser[section])
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise InvalidInputError(f"override must look like key=value, got {item!r}")
        cfg[key.strip()] = value.strip()
    if "perm.matrix" in cfg:
        cfg.pop("perm.lambda", None)
    else:
        cfg.setdefault("perm.lambda", "0.0")
    return dict(sorted(cfg.items()))


def _get(cfg, key, kind=float):
    if key not in cfg:
        raise InvalidInputError(f"config is missing {key}")
    raw = cfg[key]
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            value = float(raw)
            if not value.is_integer():
                raise ValueError(raw)
            return int(value)
        return kind(raw)
    except ValueError as exc:
        raise InvalidInputError(f"{key}={raw!r} is not a valid {kind.__name__}") from exc


def _float_list(raw, key):
    parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise InvalidInputError(f"{key} must be a comma-separated list of numbers") from exc


def build_strategy(cfg):
    kind = cfg.get("strategy.kind", "triangular").strip().lower()
    if kind == "csv":
        return read_strategy_csv(_get(cfg, "strategy.path", str))
    T = _get(cfg, "strategy.T")
    if kind == "zero":
        return build_zero(T)
    if kind == "random":
        return random_roundtrip(
            _get(cfg, "strategy.seed", int),
            _get(cfg, "strategy.segments", int),
            _get(cfg, "strategy.vbar"),
            T,
            assets=_get(cfg, "assets", int),
        )
    vbar = _get(cfg, "strategy.vbar")
    if kind == "triangular":
        return build_triangular(vbar, T)
    if kind in ("square", "square_wave"):
        return build_square_wave(vbar, T, _get(cfg, "strategy.n", int))
    if kind == "ramp":
        return build_ramp(vbar, T)
    raise InvalidInputError(f"unknown strategy.kind {kind!r}")


def build_sigma(cfg):
    values = _float_list(cfg.get("sigma", ""), "sigma")
    if len(values) == 1:
        return values[0]
    d = int(round(math.sqrt(len(values))))
    if d * d != len(values):
        raise InvalidInputError(f"sigma matrix needs a square number of entries, got {len(values)}")
    return np.asarray(values).reshape(d, d)


def build_sim_config(cfg):
    return SimConfig(
        sigma=build_sigma(cfg),
        dt=_get(cfg, "sim.dt"),
        n_paths=_get(cfg, "sim.n_paths", int),
        seed=_get(cfg, "sim.seed", int),
        antithetic=_get(cfg, "sim.antithetic", bool),
        workers=_get(cfg, "sim.workers", int),
        block_size=_get(cfg, "sim.block_size", int),
    )


def read_works_csv(path):
    """``label,work[,count]`` with a header row; returns (ensemble, counts or None)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["label", "work"] or header[2:] not in ([], ["count"]):
        raise InvalidInputError(f"{path}: expected header label,work[,count], got {rows[0]}")
    labels, works, counts = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InvalidInputError(f"{path}:{lineno}: expected {len(header)} fields")
        labels.append(row[0].strip())
        try:
            works.append(float(row[1]))
            if len(header) == 3:
                counts.append(float(row[2]))
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: malformed number") from exc
    if not works:
        raise InvalidInputError(f"{path} has no strategies")
    return StrategyEnsemble(works, labels), (np.asarray(counts) if len(header) == 3 else None)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _cell(x):
    x = _jsonable(x)
    if isinstance(x, bool):
        return str(x).lower()
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, dict)):
        return json.dumps(x, sort_keys=True)
    return str(x)


def render(command, cfg, result, rows, fmt):
    """JSON document or CSV table, both headed by the command and resolved config."""
    if fmt == "json":
        doc = {"metadata": {"command": command, "version": __version__, "config": cfg}, "result": result}
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# command={command}\n# version={__version__}\n")
    for key, value in cfg.items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    columns = list(rows[0]) if rows else []
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def _stats_dict(stats):
    out = stats.to_dict()
    out["sigma"] = _jsonable(stats.sigma)
    return out


def cmd_analyze(cfg, args):
    model = model_from_config(cfg)
    s = build_strategy(cfg)
    sigma = build_sigma(cfg)
    stats = analyze(model, s, sigma)
    result = _stats_dict(stats)
    if s.assets > 1:
        bound = multi_asset_bound(sigma, s, model)
        result["multi_asset"] = {k: getattr(bound, k) for k in bound.__dataclass_fields__}
    row = {k: v for k, v in result.items() if not isinstance(v, (dict, list))}
    return result, [row]


def cmd_simulate(cfg, args):
    model = model_from_config(cfg)
    s = build_strategy(cfg)
    sim = build_sim_config(cfg)

    def progress(done, total):
        if not args.quiet:
            print(f"simulate: block {done}/{total}", file=sys.stderr)

    res = simulate_paths(model, s, sim, progress=progress)
    stats = analyze(model, s, sim.sigma)
    result = {"monte_carlo": res.to_dict(), "analytic": _stats_dict(stats)}
    row = dict(res.to_dict())
    row.update({f"exact_{k}": stats.to_dict()[k] for k in ("mean_pnl", "pnl_variance", "profit_prob_exact", "chernoff_bound")})
    return result, [row]


def _beta_grid(cfg, args):
    raw = args.beta if args.beta is not None else cfg.get("ensemble.beta")
    if raw is None:
        raise InvalidInputError("give --beta or ensemble.beta (one value or a comma list)")
    grid = _float_list(raw, "beta")
    if not grid:
        raise InvalidInputError("beta grid is empty")
    return grid


def _works_path(cfg, args):
    path = args.works or cfg.get("ensemble.works")
    if not path:
        raise InvalidInputError("give --works or ensemble.works (a label,work[,count] CSV)")
    return path


def cmd_ensemble(cfg, args):
    ens, _ = read_works_csv(_works_path(cfg, args))
    states, rows = [], []
    for beta in _beta_grid(cfg, args):
        state = gibbs_state(ens, beta)
        d = state.to_dict()
        d["decomposition_residual"] = decomposition_residual(state)
        states.append(d)
        row = {k: v for k, v in d.items() if k != "probabilities"}
        row.update({f"p[{lab}]": p for lab, p in zip(ens.labels, state.probabilities)})
        rows.append(row)
    return {"labels": list(ens.labels), "works": ens.works, "states": states}, rows


def cmd_calibrate(cfg, args):
    ens, counts = read_works_csv(_works_path(cfg, args))
    if counts is None:
        raise InvalidInputError("calibration needs a count column (label,work,count)")
    cal = calibrate_beta(ens, counts)
    result = {
        "beta_hat": cal.beta_hat,
        "diagnosis": cal.diagnosis,
        "target_mean": cal.target_mean,
        "iterations": cal.iterations,
    }
    if math.isfinite(cal.beta_hat):
        result["state"] = gibbs_state(ens, cal.beta_hat).to_dict()
    row = {k: result[k] for k in ("beta_hat", "diagnosis", "target_mean", "iterations")}
    return result, [row]


def cmd_pipeline(cfg, args):
    """Synthetic tapes -> impact curve -> convexity -> realized variance -> bound report."""
    model = model_from_config(cfg)
    s = build_strategy(cfg)
    sigma = build_sigma(cfg)
    dt = _get(cfg, "pipeline.dt")
    n_tapes = _get(cfg, "pipeline.n_tapes", int)
    if n_tapes < 1:
        raise InvalidInputError("pipeline.n_tapes must be >= 1")
    seed = _get(cfg, "sim.seed", int)
    tapes = []
    for i in range(n_tapes):
        tapes.append(synthesize_tape(model, s, sigma, dt, seed + i))
        if not args.quiet and (i + 1) % max(1, n_tapes // 10) == 0:
            print(f"pipeline: tape {i + 1}/{n_tapes}", file=sys.stderr)
    curve = estimate_impact_curve(tapes, _get(cfg, "pipeline.n_bins", int))
    try:
        verdict = convexity_test(curve, z=_get(cfg, "pipeline.convexity_z"))
        convexity = {
            "is_convex": verdict.is_convex,
            "violating_rates": list(verdict.violating_rates),
        }
    except InvalidInputError as exc:
        convexity = {"is_convex": None, "error": str(exc)}
    rv = np.array([realized_variance(np.concatenate([[0.0], np.cumsum(t.dS)]), t.horizon) for t in tapes])
    sigma_hat = np.sqrt(rv)
    report = bound_violation_report(tapes, model, sigma_hat, flag_level=_get(cfg, "pipeline.flag_level"))
    result = {
        "impact_curve": curve.to_dict(),
        "convexity": convexity,
        "sigma_hat_mean": float(np.mean(sigma_hat)),
        "report": report.to_dict(),
    }
    rows = [{k: getattr(r, k) for k in r.__dataclass_fields__} for r in report.rows]
    return result, rows


def cmd_sweep(cfg, args):
    param = args.param or cfg.get("sweep.param")
    if not param:
        raise InvalidInputError("give --param or sweep.param")
    raw = args.grid if args.grid is not None else cfg.get("sweep.grid", "")
    grid = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
    if not grid:
        raise InvalidInputError("sweep grid is empty")
    rows = []
    for value in grid:
        local = dict(cfg)
        local[param] = value
        stats = analyze(model_from_config(local), build_strategy(local), build_sigma(local))
        d = stats.to_dict()
        row = {param: value}
        row.update({k: d[k] for k in SWEEP_COLUMNS})
        if param == "strategy.n":
            row["variance_term_n2"] = stats.variance_term * _get(local, "strategy.n", int) ** 2
        rows.append(row)
    return {"parameter": param, "rows": rows}, rows


COMMANDS = {
    "analyze": (cmd_analyze, "closed-form P&L statistics of the configured strategy"),
    "simulate": (cmd_simulate, "Monte Carlo round trips"),
    "ensemble": (cmd_ensemble, "Gibbs states over a works CSV at one or more beta"),
    "calibrate": (cmd_calibrate, "maximum-likelihood beta from strategy counts"),
    "pipeline": (cmd_pipeline, "synthetic-tape validation pipeline"),
    "sweep": (cmd_sweep, "closed-form statistics over a parameter grid"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="thermoimpact", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
        p.add_argument("--seed", type=int, help="overrides sim.seed")
        p.add_argument("--out", help="output file (default: standard output)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--quiet", action="store_true", help="no progress on standard error")
        if name in ("ensemble", "calibrate"):
            p.add_argument("--works", help="label,work[,count] CSV")
        if name == "ensemble":
            p.add_argument("--beta", help="inverse temperature or comma list")
        if name == "sweep":
            p.add_argument("--param", help="config key to vary, e.g. strategy.n")
            p.add_argument("--grid", help="comma-separated values")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"sim.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        result, rows = func(cfg, args)
        text = render(args.command, cfg, result, rows, args.format)
        if args.out:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except (InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
