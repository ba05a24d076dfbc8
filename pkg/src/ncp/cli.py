"""Command-line interface: ``ncp train | infer | benchmark | oracle-check``.

Option values come from, in order of precedence: the command line, the
command's section of the ``--config`` INI file, built-in defaults.
Environment variables are never consulted.

Exit codes: 0 success, 1 check or runtime failure, 2 usage or path error,
3 training divergence.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import fields, replace

import numpy as np

from . import archive, checks, datasets as ds, evalbench as eb, inference as inf
from .postprocess import MODES, as_operator, whiten
from .trainer import TrainConfig, TrainingDiverged, train

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

log = logging.getLogger("ncp")

STATISTICS = ("cdf", "quantile", "interval", "mean", "moment", "cov", "prob")

# benchmark profiles: kind, dataset family and desk-scale sizes
BENCHMARKS = {
    "linear-gaussian": {"kind": "cde", "family": "LinearGaussian"},
    "econ-density": {"kind": "cde", "family": "EconDensity"},
    "arma-jump": {"kind": "cde", "family": "ArmaJump"},
    "skew-normal": {"kind": "cde", "family": "SkewNormal"},
    "gaussian-mixture": {"kind": "cde", "family": "GaussianMixture"},
    "lggmd": {"kind": "cde", "family": "LGGMD"},
    "independent": {"kind": "cde", "family": "Independent"},
    "laplace-coverage": {"kind": "coverage", "family": "LaplaceModel"},
    "cauchy-coverage": {"kind": "coverage", "family": "CauchyModel"},
}
WHITEN_EPS = {"data": 1e-12, "covariance": 1e-6}
DESK_SCALE = {"n": 10_000, "seeds": 3}
PAPER_SCALE = {"n": 100_000, "seeds": 10}
PAPER_TRAINING = {"epochs": 10_000, "patience": 1_000}

# per-command defaults; keys double as INI keys
DEFAULTS = {
    "train": {
        "family": "LinearGaussian", "n": 10_000, "data": None, "x_cols": None, "y_cols": None,
        "scaling": "none", "mode": "whitened", "epochs": None, "batch_size": None,
        "learning_rate": None, "gamma": None, "patience": None, "d": None, "hidden": None,
        "estimator": None, "n_val": 1000, "whiten_method": "data", "whiten_eps": None,
    },
    "infer": {
        "model": None, "x": None, "box_low": None, "box_high": None, "stat": None, "q": None,
        "alpha": None, "k": None, "b_low": None, "b_high": None, "grid_size": 1000,
        "format": None,
    },
    "benchmark": {"n": None, "seeds": None, "alpha": 0.1, "n_test": 200, "n_train": 20_000},
    "oracle-check": {"sizes": "2,3,5,8,12", "seeds": 5, "perturb": 0.0},
}
DEFAULT_PROFILE = {"train": "benchmark", "benchmark": "linear-gaussian"}


class UsageError(Exception):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", metavar="PATH", default=S, help="INI file with one section per command")
    common.add_argument("--seed", type=int, default=S, help="global seed (default 0)")
    common.add_argument("--out", metavar="DIR", default=S, help="output directory (default: current)")
    common.add_argument("--profile", metavar="NAME", default=S, help="training or benchmark profile")
    common.add_argument("--paper-scale", action="store_true", default=S, help="full-scale n, seeds and epochs")
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    p = argparse.ArgumentParser(prog="ncp", parents=[common], description="Neural conditional probability")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model and write an archive")
    t.add_argument("--family", choices=ds.FAMILIES)
    t.add_argument("--n", type=int)
    t.add_argument("--data", metavar="CSV", help="train on a CSV file instead of a generator")
    t.add_argument("--x-cols", help="comma-separated input columns of --data")
    t.add_argument("--y-cols", help="comma-separated output columns of --data")
    t.add_argument("--scaling", choices=("none", "zscore", "minmax"))
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--gamma", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--d", type=int)
    t.add_argument("--hidden", help="hidden widths, e.g. 64,64")
    t.add_argument("--estimator")
    t.add_argument("--n-val", type=int)
    t.add_argument("--whiten-method", choices=("data", "covariance"),
                   help="exact whitening from the data SVD, or the eps-floored covariance inverse")
    t.add_argument("--whiten-eps", type=float,
                   help="relative floor (data) or absolute floor (covariance); defaults 1e-12 and 1e-6")

    i = sub.add_parser("infer", parents=[common], help="query a trained model")
    i.add_argument("--model", metavar="PATH")
    i.add_argument("--x", help="conditioning point, comma-separated coordinates")
    i.add_argument("--box-low", help="lower corner of a conditioning box")
    i.add_argument("--box-high", help="upper corner of a conditioning box")
    i.add_argument("--stat", help=f"one of {', '.join(STATISTICS)}")
    i.add_argument("--q", type=float, help="quantile level")
    i.add_argument("--alpha", type=float, help="interval miscoverage level")
    i.add_argument("--k", type=int, help="moment order")
    i.add_argument("--b-low", type=float, help="B = (b_low, b_high] for prob")
    i.add_argument("--b-high", type=float)
    i.add_argument("--grid-size", type=int)
    i.add_argument("--format", choices=("json", "csv"))

    b = sub.add_parser("benchmark", parents=[common], help="run a benchmark profile")
    b.add_argument("--n", type=int)
    b.add_argument("--seeds", type=int, help="number of seeds (cde profiles)")
    b.add_argument("--alpha", type=float)
    b.add_argument("--n-test", type=int)
    b.add_argument("--n-train", type=int)

    o = sub.add_parser("oracle-check", parents=[common], help="run the exact-oracle self checks")
    o.add_argument("--sizes", help="comma-separated joint sizes")
    o.add_argument("--seeds", type=int)
    o.add_argument("--perturb", type=float, help="add this to every true singular value (forces failures)")
    return p


def _read_config(path, command):
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    out = {}
    for section in ("global", command):
        if cp.has_section(section):
            out.update({k.replace("-", "_"): v for k, v in cp.items(section)})
    return out


def _coerce(value, like):
    if not isinstance(value, str) or like is None or isinstance(like, str):
        return value
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return type(like)(value)


_GLOBAL_DEFAULTS = {"seed": 0, "out": ".", "profile": None, "paper_scale": False, "verbose": False}
_TYPES = {"n": 0, "epochs": 0, "batch_size": 0, "patience": 0, "d": 0, "n_val": 0, "seed": 0,
          "learning_rate": 0.0, "gamma": 0.0, "q": 0.0, "alpha": 0.0, "k": 0, "b_low": 0.0,
          "b_high": 0.0, "grid_size": 0, "seeds": 0, "n_test": 0, "n_train": 0, "perturb": 0.0, "whiten_eps": 0.0,
          "paper_scale": False, "verbose": False}


def resolve(ns):
    """Merge command line, config file and defaults into a plain namespace."""
    cmd = ns.command
    given = vars(ns)
    cfg = _read_config(given.get("config"), cmd)
    merged = {}
    for key, default in {**_GLOBAL_DEFAULTS, **DEFAULTS[cmd]}.items():
        value = given.get(key)
        if value is None:
            value = _coerce(cfg[key], _TYPES.get(key, default)) if key in cfg else default
        merged[key] = value
    merged["command"] = cmd
    unknown = set(cfg) - set(merged)
    if unknown:
        raise UsageError(f"unknown config keys for {cmd}: {', '.join(sorted(unknown))}")
    return argparse.Namespace(**merged)


def _floats(text, what):
    try:
        return np.array([float(v) for v in str(text).split(",")])
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def train_config(args):
    name = args.profile or DEFAULT_PROFILE["train"]
    if name not in eb.PROFILES:
        raise UsageError(f"unknown training profile {name!r}; choose from {', '.join(sorted(eb.PROFILES))}")
    cfg = eb.PROFILES[name]
    if args.paper_scale:
        cfg = replace(cfg, **PAPER_TRAINING)
    over = {}
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name not in ("seed", "hidden_widths", "adam_betas"):
            over[f.name] = v
    if args.hidden is not None:
        over["hidden_widths"] = tuple(int(w) for w in str(args.hidden).split(","))
    over["seed"] = args.seed
    if "patience" not in over and "epochs" in over:
        over["patience"] = min(cfg.patience, over["epochs"])
    try:
        return replace(cfg, **over)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _train_data(args):
    if args.data is not None:
        if not os.path.isfile(args.data):
            raise FileNotFoundError(f"data file not found: {args.data}")
        if not args.x_cols or not args.y_cols:
            raise UsageError("--data needs --x-cols and --y-cols")
        tr, va, _ = ds.load_csv(
            args.data, args.x_cols.split(","), args.y_cols.split(","), seed=args.seed, scaling=args.scaling
        )
        return tr, va
    n = PAPER_SCALE["n"] if args.paper_scale and args.n == DEFAULTS["train"]["n"] else args.n
    spec = ds.GeneratorSpec(args.family, n=n, seed=args.seed)
    return ds.generate(spec), ds.generate(spec.with_(n=args.n_val, seed=eb.validation_seed(args.seed)))


def cmd_train(args):
    cfg = train_config(args)
    data, val = _train_data(args)
    fitted = train(data, val, cfg)
    if args.mode == "whitened":
        eps = args.whiten_eps if args.whiten_eps is not None else WHITEN_EPS[args.whiten_method]
        model = whiten(fitted, eps=eps, method=args.whiten_method)
    else:
        model = as_operator(fitted, args.mode)
    out = _outdir(args)
    path = os.path.join(out, "model.ncp")
    archive.save(model, path)
    rows = ["epoch,train_loss,train_reg,val_loss"] + [
        f"{r.epoch},{r.train_loss!r},{r.train_reg!r},{r.val_loss!r}" for r in fitted.loss_history
    ]
    _write(os.path.join(out, "history.csv"), "\n".join(rows) + "\n")
    print(json.dumps({"archive": path, "sha256": archive.file_hash(path), "best_epoch": fitted.best_epoch,
                      "epochs_run": len(fitted.loss_history)}))
    return 0


# --------------------------------------------------------------------------
# infer
# --------------------------------------------------------------------------


def _event(args, op):
    if args.x is not None and (args.box_low is not None or args.box_high is not None):
        raise UsageError("give either --x or --box-low/--box-high, not both")
    if args.x is not None:
        return inf.ConditioningEvent.point(_floats(args.x, "--x"))
    if args.box_low is not None and args.box_high is not None:
        return inf.ConditioningEvent.box(_floats(args.box_low, "--box-low"), _floats(args.box_high, "--box-high"))
    raise UsageError("infer needs a conditioning event: --x or --box-low and --box-high")


def _require(value, flag, stat):
    if value is None:
        raise UsageError(f"--stat {stat} needs {flag}")
    return value


def cmd_infer(args):
    if args.model is None:
        raise UsageError("infer needs --model")
    if not os.path.isfile(args.model):
        raise FileNotFoundError(f"model archive not found: {args.model}")
    stat = args.stat
    if stat not in STATISTICS:
        raise UsageError(f"--stat must be one of {', '.join(STATISTICS)}")
    op = archive.load(args.model)
    op = as_operator(op)
    event = _event(args, op)
    grid = inf.default_grid(op.y_train, args.grid_size)
    fmt = args.format or ("csv" if stat == "cdf" else "json")
    if stat == "cdf":
        raw = inf.cond_cdf(op, event, grid, sanitize=False)
        clean = inf.cond_cdf(op, event, grid, sanitize=True)
        if fmt == "csv":
            lines = ["t,F_raw,F"] + [
                f"{t!r},{a!r},{b!r}" for t, a, b in zip(grid.tolist(), raw.values.tolist(), clean.values.tolist())
            ]
            text = "\n".join(lines) + "\n"
        else:
            text = json.dumps({"t": grid.tolist(), "F_raw": raw.values.tolist(), "F": clean.values.tolist()})
    else:
        if stat == "quantile":
            out = {"q": _require(args.q, "--q", stat), "value": inf.cond_quantile(op, event, args.q, grid)}
        elif stat == "interval":
            alpha = _require(args.alpha, "--alpha", stat)
            cdf = inf.cond_cdf(op, event, grid, sanitize=True)
            out = inf.interval_search(cdf, alpha).as_dict()
        elif stat == "mean":
            out = {"mean": np.atleast_1d(inf.cond_mean(op, event)).tolist()}
        elif stat == "moment":
            k = _require(args.k, "--k", stat)
            out = {"k": k, "moment": float(inf.cond_moment(op, event, k))}
        elif stat == "cov":
            out = {"cov": inf.cond_covariance(op, event).tolist()}
        else:
            lo, hi = _require(args.b_low, "--b-low", stat), _require(args.b_high, "--b-high", stat)
            pred = lambda y: np.all((y > lo) & (y <= hi), axis=1)  # noqa: E731
            rawp = float(inf.cond_probability(op, pred, event, sanitize=False))
            out = {"b_low": lo, "b_high": hi, "raw": rawp, "sanitized": float(np.clip(rawp, 0.0, 1.0))}
        if fmt == "csv":
            flat = {k: (json.dumps(v) if isinstance(v, list) else v) for k, v in out.items()}
            text = ",".join(flat) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v) for v in flat.values()) + "\n"
        else:
            text = json.dumps(out) + "\n"
    if args.out != ".":
        path = os.path.join(_outdir(args), f"infer_{stat}.{fmt}")
        _write(path, text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


def _bench_training(args, kind):
    cfg = eb.PROFILES["benchmark" if kind == "cde" else "coverage"]
    if args.paper_scale:
        cfg = replace(cfg, **PAPER_TRAINING)
    return cfg


def cmd_benchmark(args):
    name = args.profile or DEFAULT_PROFILE["benchmark"]
    if name not in BENCHMARKS:
        raise UsageError(f"unknown benchmark profile {name!r}; choose from {', '.join(sorted(BENCHMARKS))}")
    prof = BENCHMARKS[name]
    scale = PAPER_SCALE if args.paper_scale else DESK_SCALE
    cfg = _bench_training(args, prof["kind"])
    out = _outdir(args)
    spec = ds.GeneratorSpec(prof["family"])
    t0 = time.perf_counter()
    if prof["kind"] == "cde":
        n = args.n or scale["n"]
        count = args.seeds if args.seeds is not None else scale["seeds"]
        if count < 1:
            raise UsageError("--seeds must be >= 1")
        seeds = [args.seed + k for k in range(count)]
        report = eb.run_cde_benchmark(spec, cfg, n=n, seeds=seeds)
        report.to_csv(os.path.join(out, f"{name}_ks.csv"))
        report.to_json(os.path.join(out, f"{name}_summary.json"))
        runtime = {str(s): t for s, t in report.runtime.items()}
        status = 0 if not report.failed else EXIT_FAILURE
    else:
        report = eb.run_coverage_benchmark(spec, args.alpha, args.n_train, args.n_test, args.seed, cfg)
        report.to_csv(os.path.join(out, f"{name}_intervals.csv"))
        report.to_json(os.path.join(out, f"{name}_summary.json"))
        runtime = {str(args.seed): report.runtime}
        status = 0
    # wall-clock timings live apart from the reports so reruns stay byte-identical
    _write(os.path.join(out, f"{name}_timings.json"),
           json.dumps({"per_seed": runtime, "total": time.perf_counter() - t0}, indent=2) + "\n")
    sys.stdout.write(report.to_json())
    return status


# --------------------------------------------------------------------------
# oracle-check
# --------------------------------------------------------------------------


def cmd_oracle_check(args):
    sizes = [s for s in str(args.sizes).split(",") if s.strip()]
    if not sizes:
        raise UsageError("--sizes must list at least one joint size")
    try:
        sizes = [int(s) for s in sizes]
    except ValueError:
        raise UsageError(f"--sizes must be integers, got {args.sizes!r}") from None
    if min(sizes) < 2 or args.seeds < 1:
        raise UsageError("sizes must be >= 2 and --seeds >= 1")
    seeds = range(args.seed, args.seed + args.seeds)
    results = checks.run_all(sizes, seeds, args.perturb)
    failed = 0
    summary = {}
    for suite, res in results.items():
        bad = [r for r in res if not r.passed]
        failed += len(bad)
        summary[suite] = {"cases": len(res), "failed": len(bad)}
        print(f"{'PASS' if not bad else 'FAIL'} {suite}: {len(res) - len(bad)}/{len(res)}")
        for r in bad[:10]:
            print("  " + r.line())
    if args.out != ".":
        _write(os.path.join(_outdir(args), "oracle_check.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0 if failed == 0 else EXIT_FAILURE


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "benchmark": cmd_benchmark, "oracle-check": cmd_oracle_check}


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        args = resolve(ns)
    except (UsageError, FileNotFoundError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ncp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ncp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"ncp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"ncp: error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (archive.ArchiveError, ds.DataError, inf.ZeroMassError, inf.InfeasibleIntervalError,
            inf.UnsupportedError) as exc:
        print(f"ncp: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
