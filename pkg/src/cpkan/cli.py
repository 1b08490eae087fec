"""``cpkan`` command-line interface.

Subcommands: ``gen-data``, ``train``, ``eval``, ``degree-opt``,
``bench-qubo``. Run configs are JSON files merged over an optional named
preset; ``--set section.key=value`` overrides single entries.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 output could not be written. Output files are written only
after every result is computed, so a failing command leaves none behind.
"""

import argparse
import copy
import json
import logging
import os
import sys
import tempfile
import time

import numpy as np

from . import degree as ds
from .data import (Dataset, OUParams, Standardizer, gen_ou, load_csv, log1p_target, make_lagged,
                   split, weighted_r2)
from .errors import (ColumnError, ConfigError, CPKANError, DataError, InvalidInputError,
                     NumericalFailure, UndefinedMetricError)
from .lstsq import mse
from .network import KanLayer, KanNetwork
from .presets import DEFAULTS, get_preset
from .training import TrainConfig, _phase1_targets, two_phase_train

log = logging.getLogger("cpkan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


# -- configuration ------------------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = out = {}
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def resolve_config(path=None, preset=None, overrides=()):
    """Defaults <- preset <- config file <- ``--set`` overrides."""
    user = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for text in overrides:
        user = _merge(user, _parse_override(text))
    preset = preset or user.pop("preset", None)
    cfg = copy.deepcopy(DEFAULTS)
    if preset:
        base = get_preset(preset)
        # a user-supplied data source replaces the preset's source entirely
        if any(k in user.get("data", {}) for k in ("csv", "ou")):
            for k in ("csv", "ou"):
                base["data"].pop(k, None)
        cfg = _merge(cfg, base)
        cfg["preset"] = preset
    cfg = _merge(cfg, user)
    sources = [k for k in ("csv", "ou") if cfg["data"].get(k) is not None]
    if len(sources) != 1:
        raise ConfigError(f"exactly one data source (data.csv or data.ou) is required, got {sources}")
    return cfg


def train_config(cfg):
    values = dict(cfg.get("train", {}))
    values.setdefault("seed", cfg.get("seed", 0))
    try:
        return TrainConfig.from_dict(values)
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


# -- data -----------------------------------------------------------------------------

def load_dataset(cfg):
    data = cfg["data"]
    if data.get("ou") is not None:
        try:
            params = OUParams(**data["ou"])
        except TypeError as exc:
            raise ConfigError(f"bad data.ou block: {exc}") from exc
        ds_ = make_lagged(gen_ou(params), int(data.get("n_lags", 5)))
        ds_.dates = np.arange(len(ds_))
    else:
        spec = data["csv"]
        if not spec.get("path"):
            raise ConfigError("data.csv.path is required")
        if not spec.get("target_col"):
            raise ConfigError("data.csv.target_col is required")
        try:
            ds_ = load_csv(spec["path"], spec.get("feature_cols"), spec["target_col"],
                           spec.get("weight_col"), spec.get("date_col"))
        except ColumnError as exc:
            raise ConfigError(str(exc)) from exc
    if data.get("max_rows") and len(ds_) > data["max_rows"]:
        ds_ = ds_.subset(np.arange(data["max_rows"]))
    if data.get("log1p_target"):
        ds_ = log1p_target(ds_)
    return ds_


def prepare_splits(cfg, stats=None):
    """Train/validation datasets with features standardised on training statistics."""
    data = cfg["data"]
    full = load_dataset(cfg)
    train, val = split(full, data.get("train_ratio", 0.7), data.get("split_seed", 42),
                       by_time=bool(data.get("split_by_time")))
    if data.get("standardize"):
        stats = stats or Standardizer.fit(train.X)
        train, val = stats.apply(train), stats.apply(val)
    return train, val, stats


def _targets(dataset, loss):
    if loss == "cross_entropy":
        return dataset.y.astype(int)
    return dataset.y


def build_network(cfg, n_features, n_out):
    model = cfg["model"]
    shape = [n_features] + list(model.get("hidden", [])) + [n_out]
    return KanNetwork.init(shape, seed=cfg.get("seed", 0), degree=int(model.get("init_degree", 1)),
                           squash_mode=model.get("squash", "tanh"), mix=bool(model.get("mix", False)))


def _output_width(cfg, train):
    if cfg.get("train", {}).get("loss") == "cross_entropy":
        return int(cfg["model"].get("n_classes") or int(train.y.max()) + 1)
    return 1


# -- output -------------------------------------------------------------------------------

def write_outputs(out_dir, files):
    """Write ``{name: text}`` into ``out_dir`` all-or-nothing."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        staged = []
        try:
            for name, text in files.items():
                fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.")
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                staged.append((tmp, os.path.join(out_dir, name)))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
    except OSError as exc:
        raise _OutputError(str(exc)) from exc
    return [os.path.join(out_dir, name) for name in files]


class _OutputError(CPKANError):
    pass


def _fmt(value):
    return repr(float(value))


# -- commands -----------------------------------------------------------------------------

def cmd_gen_data(args):
    if args.config or args.preset:
        cfg = resolve_config(args.config, args.preset, args.set)
    else:
        # bare invocation: generator defaults rather than a preset
        cfg = resolve_config(None, None, list(args.set) + ["data.ou={}"])
    ou = dict(cfg["data"].get("ou") or {})
    for key in ("theta", "mu", "sigma", "dt", "x0", "n_steps", "method"):
        val = getattr(args, key)
        if val is not None:
            ou[key] = val
    if args.seed is not None:
        ou["seed"] = args.seed
    lags = args.lags if args.lags is not None else int(cfg["data"].get("n_lags", 5))
    try:
        params = OUParams(**ou)
    except TypeError as exc:
        raise ConfigError(f"bad OU parameters: {exc}") from exc
    dataset = make_lagged(gen_ou(params), lags)
    out = args.out or os.path.join(args.out_dir or ".", "ou_data.csv")
    import io
    buf = io.StringIO()
    dataset.to_csv(buf)
    write_outputs(os.path.dirname(out) or ".", {os.path.basename(out): buf.getvalue()})
    print(f"rows={len(dataset)}")
    print(f"path={out}")
    return EXIT_OK


def _apply_common(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        cfg.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "solver", None):
        cfg.setdefault("train", {})["solver"] = args.solver
    if getattr(args, "threads", None):
        cfg.setdefault("train", {})["threads"] = args.threads
    if getattr(args, "epochs", None) is not None:
        cfg.setdefault("train", {})["epochs"] = args.epochs
    return cfg


def cmd_train(args):
    cfg = _apply_common(resolve_config(args.config, args.preset, args.set), args)
    tcfg = train_config(cfg)
    train, val, stats = prepare_splits(cfg)
    net = build_network(cfg, train.X.shape[1], _output_width(cfg, train))
    weights_tr = train.weights if tcfg.loss == "weighted_mse" or tcfg.phase1_weighted else None
    weights_val = val.weights if tcfg.loss == "weighted_mse" else None
    net, history = two_phase_train(net, (train.X, _targets(train, tcfg.loss), weights_tr),
                                   (val.X, _targets(val, tcfg.loss), weights_val), tcfg)
    net.meta = {"task": "classification" if tcfg.loss == "cross_entropy" else "regression",
                "loss": tcfg.loss,
                "log1p_target": bool(cfg["data"].get("log1p_target")),
                "standardize": None if stats is None else stats.to_dict(),
                "feature_names": list(train.feature_names)}
    resolved = json.dumps(cfg, indent=1, sort_keys=True) + "\n"
    out_dir = args.out_dir or cfg.get("output", {}).get("dir") or "cpkan_run"
    write_outputs(out_dir, {"model.json": net.dumps(), "history.csv": history.to_csv(),
                            "phase1.csv": history.phase1_report(), "config.json": resolved})
    for rec in history.phase1:
        log.info("layer %d: %s degrees=%s", rec["layer"], rec["solver"], rec["degrees"])
    if history.val_metric:
        print(f"final_val_loss={_fmt(history.val_loss[-1])}")
        print(f"final_val_{history.metric_name}={_fmt(history.val_metric[-1])}")
    else:
        from .training import evaluate
        loss, metric = evaluate(net, val.X, _targets(val, tcfg.loss), weights_val, tcfg.loss)
        print(f"final_val_loss={_fmt(loss)}")
        print(f"final_val_{history.metric_name}={_fmt(metric)}")
    print(f"out_dir={out_dir}")
    return EXIT_OK


def evaluate_model(net, dataset):
    """Fixed-key metrics for ``net`` on ``dataset``."""
    yhat = net.forward(dataset.X)
    report = {"rows": len(dataset)}
    if net.meta.get("task") == "classification":
        from .training import loss_eval
        labels = dataset.y.astype(int)
        report["cross_entropy"] = loss_eval(yhat, labels, kind="cross_entropy")
        report["accuracy"] = float(np.mean(np.argmax(yhat, axis=1) == labels))
        return report
    pred = yhat[:, 0]
    w = dataset.weights if dataset.weights is not None else np.ones(len(dataset))
    report["mse"] = mse(dataset.y, pred)
    report["weighted_mse"] = mse(dataset.y, pred, w)
    try:
        report["weighted_r2"] = weighted_r2(dataset.y, pred, w)
    except UndefinedMetricError:
        report["weighted_r2"] = float("nan")
    return report


def cmd_eval(args):
    try:
        net = KanNetwork.load(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load model {args.model}: {exc}") from exc
    cfg = resolve_config(args.config, args.preset, args.set)
    stats = net.meta.get("standardize")
    train, val, _ = prepare_splits(cfg, Standardizer.from_dict(stats) if stats else None)
    dataset = {"train": train, "val": val}.get(args.split)
    if args.split == "all":
        dataset = Dataset(np.vstack([train.X, val.X]), np.concatenate([train.y, val.y]),
                          None if train.weights is None else np.concatenate([train.weights, val.weights]),
                          train.feature_names)
    if dataset.X.shape[1] != net.shape[0]:
        raise InvalidInputError(f"model expects {net.shape[0]} features, data has {dataset.X.shape[1]}")
    report = evaluate_model(net, dataset)
    report["split"] = args.split
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        for key in sorted(report):
            val_ = report[key]
            print(f"{key}={_fmt(val_) if isinstance(val_, float) else val_}")
    return EXIT_OK


def run_degree_solvers(cost, tcfg):
    """All four solvers on one cost matrix, in :data:`degree.SOLVERS` order."""
    out = {}
    for name in ds.SOLVERS:
        out[name] = ds.solve(
            cost, name, penalty_alpha=tcfg.penalty_alpha,
            schedule=ds.default_schedule(cost, tcfg.seed, tcfg.sa_sweeps, tcfg.sa_restarts),
            seed=tcfg.seed, threads=tcfg.threads, greedy_threshold=tcfg.greedy_threshold,
            evo_params=dict(pop_size=tcfg.evo_pop_size, generations=tcfg.evo_generations,
                            crossover_rate=tcfg.evo_crossover_rate,
                            mutation_rate=tcfg.evo_mutation_rate, elitism=tcfg.evo_elitism))
    return out


def cmd_degree_opt(args):
    cfg = _apply_common(resolve_config(args.config, args.preset, args.set), args)
    tcfg = train_config(cfg)
    train, _, _ = prepare_splits(cfg)
    net = build_network(cfg, train.X.shape[1], _output_width(cfg, train))
    layer = net.layers[0]
    X, y = train.X, _targets(train, tcfg.loss)
    if tcfg.phase1_max_rows and len(train) > tcfg.phase1_max_rows:
        rows = np.sort(np.random.default_rng([tcfg.seed, 1]).choice(len(train), tcfg.phase1_max_rows,
                                                                   replace=False))
        X, y = X[rows], y[rows]
    cost = ds.build_cost_matrix(layer, X, _phase1_targets(y, layer.n_out, tcfg.loss), tcfg.max_degree,
                                tcfg.complexity_weight, tcfg.ridge, net.squash_mode, tcfg.threads)
    results = run_degree_solvers(cost, tcfg)
    exact = results["exact"].total_cost
    lines = ["solver,total_cost,gap_vs_exact,exceeds_exact,degrees"]
    print(f"{'solver':<14}{'total_cost':>24}{'gap':>12}  degrees")
    for name, res in results.items():
        gap = res.total_cost - exact
        flag = gap > 1e-9 * max(1.0, abs(exact))
        lines.append(f"{name},{_fmt(res.total_cost)},{_fmt(gap)},{int(flag)},"
                     + " ".join(map(str, res.degrees)))
        print(f"{name:<14}{res.total_cost:>24.16g}{gap:>12.3g}  {' '.join(map(str, res.degrees))}"
              + ("  EXCEEDS_EXACT" if flag else ""))
    qubo = ds.build_qubo(cost, tcfg.penalty_alpha)
    out_dir = args.out_dir or cfg.get("output", {}).get("dir") or "cpkan_degree_opt"
    write_outputs(out_dir, {"cost_matrix.csv": cost.to_csv(), "assignments.csv": "\n".join(lines) + "\n",
                            "qubo.txt": qubo.to_text()})
    print(f"out_dir={out_dir}")
    return EXIT_OK


def bench_qubo(sizes, degrees, repeats=5, batch=64, n_in=16, seed=0, sweeps=200, restarts=8):
    """Time cost-matrix construction plus annealing for each ``(N, D)``.

    Returns ``(rows, slopes)``: rows of ``(N, D, mean_s, std_s, min_s,
    repeats)`` and the log-log slope of time against ``N`` per degree. The
    slope is fitted on the fastest repeat, which is far less sensitive to
    scheduler noise than the mean.
    """
    def once(n, d, rep):
        rng = np.random.default_rng([seed, n, d, rep])
        layer = KanLayer.init(n_in, n, rng)
        X = rng.standard_normal((batch, n_in))
        y = np.sin(X @ rng.standard_normal(n_in) / np.sqrt(n_in))
        Y = np.repeat(y[:, None], n, axis=1)
        t0 = time.perf_counter()
        cost = ds.build_cost_matrix(layer, X, Y, d)
        ds.solve_sa(ds.build_qubo(cost), ds.default_schedule(cost, seed + rep, sweeps, restarts))
        return time.perf_counter() - t0

    once(4, 1, 0)  # warm-up: compile the annealing kernel outside the timed region
    rows, slopes = [], {}
    for d in degrees:
        best = []
        for n in sizes:
            times = np.array([once(n, d, r) for r in range(repeats)])
            std = float(times.std(ddof=1)) if repeats > 1 else 0.0
            rows.append((n, d, float(times.mean()), std, float(times.min()), repeats))
            best.append(times.min())
        slopes[d] = float(np.polyfit(np.log(sizes), np.log(best), 1)[0]) if len(sizes) > 1 else float("nan")
    return rows, slopes


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_bench_qubo(args):
    rows, slopes = bench_qubo(args.sizes, args.degrees, args.repeats, args.batch, args.n_in,
                              args.seed or 0, args.sweeps, args.restarts)
    timing = ["N,D,mean_s,std_s,min_s,repeats"] + [f"{n},{d},{m!r},{s!r},{lo!r},{r}"
                                                   for n, d, m, s, lo, r in rows]
    slope_lines = ["D,loglog_slope"] + [f"{d},{s!r}" for d, s in slopes.items()]
    out_dir = args.out_dir or "cpkan_bench"
    write_outputs(out_dir, {"bench_qubo.csv": "\n".join(timing) + "\n",
                            "bench_slopes.csv": "\n".join(slope_lines) + "\n"})
    for n, d, m, s, _, _ in rows:
        print(f"N={n:<5d} D={d:<3d} time={m:.4f}s +- {s:.4f}")
    for d, s in slopes.items():
        print(f"D={d} loglog_slope={s:.3f}")
    print(f"out_dir={out_dir}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="cpkan", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--preset", help="named preset (ou-regression, house-style, janestreet-style)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.epochs=5 (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--threads", type=int)
        if solver:
            p.add_argument("--solver", choices=ds.SOLVERS)

    p = sub.add_parser("gen-data", help="write a lagged OU regression dataset as CSV")
    common(p, solver=False)
    p.add_argument("--out", help="output CSV path (default OUT_DIR/ou_data.csv)")
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--lags", type=int)
    for name in ("theta", "mu", "sigma", "dt", "x0"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--method", choices=("euler", "exact"))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-phase training; writes model, history and phase-1 report")
    common(p)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a saved model on a configured split")
    common(p, solver=False)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--json", action="store_true", help="print the report as one JSON object")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("degree-opt", help="compare the four degree solvers on the first layer")
    common(p)
    p.set_defaults(func=cmd_degree_opt)

    p = sub.add_parser("bench-qubo", help="time cost matrix + annealing against layer size")
    p.add_argument("--sizes", type=_int_list, default=[32, 64, 128, 256])
    p.add_argument("--degrees", type=_int_list, default=[3, 5, 7])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--n-in", dest="n_in", type=int, default=16)
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_bench_qubo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CPKANError as exc:
        if isinstance(exc, _OutputError):
            code = EXIT_IO
        elif isinstance(exc, (ConfigError, InvalidInputError)):
            code = EXIT_CONFIG
        elif isinstance(exc, DataError):
            code = EXIT_DATA
        elif isinstance(exc, (NumericalFailure, UndefinedMetricError)):
            code = EXIT_NUMERIC
        else:
            raise
        print(f"cpkan: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
