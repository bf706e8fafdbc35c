"""Command-line entry point: arch, simulate, train, evaluate, predict, rank."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import weibull
from .dataio import (DataError, DatasetSchema, FittedModel, atomic_write, config_hash, dump_json, load_dataset,
                     load_model, load_schema, read_json, save_model, write_csv)
from .evaluation import evaluate, mcd_predictive
from .network import build_arch, forward_batch, param_count
from .simulator import SimConfig, simulate_dataset
from .trainer import TrainConfig, TrainingFailure, fit, time_split

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "WTNN_SEED"
ARCH_KEYS = ("K", "rho", "tau", "n_min", "depth", "head_style", "head_units", "dropout_rate", "use_batch_norm",
             "eta_min", "beta_min", "beta_max")

log = logging.getLogger("wtnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_seed(default: int) -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {value!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_arch(args) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec = build_arch(args.n, args.d, K=args.K, rho=args.rho, tau=args.tau, n_min=args.n_min, depth=args.depth)
    print(f"L={spec.depth} widths={','.join(map(str, spec.widths))} p_n={param_count(spec)}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    fields = read_json(args.config) if args.config else {}
    for key in ("d_a", "d_n", "n_s", "L_s", "Delta", "alpha_tilde", "N_s", "seed"):
        value = getattr(args, key)
        if value is not None:
            fields[key] = value
    try:
        config = SimConfig(**fields)
    except TypeError as exc:
        raise UsageError(f"invalid simulation config: {exc}") from None
    config = replace(config, seed=_env_seed(config.seed))
    gt = simulate_dataset(config)
    ds = gt.dataset
    num = [f"x{j}" for j in range(config.d_n)]
    header = ["vehicle_id", "duration", "event"] + num + (["category"] if config.d_n < config.d_a else [])
    rows = []
    for i in range(len(ds)):
        row = {"vehicle_id": f"v{int(ds.vehicle_ids[i]):05d}", "duration": repr(float(ds.z[i])),
               "event": int(ds.delta[i])}
        for j, name in enumerate(num):
            row[name] = repr(float(ds.X[i, j]))
        if config.d_n < config.d_a:
            row["category"] = f"c{int(np.argmax(ds.X[i, config.d_n:]))}"
        rows.append(row)
    write_csv(args.out, header, rows)
    covs = [{"name": n, "kind": "ordinal_monotone", "direction": "survival_decreasing"} for n in num]
    if config.d_n < config.d_a:
        covs.append({"name": "category", "kind": "nominal", "direction": "survival_decreasing"})
    schema = DatasetSchema("vehicle_id", "duration", "event", tuple(covs))
    if args.schema_out:
        atomic_write(args.schema_out, dump_json(schema.to_dict()))
    if args.truth_out:
        truth = {"config": config.to_dict(), "spec": gt.spec.to_dict(),
                 "params": {k: np.asarray(v).tolist() for k, v in gt.params.items()}}
        atomic_write(args.truth_out, dump_json(truth))
    print(f"wrote {len(ds)} missions for {ds.n_vehicles} vehicles to {args.out}")
    return EXIT_OK


def _train_config(path) -> tuple[TrainConfig, dict]:
    raw = read_json(path) if path else {}
    arch = dict(raw.pop("arch", {}))
    unknown = set(arch) - set(ARCH_KEYS)
    if unknown:
        raise UsageError(f"unknown arch options: {sorted(unknown)}")
    try:
        config = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    return replace(config, seed=_env_seed(config.seed)), arch


def cmd_train(args) -> int:
    config, arch = _train_config(args.config)
    if args.restarts is not None:
        config = replace(config, restarts=args.restarts)
    if args.max_epochs is not None:
        config = replace(config, max_epochs=args.max_epochs)
    schema = load_schema(args.schema)
    data = load_dataset(args.data, schema)
    train, _, singles = time_split(data.dataset)
    size_keys = {k: arch[k] for k in ("K", "rho", "tau", "n_min", "depth") if k in arch}
    spec_keys = {k: v for k, v in arch.items() if k not in size_keys}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec = build_arch(len(train), data.partition.d, partition=data.partition, **size_keys, **spec_keys)
    params, report = fit(train, spec, config)
    report.single_mission_vehicles = singles
    cfg = config.to_dict()
    meta = {"seed": config.seed, "config_hash": config_hash({"train": cfg, "arch": arch}),
            "chosen_restart": report.chosen_restart, "train_config": cfg, "arch_options": arch,
            "n_train": len(train)}
    save_model(FittedModel(spec, params, schema, data.stats, meta), args.out)
    if args.report:
        atomic_write(args.report, dump_json(report.to_dict()))
    print(f"trained widths={','.join(map(str, spec.widths))} restart={report.chosen_restart} "
          f"train_nll={report.final_nll:.6g} -> {args.out}")
    return EXIT_OK


def _model_data(args):
    model = load_model(args.model)
    data = load_dataset(args.data, model.schema, model.stats)
    if data.partition != model.spec.partition:
        raise DataError("dataset encoding does not match the model's input layout")
    return model, data


def cmd_evaluate(args) -> int:
    model, data = _model_data(args)
    ds = data.dataset if args.all_rows else time_split(data.dataset)[1]
    if len(ds) == 0:
        raise DataError("no held-out missions to evaluate (every vehicle has a single mission)")
    rng = np.random.default_rng(_env_seed(args.seed))
    report = evaluate(model.params, model.spec, ds.X, ds.z, ds.delta, mcd_samples=args.mcd,
                      dropout_rate=args.dropout, rng=rng)
    text = dump_json(report)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, data = _model_data(args)
    ds = data.dataset
    times = np.array(_float_list(args.times))
    if times.size == 0 or np.any(times < 0):
        raise UsageError("--times needs non-negative values")
    grid = times * model.stats.duration_factor
    rows = []
    if args.mcd:
        rng = np.random.default_rng(_env_seed(args.seed))
        band = mcd_predictive(model.params, model.spec, ds.X, grid, args.mcd, args.dropout, rng)
        mean, lo, hi = band.mean, band.lower, band.upper
    else:
        out = forward_batch(model.params, model.spec, ds.X)
        mean = weibull.survival(grid[None, :], out.eta[:, None], out.beta[:, None])
        lo = hi = mean
    for i in range(len(ds)):
        for j, t in enumerate(times):
            rows.append({"record_id": int(ds.record_ids[i]), "t": repr(float(t)), "survival_mean": repr(float(mean[i, j])),
                         "survival_lo": repr(float(lo[i, j])), "survival_hi": repr(float(hi[i, j]))})
    header = ["record_id", "t", "survival_mean", "survival_lo", "survival_hi"]
    write_csv(args.out, header, rows)
    return EXIT_OK


def ranking(model: FittedModel, data, horizon: float) -> list[dict]:
    """Vehicles by descending survival at ``horizon`` (original units) from their last mission."""
    ds = data.dataset
    last = ds.last_mission_index()
    out = forward_batch(model.params, model.spec, ds.X[last])
    surv = weibull.survival(horizon * model.stats.duration_factor, out.eta, out.beta)
    order = np.argsort(-surv, kind="stable")
    return [{"vehicle_id": ds.vehicle_ids[last[i]].item(), "survival_at_horizon": repr(float(surv[i])), "rank": r + 1}
            for r, i in enumerate(order)]


def cmd_rank(args) -> int:
    if args.horizon <= 0:
        raise UsageError("--horizon must be positive")
    model, data = _model_data(args)
    rows = ranking(model, data, args.horizon)
    if args.out:
        write_csv(args.out, ["vehicle_id", "survival_at_horizon", "rank"], rows)
    else:
        for row in rows:
            print(f"{row['rank']},{row['vehicle_id']},{row['survival_at_horizon']}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wtnn", description="Monotone Weibull survival networks for fleet maintenance data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("arch", help="print the sieve architecture for a sample size")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--K", type=float, default=128.0)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--depth", type=int)
    p.set_defaults(func=cmd_arch)

    p = sub.add_parser("simulate", help="simulate a fleet from a random ground-truth network")
    p.add_argument("--config", help="SimConfig JSON")
    p.add_argument("--d-a", dest="d_a", type=int)
    p.add_argument("--d-n", dest="d_n", type=int)
    p.add_argument("--n-s", dest="n_s", type=int)
    p.add_argument("--L-s", dest="L_s", type=int)
    p.add_argument("--Delta", type=float)
    p.add_argument("--alpha-tilde", dest="alpha_tilde", type=float)
    p.add_argument("--N-s", dest="N_s", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="dataset CSV")
    p.add_argument("--schema-out", help="schema JSON for the CSV")
    p.add_argument("--truth-out", help="ground-truth JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a model on the training split")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", help="TrainConfig JSON (optional 'arch' object)")
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--report", help="training report JSON")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("evaluate", cmd_evaluate, "metrics on the held-out last missions"),
                                  ("predict", cmd_predict, "survival curves per record"),
                                  ("rank", cmd_rank, "rank vehicles by survival at a horizon")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        if name in ("evaluate", "predict"):
            p.add_argument("--mcd", type=int, default=0, help="Monte Carlo dropout replicates")
            p.add_argument("--dropout", type=float, default=0.05)
        if name == "evaluate":
            p.add_argument("--all-rows", action="store_true", help="evaluate every mission, not only last ones")
        if name == "predict":
            p.add_argument("--times", required=True, help="comma-separated times in data units")
        if name == "rank":
            p.add_argument("--horizon", type=float, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.command == "predict" and not args.out:
            raise UsageError("predict needs --out")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingFailure as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
