"""Command-line front end.

Commands: synth, ingest, graph, train, eval, forecast, importance, gradcheck.
Exit codes: 0 success, 2 usage/config, 3 data quality, 4 missing artifact,
5 internal check failure. Every command writes the resolved configuration and
a manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_config, utc_now, write_run_artifacts
from .data import (
    align,
    impute,
    load_airquality,
    load_surveillance,
    load_weather,
    read_canonical,
    synth_generate,
    write_canonical,
    write_provenance,
)
from .errors import (
    ConfigError,
    ContractError,
    DataQualityError,
    EpigraphError,
    MissingArtifactError,
    NumericError,
    SchemaError,
)
from .gradcheck import layer_suite
from .graph import gate_cardinality, gate_mask, write_edge_list, write_gate_mask
from .model import load_checkpoint, save_checkpoint
from .report import (
    write_forecast_charts,
    write_forecast_report,
    write_importance,
    write_importance_rank_table,
    write_metrics,
    write_train_log,
)
from .train import (
    importance,
    latest_forecast,
    report_metrics,
    train,
    walk_forward,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING = 4
EXIT_CHECK = 5


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat key=value configuration file")
    shared.add_argument("--seed", type=int, help="override the seed")
    shared.add_argument("--out", help="output directory")
    shared.add_argument(
        "--horizon", type=int, choices=(2, 4, 8, 16), help="forecast horizon in weeks"
    )
    shared.add_argument("--table", help="canonical table path (overrides data.table)")

    parser = argparse.ArgumentParser(prog="epigraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic table")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[shared], help="align raw sources to a canonical table")
    p.add_argument("--surveillance", help="weekly surveillance CSV")
    p.add_argument("--weather", help="daily weather CSV")
    p.add_argument("--airquality", help="daily PM10 CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("graph", parents=[shared], help="export correlation graph and gate mask")
    p.add_argument("--checkpoint", help="use the trained gate from this checkpoint")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", parents=[shared], help="train a model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared], help="walk-forward evaluation")
    p.add_argument("--checkpoint", help="trained checkpoint path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", parents=[shared], help="forecast from the latest origin")
    p.add_argument("--checkpoint", help="trained checkpoint path")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("importance", parents=[shared], help="multi-seed feature importance")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient checks")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.set("seed", args.seed)
    if args.horizon is not None:
        config.set("horizon", args.horizon)
    if args.out:
        config.set("out.dir", args.out)
    if getattr(args, "table", None):
        config.set("data.table", args.table)
    return config


def _out_dir(config: RunConfig, command: str) -> str:
    out = config["out.dir"] or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    return out


def _require(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"no {what} given (flag or config key)")
    if not os.path.exists(path):
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _load_table(config: RunConfig):
    path = _require(config["data.table"], "canonical table")
    return path, read_canonical(path)


def cmd_synth(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "synth")
    table, truth = synth_generate(config.synth_spec(), config["seed"])
    table_path = os.path.join(out, "table.csv")
    truth_path = os.path.join(out, "truth.json")
    write_canonical(table, table_path)
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_run_artifacts(out, config, [], [table_path, truth_path], started)
    print(f"wrote {table_path} ({len(table.weeks)} weeks, {len(table.variables)} variables)")
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "ingest")
    policies = config.aggregation_policies()
    sources = []
    inputs = []
    surveillance = args.surveillance or config["data.surveillance"]
    weather = args.weather or config["data.weather"]
    airquality = args.airquality or config["data.airquality"]
    if surveillance:
        inputs.append(_require(surveillance, "surveillance file"))
        sources.append(load_surveillance(surveillance, name=config["target"]))
    if weather:
        inputs.append(_require(weather, "weather file"))
        sources.extend(load_weather(weather, policies))
    if airquality:
        inputs.append(_require(airquality, "air-quality file"))
        sources.append(load_airquality(airquality))
    if not sources:
        raise ConfigError("ingest needs at least one input source")
    table, dropped = align(sources)
    table = impute(table, config["impute.max_gap"])
    table_path = os.path.join(out, "table.csv")
    prov_path = os.path.join(out, "provenance.csv")
    write_canonical(table, table_path)
    write_provenance(table, prov_path)
    dropped_path = os.path.join(out, "dropped_weeks.csv")
    with open(dropped_path, "w", encoding="utf-8") as fh:
        fh.write("week_start\n")
        for wk in dropped:
            fh.write(wk.start_date.isoformat() + "\n")
    write_run_artifacts(out, config, inputs, [table_path, prov_path, dropped_path], started)
    print(f"wrote {table_path} ({len(table.weeks)} weeks, {len(table.variables)} variables)")
    if dropped:
        print(f"dropped {len(dropped)} weeks outside the common span (see dropped_weeks.csv)")
    return EXIT_OK


def cmd_graph(args) -> int:
    from .data import prepare
    from .graph import graph_from_table

    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "graph")
    table_path, table = _load_table(config)
    prepared = prepare(table, config["target"], config["train_end_week"], config["max_lag"])
    rows = config["train_end_week"] - prepared.start_index + 1
    graph = graph_from_table(
        prepared.features[:rows], prepared.feature_names, config["corr_threshold"]
    )
    if args.checkpoint:
        state = load_checkpoint(_require(args.checkpoint, "checkpoint"))
        gates = state.gate_values()
        mask = state.selection_mask()
    else:
        gates = np.full(len(prepared.feature_names), 0.5)
        mask = gate_mask(gates, gate_cardinality(gates.size, config["keep_fraction"]))
    edges_path = os.path.join(out, "edges.csv")
    mask_path = os.path.join(out, "gate_mask.csv")
    write_edge_list(graph, edges_path)
    write_gate_mask(prepared.feature_names, gates, mask, mask_path)
    write_run_artifacts(out, config, [table_path], [edges_path, mask_path], started)
    print(f"wrote {edges_path} and {mask_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "train")
    table_path, table = _load_table(config)
    state, log = train(config.train_config(), table)
    ckpt_path = os.path.join(out, "checkpoint.bin")
    log_path = os.path.join(out, "train_log.csv")
    state.extra["config_hash"] = config.config_hash()
    save_checkpoint(state, ckpt_path)
    write_train_log(log, log_path)
    write_run_artifacts(out, config, [table_path], [ckpt_path, log_path], started)
    print(
        f"trained horizon={state.horizon} window={state.window}: "
        f"best val MSE {log.best_val_mse:.6f} at epoch {log.best_epoch} "
        f"({log.steps} steps); wrote {ckpt_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "eval")
    table_path, table = _load_table(config)
    ckpt = _require(args.checkpoint or os.path.join(out, "checkpoint.bin"), "checkpoint")
    state = load_checkpoint(ckpt)
    report = walk_forward(
        state,
        table,
        (config["test_start_week"], config["test_end_week"]),
        max_lag=config["max_lag"],
    )
    met = report_metrics(report)
    report_path = os.path.join(out, "forecast_report.csv")
    metrics_csv = os.path.join(out, "metrics.csv")
    metrics_json = os.path.join(out, "metrics.json")
    write_forecast_report(report, report_path)
    write_metrics(met, metrics_csv, metrics_json, config_echo=config.echo(), seeds=[state.seed])
    artifacts = [report_path, metrics_csv, metrics_json]
    if config["eval.charts"]:
        artifacts += write_forecast_charts(report, os.path.join(out, "charts"))
    write_run_artifacts(out, config, [table_path, ckpt], artifacts, started)
    print(
        f"evaluated {len(report.origins)} origins at horizon {state.horizon}: "
        f"MAPE={met.mape:.4f} MAE={met.mae:.3f} MSE={met.mse:.3f} RSE={met.rse:.4f}"
    )
    return EXIT_OK


def cmd_forecast(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "forecast")
    table_path, table = _load_table(config)
    ckpt = _require(args.checkpoint or os.path.join(out, "checkpoint.bin"), "checkpoint")
    state = load_checkpoint(ckpt)
    origin, origin_week, values = latest_forecast(state, table, max_lag=config["max_lag"])
    path = os.path.join(out, "forecast.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("origin_week,origin_label,step,y_pred\n")
        for h, value in enumerate(values, start=1):
            fh.write(f"{origin},{origin_week},{h},{value!r}\n")
    write_run_artifacts(out, config, [table_path, ckpt], [path], started)
    print(f"forecast from origin week {origin} ({origin_week}): {np.round(values, 2).tolist()}")
    return EXIT_OK


def cmd_importance(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "importance")
    table_path, table = _load_table(config)
    base = config.train_config()
    n_seeds = config["importance.seeds"]
    workers = config["importance.workers"]
    reports = []
    artifacts = []
    for horizon in config.importance_horizons():
        cfg = replace(base, horizon=horizon)
        rep = importance(cfg, table, n_seeds=n_seeds, max_workers=workers)
        reports.append(rep)
        csv_path = os.path.join(out, f"importance_h{horizon}.csv")
        json_path = os.path.join(out, f"importance_h{horizon}.json")
        write_importance(rep, csv_path, json_path, config_echo=config.echo())
        artifacts += [csv_path, json_path]
        top = rep.entries[0] if rep.entries else None
        print(
            f"horizon {horizon}: {n_seeds} seeds, k={rep.k}; "
            f"top feature {top.name!r} (frequency {top.frequency:.2f})"
            if top
            else f"horizon {horizon}: no selections"
        )
    table_path_out = os.path.join(out, "importance_table.csv")
    write_importance_rank_table(reports, table_path_out)
    artifacts.append(table_path_out)
    write_run_artifacts(out, config, [table_path], artifacts, started)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _run_config(args)
    started = utc_now()
    out = _out_dir(config, "gradcheck")
    checks = layer_suite()
    lines = []
    for name, rep in checks:
        status = "PASS" if rep.passed else "FAIL"
        lines.append(f"{status}  {name:18s} max_rel_err={rep.max_rel_err:.3e} tol={rep.tolerance:g}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    path = os.path.join(out, "gradcheck.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    write_run_artifacts(out, config, [], [path], started)
    if not all(rep.passed for _, rep in checks):
        print("gradient check failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataQualityError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MissingArtifactError as exc:
        print(f"missing: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericError, EpigraphError) as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
