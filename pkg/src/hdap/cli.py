"""Command-line entry point: ``hdap <subcommand> [--config FILE] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .cluster import cluster_fleet, load_partition, save_partition
from .errors import ConfigError, HdapError
from .fleet import load_fleet, save_fleet
from .model_space import load_model, save_model
from .pipeline import HdapConfig, PruneState, load_run_fleet, load_run_model, run_hdap
from .report import emit_report, load_report
from .search.fitness import FitnessContext
from .search.ncs import ncs_minimize
from .surrogate.suite import MODES, fit_suite, load_suite, measure_matrix, sample_vectors, save_suite

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": "hdap-out"}


def _config(args) -> HdapConfig:
    cfg = HdapConfig.load(args.config) if args.config else HdapConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for name in ("mode", "samples", "T"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _fleet(cfg, model, args):
    return load_fleet(args.fleet) if getattr(args, "fleet", None) else load_run_fleet(cfg, model)


def _partition(cfg, fleet, model, args):
    if getattr(args, "partition", None):
        return load_partition(args.partition)
    return cluster_fleet(fleet, model, cfg.eps, cfg.min_pts, cfg.fleet.reps, cfg.seed)


def _emit(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    print(out / name)


def cmd_simulate_fleet(cfg, args, out):
    fleet = load_run_fleet(cfg, load_run_model(cfg))
    out.mkdir(parents=True, exist_ok=True)
    save_fleet(fleet, out / "fleet.json")
    print(out / "fleet.json")


def cmd_export_model(cfg, args, out):
    out.mkdir(parents=True, exist_ok=True)
    save_model(load_run_model(cfg), out / "model.json")
    print(out / "model.json")


def cmd_cluster(cfg, args, out):
    model = load_model(args.benchmark) if args.benchmark else load_run_model(cfg)
    fleet = _fleet(cfg, model, args)
    eps = args.eps if args.eps is not None else cfg.eps
    min_pts = args.min_pts if args.min_pts is not None else cfg.min_pts
    partition = cluster_fleet(fleet, model, eps, min_pts, cfg.fleet.reps, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_partition(partition, out / "partition.json")
    print(f"K={partition.K} sizes={partition.sizes()}")


def _collect(cfg, args):
    model = load_run_model(cfg)
    fleet = _fleet(cfg, model, args)
    vectors = sample_vectors(model.L, cfg.samples, cfg.seed)
    return model, fleet, vectors, measure_matrix(fleet, model, vectors, cfg.fleet.reps, cfg.seed)


def cmd_collect(cfg, args, out):
    _, fleet, vectors, latencies = _collect(cfg, args)
    doc = {"device_ids": fleet.ids, "X": vectors.tolist(), "latency_ms": latencies.tolist()}
    _emit(out, "samples.json", json.dumps(doc) + "\n")


def cmd_train_surrogate(cfg, args, out):
    if args.data:
        doc = json.loads(Path(args.data).read_text())
        model = load_run_model(cfg)
        fleet = _fleet(cfg, model, args)
        if doc["device_ids"] != fleet.ids:
            raise ConfigError("sample file devices do not match the fleet")
        vectors, latencies = np.asarray(doc["X"]), np.asarray(doc["latency_ms"])
    else:
        model, fleet, vectors, latencies = _collect(cfg, args)
    partition = _partition(cfg, fleet, model, args)
    suite = fit_suite(cfg.mode, vectors, latencies, fleet, partition, cfg.gbrt, cfg.representative_only)
    out.mkdir(parents=True, exist_ok=True)
    save_suite(suite, out / "suite.json")
    print(f"{cfg.mode}: {len(suite.models)} ensembles -> {out / 'suite.json'}")


def cmd_search(cfg, args, out):
    """One search over the unpruned model with a saved (or freshly trained) suite."""
    model = load_run_model(cfg)
    if args.suite:
        suite = load_suite(args.suite)
    else:
        _, fleet, vectors, latencies = _collect(cfg, args)
        partition = _partition(cfg, fleet, model, args)
        suite = fit_suite(cfg.mode, vectors, latencies, fleet, partition, cfg.gbrt, cfg.representative_only)
    state = PruneState.initial(model, cfg.base_accuracy)
    post = cfg.accuracy_timing == "post"
    ctx = FitnessContext(suite, lambda x: state.accuracy(state.counts_after(x), recovered=post),
                         cfg.base_accuracy, cfg.alpha)
    result = ncs_minimize(ctx.evaluate, model.L, dataclasses.replace(cfg.ncs, seed=cfg.seed))
    doc = {
        "best_x": [float(v) for v in result.best_x],
        "fitness": result.best_fitness,
        "accuracy": result.best_info.accuracy,
        "latency_estimate_ms": result.best_info.latency_estimate,
        "feasible": result.best_info.feasible,
        "evaluations": result.n_evaluations,
    }
    _emit(out, "search.json", json.dumps(doc, indent=1) + "\n")
    return EXIT_OK if doc["feasible"] else EXIT_INFEASIBLE


def cmd_run(cfg, args, out):
    model = load_run_model(cfg)
    fleet = load_fleet(args.fleet) if args.fleet else None
    report = run_hdap(cfg, model, fleet)
    emit_report(report, out)
    f, b = report.final, report.baseline
    print(f"latency {b['average_latency_ms']:.3f} -> {f['average_latency_ms']:.3f} ms "
          f"(x{f['speedup']:.2f}), accuracy {f['accuracy']:.4f}, reports in {out}")
    return EXIT_INFEASIBLE if report.any_infeasible else EXIT_OK


def cmd_report(cfg, args, out):
    src = Path(args.run) if args.run else out / "run.json"
    report = load_report(src)
    for path in emit_report(report, out):
        print(path)
    return EXIT_INFEASIBLE if report.any_infeasible else EXIT_OK


COMMANDS = {
    "simulate-fleet": cmd_simulate_fleet,
    "export-model": cmd_export_model,
    "cluster": cmd_cluster,
    "collect": cmd_collect,
    "train-surrogate": cmd_train_surrogate,
    "search": cmd_search,
    "run": cmd_run,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting a flag given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default hdap-out)")

    parser = argparse.ArgumentParser(prog="hdap", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("cluster", "collect", "train-surrogate", "search", "run"):
            p.add_argument("--fleet", help="fleet JSON (default: simulate or ingest per config)")
        if name in ("train-surrogate", "search"):
            p.add_argument("--partition", help="partition JSON (default: cluster the fleet)")
        if name in ("collect", "train-surrogate", "search", "run"):
            p.add_argument("--samples", type=int)
        if name in ("train-surrogate", "search", "run"):
            p.add_argument("--mode", choices=MODES)
        if name == "cluster":
            p.add_argument("--benchmark", help="benchmark model JSON (default: the run model)")
            p.add_argument("--eps", type=float)
            p.add_argument("--min-pts", dest="min_pts", type=int)
        if name == "train-surrogate":
            p.add_argument("--data", help="samples.json from `collect`")
        if name == "search":
            p.add_argument("--suite", help="suite.json from `train-surrogate`")
        if name == "run":
            p.add_argument("--T", type=int)
        if name == "report":
            p.add_argument("--run", help="run.json to re-emit (default: OUT/run.json)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        cfg = _config(args)
        code = COMMANDS[args.command](cfg, args, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (HdapError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
