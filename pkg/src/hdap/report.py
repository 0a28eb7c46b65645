"""Serialize a run report to JSON, CSV tables and SVG charts."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import RunReport  # noqa: E402

WALL_SUFFIX = "_wall_s"
TIMING_KEY = "timing"
TRACE_COLUMNS = ("iteration", "generation", "individual", "fitness", "accuracy", "latency_estimate", "accepted")


def strip_wall_clock(obj):
    """Copy of a JSON-like object without the ``timing`` section and ``*_wall_s`` fields."""
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k != TIMING_KEY and not k.endswith(WALL_SUFFIX)}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def dumps_report(report: RunReport, wall_clock: bool = True) -> str:
    data = report.to_dict()
    if not wall_clock:
        data = strip_wall_clock(data)
    return json.dumps(data, indent=1) + "\n"


def load_report(path: str | Path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))


def iteration_rows(report: RunReport):
    clusters = sorted({k for r in report.iterations for k in r.measured_cluster_latency}, key=int)
    header = ["iteration", "fitness", "surrogate_latency_estimate_ms", "measured_average_latency_ms"]
    header += [f"cluster_{k}_latency_ms" for k in clusters]
    header += ["accuracy_before", "accuracy_after", "flops", "infeasible", "evaluations",
               "hardware_time_s", "surrogate_time_wall_s", "best_x", "cumulative_x"]
    rows = []
    for r in report.iterations:
        rows.append(
            [r.iteration, r.fitness, r.surrogate_latency_estimate, r.measured_average_latency]
            + [r.measured_cluster_latency[k] for k in clusters]
            + [r.accuracy_before, r.accuracy_after, r.flops, r.infeasible, r.evaluations,
               r.hardware_time_s, r.surrogate_time_wall_s,
               " ".join(repr(v) for v in r.best_x), " ".join(repr(v) for v in r.cumulative_x)]
        )
    return header, rows


def _svg(fig, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "hdap", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    """Write run.json, the CSV tables and one SVG chart per table into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "run.json"
    path.write_text(dumps_report(report))
    written.append(path)

    path = out / "pruned_model.json"
    path.write_text(json.dumps(report.final["model"], indent=1) + "\n")
    written.append(path)

    header, rows = iteration_rows(report)
    path = out / "iterations.csv"
    _write_csv(path, header, rows)
    written.append(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    its = [r.iteration for r in report.iterations]
    ax.plot(its, [r.measured_average_latency for r in report.iterations], marker="o", label="measured")
    ax.plot(its, [r.surrogate_latency_estimate for r in report.iterations], marker="x", label="surrogate")
    ax.set_xlabel("iteration")
    ax.set_ylabel("average latency (ms)")
    ax.legend()
    _svg(fig, out / "iterations.svg")
    written.append(out / "iterations.svg")

    path = out / "cluster_latency.csv"
    rows = [
        [stage, k, dev, lat]
        for stage, clusters in report.cluster_latency.items()
        for k, members in clusters.items()
        for dev, lat in members.items()
    ]
    _write_csv(path, ["stage", "cluster", "device_id", "latency_ms"], rows)
    written.append(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    data, labels = [], []
    for stage, clusters in report.cluster_latency.items():
        for k, members in clusters.items():
            data.append(list(members.values()))
            labels.append(f"{stage}\nC{k}")
    ax.boxplot(data)
    ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.set_ylabel("latency (ms)")
    _svg(fig, out / "cluster_latency.svg")
    written.append(out / "cluster_latency.svg")

    path = out / "eval_time.csv"
    sur = report.timing.get("eval_surrogate_cum_wall_s", [])
    hw = report.eval_hardware_s
    sur = sur if len(sur) == len(hw) else [float("nan")] * len(hw)
    _write_csv(path, ["evaluation", "surrogate_cum_wall_s", "hardware_cum_s"],
               [[i + 1, s, h] for i, (s, h) in enumerate(zip(sur, hw))])
    written.append(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    idx = np.arange(1, len(hw) + 1)
    ax.plot(idx, hw, label="hardware (would-be)")
    ax.plot(idx, sur, label="surrogate")
    ax.set_yscale("log")
    ax.set_xlabel("evaluations")
    ax.set_ylabel("cumulative time (s)")
    ax.legend()
    _svg(fig, out / "eval_time.svg")
    written.append(out / "eval_time.svg")

    path = out / "mape.csv"
    _write_csv(path, ["mode", "mape_percent"], list(report.mape.items()))
    written.append(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(list(report.mape), list(report.mape.values()))
    ax.set_ylabel("MAPE (%)")
    _svg(fig, out / "mape.svg")
    written.append(out / "mape.svg")

    path = out / "trace.csv"
    cols = [report.trace[c] for c in TRACE_COLUMNS]
    _write_csv(path, TRACE_COLUMNS, zip(*cols))
    written.append(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    fit = np.asarray(report.trace["fitness"], dtype=np.float64)
    if fit.size:
        ax.plot(np.arange(1, fit.size + 1), np.minimum.accumulate(fit), label="best so far")
    ax.set_xlabel("evaluations")
    ax.set_ylabel("fitness")
    _svg(fig, out / "trace.svg")
    written.append(out / "trace.svg")
    return written
