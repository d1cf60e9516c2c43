"""Method x r sweeps and the files they leave behind."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import analysis
from ..simulator import Trace, read_trace_csv, simulate, write_trace_csv
from .config import ConfigError, ExperimentConfig, load_config, serialize_config

log = logging.getLogger(__name__)

CONFIG_NAME = "config.cfg"


@dataclass
class ExperimentResult:
    out_dir: Path
    traces: dict
    report: analysis.ThresholdReport
    summary: dict
    files: list = field(default_factory=list)


def trace_path(out_dir, run_id) -> Path:
    return Path(out_dir) / f"trace_{run_id}.csv"


def _run_one(cfg: ExperimentConfig, run_id, method, r, out_dir):
    setup = cfg.setup(method, r)
    log.info("simulating %s (method=%s r=%d, %d steps)", run_id, method, r, setup.steps)
    trace = simulate(setup)
    write_trace_csv(trace, trace_path(out_dir, run_id))
    if trace.diverged_at is not None:
        log.warning("%s diverged at t=%g", run_id, trace.diverged_at)
    return run_id, trace


def build_report(cfg: ExperimentConfig, traces: dict) -> analysis.ThresholdReport:
    idx = cfg.report_index - 1
    report = analysis.ThresholdReport(param_index=idx, thresholds=tuple(cfg.thresholds))
    for run_id, method, r in cfg.runs():
        report.add(method, r, traces[run_id], cfg.theta[idx])
    return report


def _maybe(fn, *args):
    try:
        return fn(*args), None
    except ValueError as exc:
        return None, str(exc)


def summarize(cfg: ExperimentConfig, traces: dict) -> dict:
    idx = cfg.report_index - 1
    runs = {}
    for run_id, method, r in cfg.runs():
        tr = traces[run_id]
        entry = {"method": method, "r": r, "rows": len(tr), "diverged_at": tr.diverged_at}
        if len(tr):
            entry["final_param_error"] = [float(v) for v in tr.param_error[-1]]
            entry["final_V"] = float(tr.V[-1])
            entry["median_min_eig_G"] = float(np.median(tr.min_eig_G))
            entry["full_rank_along"] = analysis.full_rank_along(tr)
            cov, why = _maybe(analysis.cov_rmse, tr, idx, cfg.theta[idx], cfg.cov_window)
            entry["cov_rmse"] = cov
            if why:
                entry["cov_rmse_note"] = why
            cov, why = _maybe(analysis.cov_estimate, tr, idx, cfg.cov_window)
            entry["cov_estimate"] = cov
            if why:
                entry["cov_estimate_note"] = why
        runs[run_id] = entry
    return {
        "model": cfg.model,
        "report_index": cfg.report_index,
        "min_r": analysis.min_r(len(cfg.x0), len(cfg.theta)),
        "runs": runs,
    }


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1) -> ExperimentResult:
    """Simulate every (method, r) in ``cfg`` and write traces, report and summary."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_NAME).write_text(serialize_config(cfg))
    runs = cfg.runs()
    if workers <= 1:
        done = [_run_one(cfg, *run, out_dir) for run in runs]
    else:
        # the numba kernel releases the GIL, so threads do run in parallel
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(lambda run: _run_one(cfg, *run, out_dir), runs))
    traces = dict(done)
    result = finish(cfg, traces, out_dir)
    result.files = [out_dir / CONFIG_NAME] + [trace_path(out_dir, rid) for rid, _, _ in runs] + result.files
    return result


def finish(cfg: ExperimentConfig, traces: dict, out_dir) -> ExperimentResult:
    out_dir = Path(out_dir)
    report = build_report(cfg, traces)
    summary = summarize(cfg, traces)
    files = [out_dir / "report.txt", out_dir / "report.csv", out_dir / "summary.json"]
    files[0].write_text(report.to_text())
    files[1].write_text(report.to_csv())
    files[2].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    longest = max((len(v) for v in traces.values()), default=0)
    nonempty = {k: v for k, v in traces.items() if longest and len(v) == longest}
    for k in sorted(traces.keys() - nonempty.keys()):
        log.warning("%s left out of plot data (truncated trace)", k)
    if nonempty:
        files.append(emit_plot_data(nonempty, "V", out_dir=out_dir))
        for i in range(1, len(cfg.theta) + 1):
            files.append(emit_plot_data(nonempty, "param", index=i, out_dir=out_dir))
    return ExperimentResult(out_dir, traces, report, summary, files)


def load_traces(trace_dir):
    """Re-read a finished run directory: returns (config, {run_id: Trace})."""
    trace_dir = Path(trace_dir)
    cfg_file = trace_dir / CONFIG_NAME
    if not cfg_file.exists():
        raise ConfigError([f"{trace_dir}: no {CONFIG_NAME}; not an experiment output directory"])
    cfg = load_config(cfg_file)
    traces = {}
    for run_id, method, r in cfg.runs():
        path = trace_path(trace_dir, run_id)
        if not path.exists():
            raise ConfigError([f"{path}: missing trace"])
        traces[run_id] = read_trace_csv(path, cfg.theta, method=method, r=r)
    return cfg, traces


def emit_plot_data(traces: dict, quantity: str, index: int | None = None, out_dir=None,
                   path=None) -> Path:
    """Write ``t`` plus one column per run for V or for parameter ``index`` (1-based)."""
    if not traces:
        raise ValueError("no traces to plot")
    if quantity not in ("param", "V"):
        raise ValueError(f"quantity must be 'param' or 'V', got {quantity!r}")
    ids = list(traces)
    t = traces[ids[0]].t
    for rid in ids[1:]:
        if not np.array_equal(traces[rid].t, t):
            raise ValueError(f"trace {rid!r} is not on the same time grid as {ids[0]!r}")
    if quantity == "param":
        m = traces[ids[0]].alpha.shape[1]
        if index is None or not 1 <= index <= m:
            raise ValueError(f"param index must be in 1..{m}")
        cols = [traces[rid].alpha[:, index - 1] for rid in ids]
        name = f"plot_alpha{index}.csv"
    else:
        cols = [traces[rid].V for rid in ids]
        name = "plot_V.csv"
    if path is None:
        path = Path(out_dir if out_dir is not None else ".") / name
    path = Path(path)
    np.savetxt(path, np.column_stack([t] + cols), fmt="%.17g", delimiter=",",
               header=",".join(["t"] + ids), comments="")
    return path


def run_config_file(path, out_dir=None, workers: int = 1) -> ExperimentResult:
    cfg = load_config(path)
    if out_dir is None:
        out_dir = cfg.out or Path("runs") / Path(str(path)).stem
    return run_experiment(cfg, out_dir, workers)


__all__ = [
    "ExperimentResult", "Trace", "build_report", "emit_plot_data", "load_traces",
    "run_config_file", "run_experiment", "summarize",
]
