"""Configuration-driven experiment runner."""

from __future__ import annotations

import os

from . import config as config
from .experiments import DRIVERS, ExperimentResult, run_experiment
from .io import ResultRow, emit_csv, emit_json, read_csv


def run_config(cfg: dict, out_dir: str | None = None, trace: bool = False) -> ExperimentResult:
    """Run a resolved configuration and write ``<experiment>.csv`` and
    ``<experiment>.json`` into the output directory."""
    out = config.output_dir(cfg, out_dir)
    os.makedirs(out, exist_ok=True)
    name = cfg["experiment"]
    trace_fh = None
    if trace:
        trace_fh = open(os.path.join(out, f"{name}.trace.csv"), "w", encoding="utf-8")
        trace_fh.write("experiment,sampler,param,step,accept_rate,accept_prob\n")
    try:
        result = run_experiment(cfg, trace_fh)
    finally:
        if trace_fh is not None:
            trace_fh.close()
    emit_csv(result.rows, os.path.join(out, f"{name}.csv"), cfg["record_wall_time"])
    emit_json(result.rows, os.path.join(out, f"{name}.json"), cfg,
              {"failures": result.failures, "extra": result.extra})
    return result


__all__ = ["DRIVERS", "ExperimentResult", "ResultRow", "emit_csv", "emit_json", "read_csv",
           "run_config", "run_experiment"]
