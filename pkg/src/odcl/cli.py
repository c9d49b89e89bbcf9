"""Experiment harness CLI.

``odcl run <config> [--out DIR] [--seeds 1,2,3] [--methods u:s:r,...]``
executes every (method, seed) pipeline run, writes one trace CSV and one
summary JSON per run, plus a combined ranking table. Exit codes: 0 ok,
1 config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import metrics, pipeline
from .expconfig import ConfigError, ExperimentConfig, validate_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def method_name(method: tuple[str, str, str]) -> str:
    return "-".join(method)


def run_one(exp: ExperimentConfig, method, seed: int):
    cfg = exp.pipeline_for(method, seed)
    record = pipeline.run(cfg, window_frames=exp.metric.window)
    run_id = f"{method_name(method)}_{seed}"
    return metrics.build_trace(record, exp.metric, run_id)


def run_experiment(exp: ExperimentConfig, log=print) -> int:
    """Execute all (method, seed) runs and write traces + summaries."""
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    per_method: dict[str, list[dict]] = {}
    failures: list[str] = []
    for method in exp.methods:
        name = method_name(method)
        per_method[name] = []
        for seed in exp.seeds:
            run_id = f"{name}_{seed}"
            try:
                trace = run_one(exp, method, seed)
            except Exception:
                failures.append(run_id)
                log(f"[fail] {run_id}\n{traceback.format_exc()}")
                continue
            (out / f"{run_id}.csv").write_text(metrics.trace_to_csv(trace))
            (out / f"{run_id}.summary.json").write_text(metrics.summary_to_json(trace))
            per_method[name].append(trace.summary)
            log(f"[done] {run_id}: " + ", ".join(
                f"{k}={trace.summary[k]:.3f}" for k in metrics.SUMMARY_KEYS
                if trace.summary[k] is not None))

    combined = _combined_summary(per_method, failures)
    (out / "summary.json").write_text(json.dumps(combined, indent=2) + "\n")
    log(render_table(combined))
    return EXIT_RUNTIME if failures else EXIT_OK


def _combined_summary(per_method: dict, failures: list[str]) -> dict:
    means: dict[str, dict] = {}
    for name, summaries in per_method.items():
        if not summaries:
            continue
        means[name] = {}
        for key in metrics.SUMMARY_KEYS:
            vals = [s[key] for s in summaries if s[key] is not None]
            means[name][key] = sum(vals) / len(vals) if vals else None
    ranking = {}
    for key in metrics.SUMMARY_KEYS:
        scored = [(name, m[key]) for name, m in means.items() if m[key] is not None]
        ranking[key] = [name for name, _ in
                        sorted(scored, key=lambda kv: kv[1], reverse=True)]
    return {"methods": means, "ranking": ranking, "failed_runs": failures}


def render_table(combined: dict) -> str:
    """Fixed-width methods x metrics table (seed means)."""
    methods = list(combined["methods"])
    if not methods:
        return "no successful runs"
    name_w = max(len(m) for m in methods + ["method"]) + 2
    head = "method".ljust(name_w) + "".join(k.rjust(12) for k in metrics.SUMMARY_KEYS)
    lines = [head, "-" * len(head)]
    for m in methods:
        row = m.ljust(name_w)
        for key in metrics.SUMMARY_KEYS:
            v = combined["methods"][m][key]
            row += ("-" if v is None else f"{v:.4f}").rjust(12)
        lines.append(row)
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="odcl")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a config file")
    runp.add_argument("config", help="path to the key=value config file")
    runp.add_argument("--out", help="override run.output_dir")
    runp.add_argument("--seeds", help="comma-separated seed list override")
    runp.add_argument("--methods", help="comma-separated update:select:reg triples")
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    overrides = {}
    if args.out:
        overrides["run.output_dir"] = args.out
    if args.seeds:
        overrides["run.seeds"] = args.seeds
    if args.methods:
        overrides["run.methods"] = args.methods

    try:
        exp = validate_config(text, overrides=overrides)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return run_experiment(exp)
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
