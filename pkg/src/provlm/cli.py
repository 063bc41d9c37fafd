"""Command-line interface: run scenarios, batches, scoring, debug renders."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import load_run_config
from .errors import ProvlmError
from .harness import run_batch, run_scenario, score_report
from .metrics import compute_metrics
from .scenario import load_scenario
from .sim import render


@click.group()
def main():
    """Progressive VLM planning engine and simulator."""


def _common_cfg(config, backend):
    cfg = load_run_config(config)
    if backend is not None and backend != cfg.backend:
        from dataclasses import replace

        cfg = replace(cfg, backend=backend)
    return cfg


@main.command("run")
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--backend", type=click.Choice(["scripted", "http"]), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
def run_cmd(scenario_path, config, seed, backend, report_path):
    """Run one scenario once and print its metrics."""
    cfg = _common_cfg(config, backend)
    try:
        scenario = load_scenario(scenario_path)
        report = run_scenario(scenario, cfg, seed=seed)
    except ProvlmError as exc:
        raise click.ClickException(str(exc))
    metrics = compute_metrics(report.metric_inputs)
    click.echo(json.dumps({"scenario": report.scenario, "completed": report.completed,
                           "iterations": report.iterations, **metrics.to_dict()}, indent=2))
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        click.echo(f"report written to {report_path}")


@main.command("batch")
@click.argument("scenario_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--reps", type=int, default=1)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--backend", type=click.Choice(["scripted", "http"]), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
def batch_cmd(scenario_dir, reps, config, seed, backend, report_path):
    """Run every scenario JSON in a directory, aggregating metrics."""
    cfg = _common_cfg(config, backend)
    paths = sorted(Path(scenario_dir).glob("*.json"))
    if not paths:
        raise click.ClickException(f"no scenario files in {scenario_dir}")
    result = run_batch(paths, cfg, repetitions=reps, master_seed=seed)
    doc = result.to_dict()
    click.echo(json.dumps({"metrics": doc["metrics"], "counters": doc["counters"],
                           "parse_failures": doc["parse_failures"]}, indent=2))
    if report_path:
        Path(report_path).write_bytes(result.to_bytes())
        click.echo(f"aggregate report written to {report_path}")


@main.command("score")
@click.argument("report_path", type=click.Path(exists=True))
def score_cmd(report_path):
    """Recompute metrics from a saved report file."""
    try:
        click.echo(json.dumps(score_report(report_path), indent=2))
    except ProvlmError as exc:
        raise click.ClickException(str(exc))


@main.command("render")
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True)
def render_cmd(scenario_path, out_dir):
    """Render the initial frame of a scenario to PNG files (debug)."""
    try:
        scenario = load_scenario(scenario_path)
    except ProvlmError as exc:
        raise click.ClickException(str(exc))
    scene = scenario.build_scene()
    obs, gt = render(scene)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        from PIL import Image
    except ImportError:
        raise click.ClickException("PNG output needs Pillow (pip install Pillow)")
    Image.fromarray(obs.rgb).save(out / "rgb.png")
    depth_mm = np.clip(obs.depth * 1000.0, 0, 65535).astype(np.uint16)
    Image.fromarray(depth_mm).save(out / "depth_mm.png")
    Image.fromarray(gt.instance.astype(np.uint8)).save(out / "labels.png")
    click.echo(f"frames written to {out}")


if __name__ == "__main__":
    main()
