"""prefplan command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 configuration problem, 3 missing/stale upstream
artifact. Every stage writes versioned artifacts into the run directory
given by --out.
"""

from __future__ import annotations

import sys

import click

from .config import ConfigError, demo_profile_path, load_config
from .stages import (
    MissingArtifact,
    RunDir,
    run_training_pipeline,
    stage_collect,
    stage_eval_cover,
    stage_eval_mae,
    stage_eval_track,
    stage_label,
    stage_relabel,
    stage_train_attr,
    stage_train_diff,
)

EXIT_CONFIG = 2
EXIT_MISSING = 3


def _common(f):
    f = click.option("--config", "config_path", default=None,
                     help="YAML profile; defaults to built-in reference settings.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the run seed.")(f)
    f = click.option("--out", "out_dir", default="runs/default", show_default=True,
                     help="Run directory for artifacts.")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Dotted config override, repeatable (e.g. attr.grad_steps=100).")(f)
    return f


def _load(config_path, seed, overrides):
    try:
        ov = list(overrides)
        if seed is not None:
            ov.append(f"seed={seed}")
        return load_config(config_path, ov)
    except (ConfigError, OSError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)


def _run_stage(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except MissingArtifact as e:
        click.echo(f"missing upstream artifact: {e}", err=True)
        sys.exit(EXIT_MISSING)


@click.group()
def main():
    """Preference-steered diffusion planning pipeline."""


@main.command()
@_common
def collect(config_path, seed, out_dir, overrides):
    """Roll out the scripted controller grid into a behavior dataset."""
    cfg = _load(config_path, seed, overrides)
    run = RunDir(out_dir)
    path = _run_stage(stage_collect, cfg, run)
    click.echo(f"dataset -> {path}")


@main.command()
@_common
def label(config_path, seed, out_dir, overrides):
    """Sample segment pairs and attach synthetic per-attribute labels."""
    cfg = _load(config_path, seed, overrides)
    path = _run_stage(stage_label, cfg, RunDir(out_dir))
    click.echo(f"feedback -> {path}")


@main.command("train-attr")
@_common
@click.option("--progress/--no-progress", default=True)
def train_attr(config_path, seed, out_dir, overrides, progress):
    """Train the attribute strength ensemble on the feedback file."""
    cfg = _load(config_path, seed, overrides)
    run = RunDir(out_dir)
    path = _run_stage(stage_train_attr, cfg, run, progress=progress)
    report = run.read_json("attr_report.json")
    acc = report["holdout_accuracy"]["per_attribute"]
    click.echo("holdout accuracy: " + ", ".join(f"{k}={v:.3f}" for k, v in acc.items()))
    click.echo(f"attribute model -> {path}")


@main.command()
@_common
def relabel(config_path, seed, out_dir, overrides):
    """Annotate every segment with model strengths (the diffusion training set)."""
    cfg = _load(config_path, seed, overrides)
    path = _run_stage(stage_relabel, cfg, RunDir(out_dir))
    click.echo(f"annotations -> {path}")


@main.command("train-diff")
@_common
@click.option("--progress/--no-progress", default=True)
def train_diff(config_path, seed, out_dir, overrides, progress):
    """Train the attribute-conditioned diffusion model."""
    cfg = _load(config_path, seed, overrides)
    path = _run_stage(stage_train_diff, cfg, RunDir(out_dir), progress=progress)
    click.echo(f"diffusion model -> {path}")


def _print_area_table(run: RunDir):
    rows = []
    for policy in ("planner", "uncond", "random"):
        try:
            payload = run.read_json(f"mae_{policy}.json")
        except MissingArtifact:
            continue
        rows.append((policy, payload["area"], payload["median_mae"]))
    if rows:
        click.echo(f"{'policy':<10} {'area':>8} {'median MAE':>12}")
        for name, area, med in rows:
            click.echo(f"{name:<10} {area:>8.3f} {med:>12.3f}")


@main.command("eval-mae")
@_common
@click.option("--policy", type=click.Choice(["planner", "uncond", "random", "all"]),
              default="planner", show_default=True)
def eval_mae(config_path, seed, out_dir, overrides, policy):
    """Preference-matching trials; writes the MAE curve and area metric."""
    cfg = _load(config_path, seed, overrides)
    run = RunDir(out_dir)
    policies = ["planner", "uncond", "random"] if policy == "all" else [policy]
    for p in policies:
        path = _run_stage(stage_eval_mae, cfg, run, policy=p)
        click.echo(f"mae[{p}] -> {path}")
    _print_area_table(run)


@main.command("eval-track")
@_common
def eval_track(config_path, seed, out_dir, overrides):
    """Hot-swap targets mid-episode and log settling behavior."""
    cfg = _load(config_path, seed, overrides)
    run = RunDir(out_dir)
    path = _run_stage(stage_eval_track, cfg, run)
    payload = run.read_json("tracking.json")
    click.echo(f"settled within {payload['settle_window']} steps: "
               f"{payload['runs_settled_within_window']}/{payload['n_runs']} runs")
    click.echo(f"tracking -> {path}")


@main.command("eval-cover")
@_common
def eval_cover(config_path, seed, out_dir, overrides):
    """Commanded-vs-realized attribute histogram against the dataset support."""
    cfg = _load(config_path, seed, overrides)
    run = RunDir(out_dir)
    path = _run_stage(stage_eval_cover, cfg, run)
    payload = run.read_json("coverage.json")
    click.echo(f"support coverage: {payload['support_coverage']:.3f}")
    click.echo(f"coverage -> {path}")


@main.command()
@_common
@click.option("--addr", default=None, metavar="HOST:PORT",
              help="Listen address (overrides service.host/port).")
def serve(config_path, seed, out_dir, overrides, addr):
    """Serve the live steering endpoint (and the UI, if built) from a run dir."""
    ov = list(overrides)
    if addr:
        try:
            host, port = addr.rsplit(":", 1)
            ov += [f"service.host={host}", f"service.port={int(port)}"]
        except ValueError:
            click.echo(f"config error: bad --addr {addr!r}", err=True)
            sys.exit(EXIT_CONFIG)
    cfg = _load(config_path, seed, ov)
    run = RunDir(out_dir)
    try:
        from .stages import load_models
        models = load_models(run)
    except MissingArtifact as e:
        click.echo(f"missing upstream artifact: {e}", err=True)
        sys.exit(EXIT_MISSING)
    from .nl import default_corpus
    from .service import serve as run_service
    click.echo(f"serving on {cfg.service.host}:{cfg.service.port}")
    run_service(models, cfg, default_corpus())


@main.command()
@_common
def demo(config_path, seed, out_dir, overrides):
    """End-to-end desk-scale pipeline with small budgets."""
    if config_path is None:
        config_path = str(demo_profile_path())
    if out_dir == "runs/default":
        out_dir = "runs/demo"
    cfg = _load(config_path, seed, overrides)
    run = RunDir(out_dir)
    run.write_json("config.json", cfg.to_dict())
    try:
        run_training_pipeline(cfg, run, progress=True)
    except MissingArtifact as e:
        click.echo(f"missing upstream artifact: {e}", err=True)
        sys.exit(EXIT_MISSING)
    report = run.read_json("attr_report.json")
    acc = report["holdout_accuracy"]["per_attribute"]
    click.echo("attribute model holdout accuracy: "
               + ", ".join(f"{k}={v:.3f}" for k, v in acc.items()))
    timings = run.timings()
    total = sum(timings.values())
    click.echo("stage timings: " + ", ".join(f"{k}={v:.0f}s" for k, v in sorted(timings.items())))
    click.echo(f"total {total:.0f}s; artifacts in {out_dir}")
    click.echo("next: `prefplan eval-mae --policy all`, `prefplan eval-track`, "
               "`prefplan eval-cover`, or `prefplan serve` (all with --out "
               f"{out_dir} --config {config_path})")


if __name__ == "__main__":
    main()
