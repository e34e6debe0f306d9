"""Pipeline stages over a run directory.

Every stage reads its inputs from the run directory, writes one artifact,
and records (path, sha256, config hash, code version) in manifest.json.
Downstream stages refuse to run when an upstream artifact is missing or
its hash no longer matches the manifest entry, so stale mixes cannot
silently produce results. Wall times land in timings.json.
"""

from __future__ import annotations

import json
import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attr_model import annotate, evaluate_pairwise_accuracy, load_attr_model, save_attr_model, train_attr_model
from .config import PipelineConfig, config_hash
from .data import Dataset, build_feedback, collect, load_feedback, sample_pairs, save_feedback, segment_dataset
from .diffusion import load_diffusion_model, save_diffusion_model, train_diffusion, trajectory_features
from .env import ATTRIBUTE_NAMES, default_schema
from .numerics import file_sha256, load_arrays, save_arrays


class MissingArtifact(RuntimeError):
    pass


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.TimeoutExpired):
        pass
    return __version__


class RunDir:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {}

    def record(self, stage: str, path: Path, cfg: PipelineConfig, sections: list[str]) -> None:
        manifest = self.manifest()
        manifest[stage] = {
            "path": path.name,
            "sha256": file_sha256(path),
            "config_hash": config_hash(cfg, sections),
            "code_version": code_version(),
        }
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def require(self, stage: str) -> Path:
        entry = self.manifest().get(stage)
        if entry is None:
            raise MissingArtifact(f"stage {stage!r} has not produced an artifact in {self.root}")
        path = self.root / entry["path"]
        if not path.exists():
            raise MissingArtifact(f"artifact for stage {stage!r} missing: {path}")
        if file_sha256(path) != entry["sha256"]:
            raise MissingArtifact(f"artifact for stage {stage!r} does not match its manifest hash "
                                  f"(stale or modified): {path}")
        return path

    def add_timing(self, stage: str, seconds: float) -> None:
        path = self.root / "timings.json"
        data = json.loads(path.read_text()) if path.exists() else {}
        data[stage] = round(seconds, 3)
        path.write_text(json.dumps(data, indent=2, sort_keys=True))

    def timings(self) -> dict:
        path = self.root / "timings.json"
        return json.loads(path.read_text()) if path.exists() else {}

    def write_json(self, name: str, obj: dict) -> Path:
        path = self.root / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True))
        return path

    def read_json(self, name: str) -> dict:
        path = self.root / name
        if not path.exists():
            raise MissingArtifact(f"missing {path}")
        return json.loads(path.read_text())


def _timed(run: RunDir, stage: str):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, *exc):
            if exc[0] is None:
                run.add_timing(stage, time.perf_counter() - self.t0)
            return False
    return _Timer()


def stage_collect(cfg: PipelineConfig, run: RunDir) -> Path:
    with _timed(run, "collect"):
        ds = collect(steps_per_policy=cfg.data.steps_per_policy, seed=cfg.seed,
                     cfg=cfg.env, noise_fraction=cfg.data.noise_fraction,
                     episodes_per_policy=cfg.data.episodes_per_policy)
        path = run.root / "dataset.bin"
        ds.save(path, extra_meta={
            "horizon": cfg.data.horizon,
            "k": len(ATTRIBUTE_NAMES),
            "attr_names": list(ATTRIBUTE_NAMES),
            "noise_fraction": cfg.data.noise_fraction,
            "config_hash": config_hash(cfg, ["env", "data", "seed"]),
            "code_version": code_version(),
        })
    run.record("collect", path, cfg, ["env", "data", "seed"])
    return path


def stage_label(cfg: PipelineConfig, run: RunDir) -> Path:
    ds_path = run.require("collect")
    with _timed(run, "label"):
        ds = Dataset.load(ds_path)
        schema = default_schema(ds.env_config)
        segs = segment_dataset(ds, cfg.data.horizon)
        pairs = sample_pairs(len(segs), cfg.data.n_pairs, seed=cfg.seed)
        records = build_feedback(segs, pairs, schema, cfg.data.equal_band)
        path = run.root / "feedback.jsonl"
        save_feedback(path, records, {
            "dataset_sha256": file_sha256(ds_path),
            "equal_band": cfg.data.equal_band,
            "horizon": cfg.data.horizon,
            "seed": cfg.seed,
            "config_hash": config_hash(cfg, ["env", "data", "seed"]),
            "code_version": code_version(),
        })
    run.record("label", path, cfg, ["env", "data", "seed"])
    return path


def stage_train_attr(cfg: PipelineConfig, run: RunDir, progress: bool = False) -> Path:
    ds_path = run.require("collect")
    fb_path = run.require("label")
    with _timed(run, "train_attr"):
        ds = Dataset.load(ds_path)
        records, header = load_feedback(fb_path)
        if header.get("dataset_sha256") != file_sha256(ds_path):
            raise MissingArtifact("feedback was generated from a different dataset")
        segs = segment_dataset(ds, header["horizon"])
        model, report = train_attr_model(records, segs, cfg.attr, seed=cfg.seed,
                                         attr_names=ATTRIBUTE_NAMES, progress=progress)
        path = run.root / "attr_model.bin"
        save_attr_model(path, model, {
            "dataset_sha256": file_sha256(ds_path),
            "feedback_sha256": file_sha256(fb_path),
            "config_hash": config_hash(cfg, ["env", "data", "attr", "seed"]),
            "code_version": code_version(),
        })
        run.write_json("attr_report.json", report)
    run.record("train_attr", path, cfg, ["env", "data", "attr", "seed"])
    return path


def stage_relabel(cfg: PipelineConfig, run: RunDir) -> Path:
    ds_path = run.require("collect")
    attr_path = run.require("train_attr")
    with _timed(run, "relabel"):
        ds = Dataset.load(ds_path)
        model, _ = load_attr_model(attr_path)
        segs = segment_dataset(ds, cfg.data.horizon)
        strengths = annotate(segs, model)
        path = run.root / "annotations.bin"
        save_arrays(path, {"strengths": strengths, "seg_meta": segs.meta}, {
            "kind": "annotations",
            "horizon": cfg.data.horizon,
            "dataset_sha256": file_sha256(ds_path),
            "attr_model_sha256": file_sha256(attr_path),
            "config_hash": config_hash(cfg, ["env", "data", "attr", "seed"]),
            "code_version": code_version(),
        })
    run.record("relabel", path, cfg, ["env", "data", "attr", "seed"])
    return path


def stage_train_diff(cfg: PipelineConfig, run: RunDir, progress: bool = False) -> Path:
    ds_path = run.require("collect")
    ann_path = run.require("relabel")
    with _timed(run, "train_diff"):
        ds = Dataset.load(ds_path)
        arrays, meta = load_arrays(ann_path)
        if meta.get("dataset_sha256") != file_sha256(ds_path):
            raise MissingArtifact("annotations were generated from a different dataset")
        segs = segment_dataset(ds, meta["horizon"])
        feats = trajectory_features(segs.states, segs.actions)
        model, report = train_diffusion(feats, arrays["strengths"], cfg.diffusion,
                                        seed=cfg.seed, attr_names=ATTRIBUTE_NAMES,
                                        progress=progress)
        path = run.root / "diffusion.bin"
        save_diffusion_model(path, model, {
            "dataset_sha256": file_sha256(ds_path),
            "annotations_sha256": file_sha256(ann_path),
            "config_hash": config_hash(cfg, ["env", "data", "attr", "diffusion", "seed"]),
            "code_version": code_version(),
        })
        run.write_json("diffusion_report.json", report)
    run.record("train_diff", path, cfg, ["env", "data", "attr", "diffusion", "seed"])
    return path


def load_models(run: RunDir):
    from .planner import PipelineModels
    attr, _ = load_attr_model(run.require("train_attr"))
    diffusion, _ = load_diffusion_model(run.require("train_diff"))
    return PipelineModels(attr=attr, diffusion=diffusion)


def run_training_pipeline(cfg: PipelineConfig, run: RunDir, progress: bool = False) -> None:
    stage_collect(cfg, run)
    stage_label(cfg, run)
    stage_train_attr(cfg, run, progress=progress)
    stage_relabel(cfg, run)
    stage_train_diff(cfg, run, progress=progress)


def stage_eval_mae(cfg: PipelineConfig, run: RunDir, policy: str = "planner") -> Path:
    models = load_models(run)
    stage = f"eval_mae_{policy}"
    with _timed(run, stage):
        from .evalsuite import default_thresholds, mae_curve, mae_curve_area, run_mae_trials
        results = run_mae_trials(models, cfg.eval.n_trials, cfg.eval.episode_len,
                                 seed=cfg.seed, sampler=cfg.sampler, env_cfg=cfg.env,
                                 policy=policy)
        maes = np.array([r.mae for r in results])
        thresholds = default_thresholds(cfg.eval.threshold_lo, cfg.eval.threshold_hi,
                                        cfg.eval.threshold_count)
        payload = {
            "policy": policy,
            "n_trials": cfg.eval.n_trials,
            "episode_len": cfg.eval.episode_len,
            "sampler": cfg.sampler.to_dict(),
            "median_mae": float(np.median(maes)),
            "area": mae_curve_area(maes, thresholds),
            "curve": {"threshold": thresholds.tolist(),
                      "fraction": mae_curve(maes, thresholds).tolist()},
            "trials": [{
                "v_targ": r.v_targ.tolist(), "mask": r.mask.astype(int).tolist(),
                "achieved": r.achieved.tolist(), "mae": r.mae,
            } for r in results],
        }
        path = run.write_json(f"mae_{policy}.json", payload)
        with open(run.root / f"mae_trials_{policy}.jsonl", "w") as f:
            f.write(json.dumps({"v": 1, "kind": "mae_trials", "policy": policy,
                                "n": len(payload["trials"])}) + "\n")
            for trial in payload["trials"]:
                f.write(json.dumps(trial) + "\n")
        curve_csv = run.root / f"mae_curve_{policy}.csv"
        with open(curve_csv, "w") as f:
            f.write("threshold,fraction\n")
            for th, fr in zip(payload["curve"]["threshold"], payload["curve"]["fraction"]):
                f.write(f"{th:.6g},{fr:.6g}\n")
    run.record(stage, path, cfg, ["env", "data", "attr", "diffusion", "sampler", "eval", "seed"])
    return path


def stage_eval_track(cfg: PipelineConfig, run: RunDir) -> Path:
    models = load_models(run)
    with _timed(run, "eval_track"):
        from .evalsuite import settle_steps, tracking_run
        tr = cfg.eval.tracking
        records = tracking_run(models, tr.switch_steps, tr.speed_targets, tr.height_targets,
                               tr.episode_len, cfg.sampler,
                               seeds=[cfg.seed + i for i in range(tr.n_runs)],
                               env_cfg=cfg.env, schema=default_schema(cfg.env))
        settles = settle_steps(records, tr.switch_steps, tr.settle_tol)
        window = 2 * cfg.data.horizon
        run_ok = [all(s is not None and s <= window for s in per_run) for per_run in settles]
        from .planner import write_diagnostics
        write_diagnostics(run.root / "tracking_records.jsonl", records)
        payload = {
            "switch_steps": list(tr.switch_steps),
            "speed_targets": list(tr.speed_targets),
            "height_targets": list(tr.height_targets),
            "settle_tol": tr.settle_tol,
            "settle_window": window,
            "settle_steps": settles,
            "runs_settled_within_window": int(sum(run_ok)),
            "n_runs": tr.n_runs,
            "records": records,
        }
        path = run.write_json("tracking.json", payload)
    run.record("eval_track", path, cfg, ["env", "data", "attr", "diffusion", "sampler", "eval", "seed"])
    return path


def stage_eval_cover(cfg: PipelineConfig, run: RunDir) -> Path:
    models = load_models(run)
    ds_path = run.require("collect")
    ann_path = run.require("relabel")
    with _timed(run, "eval_cover"):
        from .evalsuite import (coverage_dataset_samples, coverage_histogram,
                                coverage_policy_samples, support_coverage)
        from .planner import SamplerConfig
        cov = cfg.eval.coverage
        ds = Dataset.load(ds_path)
        arrays, meta = load_arrays(ann_path)
        segs = segment_dataset(ds, meta["horizon"])
        schema = default_schema(cfg.env)
        du, dv = coverage_dataset_samples(segs, arrays["strengths"], schema, cov.attr_index)
        sampler = SamplerConfig(steps=cfg.sampler.steps, candidates=cov.candidates,
                                guidance=cfg.sampler.guidance, sigma=cfg.sampler.sigma)
        pu, pv = coverage_policy_samples(models, cov.attr_index, cov.n_samples,
                                         cov.episode_len, sampler, cfg.seed, schema,
                                         env_cfg=cfg.env)
        d_hist = coverage_histogram(du, dv, cov.cells)
        p_hist = coverage_histogram(pu, pv, cov.cells)
        payload = {
            "attr_index": cov.attr_index,
            "cells": cov.cells,
            "n_samples": cov.n_samples,
            "episode_len": cov.episode_len,
            "support_coverage": support_coverage(p_hist, d_hist),
            "dataset_hist": d_hist.tolist(),
            "policy_hist": p_hist.tolist(),
            "policy_v": pv.tolist(),
            "policy_u": pu.tolist(),
        }
        path = run.write_json("coverage.json", payload)
    run.record("eval_cover", path, cfg, ["env", "data", "attr", "diffusion", "sampler", "eval", "seed"])
    return path
