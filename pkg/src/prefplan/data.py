"""Behavior dataset construction and synthetic pairwise feedback.

A dataset is a stack of equal-length rollouts from a grid of scripted
controllers (optionally diluted with random-action rollouts for the
robustness protocol). Segmentation cuts each rollout into non-overlapping
windows of length H; feedback pairs two segments and labels each attribute
by comparing ground-truth strengths, with an equality band standing in for
the human "Equal" option.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import (
    ACTION_DIM,
    STATE_DIM,
    AttributeSchema,
    BouncerConfig,
    rollout,
    sample_initial_state,
    scripted_controller,
)
from .numerics.container import load_arrays, save_arrays

FORMAT_VERSION = 1


class DataError(ValueError):
    pass


def default_grid() -> list[tuple[float, float]]:
    """35 scripted controllers: target_vx in {-3..3} x jump in {0,.25,.5,.75,1}."""
    return [(float(v), j) for v in range(-3, 4) for j in (0.0, 0.25, 0.5, 0.75, 1.0)]


@dataclass
class Dataset:
    states: np.ndarray        # (R, T, 5) float32
    actions: np.ndarray       # (R, T, 2) float32
    policy_params: np.ndarray  # (R, 2) float32, NaN for noise rollouts
    is_noise: np.ndarray      # (R,) bool
    env_config: BouncerConfig
    seed: int

    @property
    def n_rollouts(self) -> int:
        return self.states.shape[0]

    @property
    def rollout_len(self) -> int:
        return self.states.shape[1]

    @property
    def n_transitions(self) -> int:
        return self.states.shape[0] * self.states.shape[1]

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        meta = {
            "format_version": FORMAT_VERSION,
            "kind": "dataset",
            "env_config": self.env_config.to_dict(),
            "seed": self.seed,
            "n_rollouts": int(self.n_rollouts),
            "rollout_len": int(self.rollout_len),
            "n_transitions": int(self.n_transitions),
        }
        if extra_meta:
            meta.update(extra_meta)
        save_arrays(Path(path), {
            "states": self.states,
            "actions": self.actions,
            "policy_params": self.policy_params,
            "is_noise": self.is_noise.astype(np.uint8),
        }, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "dataset":
            raise DataError(f"{path}: not a dataset file")
        cfg = BouncerConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in meta["env_config"].items()})
        return cls(
            states=arrays["states"],
            actions=arrays["actions"],
            policy_params=arrays["policy_params"],
            is_noise=arrays["is_noise"].astype(bool),
            env_config=cfg,
            seed=meta["seed"],
        )


def _random_rollout(steps: int, rng: np.random.Generator, cfg: BouncerConfig):
    def policy(_s):
        from .env import Action
        return Action(thrust=float(rng.uniform(-1.0, 1.0)), jump=float(rng.uniform(0.0, 1.0)))

    return rollout(policy, steps, sample_initial_state(rng), cfg)


def collect(grid: list[tuple[float, float]] | None = None, steps_per_policy: int = 3000,
            seed: int = 0, cfg: BouncerConfig = BouncerConfig(),
            noise_fraction: float = 0.0, episodes_per_policy: int = 10) -> Dataset:
    """Roll out every controller in the grid from seeded random starts.

    Each controller's step budget is split across several episodes so the
    dataset contains many approach transients (speed changes, first
    landings) rather than one per controller followed by steady state;
    the planner needs those windows to express behavior switches.
    """
    if grid is None:
        grid = default_grid()
    if not grid:
        raise DataError("controller grid is empty")
    if episodes_per_policy < 1 or steps_per_policy % episodes_per_policy != 0:
        raise DataError(f"steps_per_policy {steps_per_policy} not divisible by "
                        f"episodes_per_policy {episodes_per_policy}")
    ep_len = steps_per_policy // episodes_per_policy
    n = len(grid) * episodes_per_policy
    states = np.empty((n, ep_len, STATE_DIM), dtype=np.float32)
    actions = np.empty((n, ep_len, ACTION_DIM), dtype=np.float32)
    params = np.empty((n, 2), dtype=np.float32)
    row = 0
    for i, (target_vx, jump) in enumerate(grid):
        policy = scripted_controller(target_vx, jump)
        for e in range(episodes_per_policy):
            rng = np.random.default_rng([seed, i, e])
            states[row], actions[row] = rollout(policy, ep_len, sample_initial_state(rng), cfg)
            params[row] = (target_vx, jump)
            row += 1
    ds = Dataset(states=states, actions=actions, policy_params=params,
                 is_noise=np.zeros(n, dtype=bool), env_config=cfg, seed=seed)
    if noise_fraction > 0.0:
        ds = mix_noise(ds, noise_fraction, seed)
    return ds


def mix_noise(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Append uniform-random-action rollouts so they make up `fraction` of the result."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"noise fraction must be in (0, 1), got {fraction}")
    n_orig = ds.n_rollouts
    n_noise = int(round(fraction / (1.0 - fraction) * n_orig))
    steps = ds.rollout_len
    states = np.empty((n_noise, steps, STATE_DIM), dtype=np.float32)
    actions = np.empty((n_noise, steps, ACTION_DIM), dtype=np.float32)
    for i in range(n_noise):
        rng = np.random.default_rng([seed, n_orig + i, 7])
        states[i], actions[i] = _random_rollout(steps, rng, ds.env_config)
    return Dataset(
        states=np.concatenate([ds.states, states], axis=0),
        actions=np.concatenate([ds.actions, actions], axis=0),
        policy_params=np.concatenate([ds.policy_params, np.full((n_noise, 2), np.nan, np.float32)]),
        is_noise=np.concatenate([ds.is_noise, np.ones(n_noise, dtype=bool)]),
        env_config=ds.env_config,
        seed=ds.seed,
    )


@dataclass(frozen=True)
class TrajectorySegment:
    states: np.ndarray   # (H, 5)
    actions: np.ndarray  # (H, 2)
    source_policy: int
    start: int


class SegmentSet:
    """All length-H windows of a dataset, stored as stacked arrays."""

    def __init__(self, states: np.ndarray, actions: np.ndarray, meta: np.ndarray, H: int):
        self.states = states    # (n, H, 5)
        self.actions = actions  # (n, H, 2)
        self.meta = meta        # (n, 2) int64: rollout index, start step
        self.H = H

    def __len__(self) -> int:
        return self.states.shape[0]

    def segment(self, i: int) -> TrajectorySegment:
        return TrajectorySegment(
            states=self.states[i], actions=self.actions[i],
            source_policy=int(self.meta[i, 0]), start=int(self.meta[i, 1]),
        )

    def ground_truth(self, schema: AttributeSchema) -> np.ndarray:
        """(n, k) ground-truth strengths, computed per segment."""
        return np.stack([schema.evaluate(self.states[i]) for i in range(len(self))])


def segment_dataset(ds: Dataset, H: int) -> SegmentSet:
    """Non-overlapping windows; per-rollout remainders are dropped."""
    if H < 2:
        raise DataError(f"H must be >= 2, got {H}")
    per = ds.rollout_len // H
    if per == 0:
        raise DataError(f"H={H} exceeds rollout length {ds.rollout_len}; no segments")
    R = ds.n_rollouts
    n = R * per
    states = ds.states[:, :per * H].reshape(R, per, H, STATE_DIM).reshape(n, H, STATE_DIM)
    actions = ds.actions[:, :per * H].reshape(R, per, H, ACTION_DIM).reshape(n, H, ACTION_DIM)
    meta = np.empty((n, 2), dtype=np.int64)
    meta[:, 0] = np.repeat(np.arange(R), per)
    meta[:, 1] = np.tile(np.arange(per) * H, R)
    return SegmentSet(states.copy(), actions.copy(), meta, H)


def sample_pairs(n_segments: int, n_pairs: int, seed: int) -> np.ndarray:
    """Uniformly draw n_pairs distinct unordered pairs of distinct segments."""
    if n_segments < 2:
        raise DataError(f"need >= 2 segments to form pairs, got {n_segments}")
    capacity = n_segments * (n_segments - 1) // 2
    if n_pairs > capacity:
        raise DataError(f"requested {n_pairs} pairs but only {capacity} exist")
    rng = np.random.default_rng([seed, 11])
    seen: set[tuple[int, int]] = set()
    out = np.empty((n_pairs, 2), dtype=np.int64)
    count = 0
    while count < n_pairs:
        a = int(rng.integers(0, n_segments))
        b = int(rng.integers(0, n_segments))
        if a == b:
            continue
        key = (a, b) if a < b else (b, a)
        if key in seen:
            continue
        seen.add(key)
        out[count] = (a, b)
        count += 1
    return out


def synthetic_label(u_a: np.ndarray, u_b: np.ndarray, equal_band: float = 0.05) -> np.ndarray:
    """Per-attribute label: (1,0) if a clearly stronger, (0,1) if b, (0.5,0.5) within the band."""
    if equal_band < 0:
        raise DataError(f"equal_band must be >= 0, got {equal_band}")
    u_a = np.asarray(u_a, dtype=np.float64)
    u_b = np.asarray(u_b, dtype=np.float64)
    k = u_a.shape[0]
    labels = np.empty((k, 2), dtype=np.float32)
    tie = np.abs(u_a - u_b) <= equal_band
    a_wins = u_a > u_b
    labels[:, 0] = np.where(tie, 0.5, np.where(a_wins, 1.0, 0.0))
    labels[:, 1] = 1.0 - labels[:, 0]
    return labels


@dataclass(frozen=True)
class FeedbackRecord:
    seg_a: int
    seg_b: int
    labels: np.ndarray  # (k, 2)


@dataclass(frozen=True)
class AnnotatedSegment:
    segment: TrajectorySegment
    strengths: np.ndarray  # (k,) in [0, 1]


def build_feedback(segments: SegmentSet, pairs: np.ndarray, schema: AttributeSchema,
                   equal_band: float = 0.05) -> list[FeedbackRecord]:
    truths = segments.ground_truth(schema)
    return [
        FeedbackRecord(int(a), int(b), synthetic_label(truths[a], truths[b], equal_band))
        for a, b in pairs
    ]


def save_feedback(path: str | Path, records: list[FeedbackRecord], meta: dict) -> None:
    """Line-delimited records with a leading header line."""
    header = {"format_version": FORMAT_VERSION, "kind": "feedback", "n_records": len(records)}
    header.update(meta)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            f.write(json.dumps({
                "seg_a": r.seg_a, "seg_b": r.seg_b,
                "labels": [[float(x) for x in row] for row in r.labels],
            }) + "\n")


def load_feedback(path: str | Path) -> tuple[list[FeedbackRecord], dict]:
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("kind") != "feedback":
            raise DataError(f"{path}: not a feedback file")
        records = []
        for line in f:
            obj = json.loads(line)
            records.append(FeedbackRecord(
                seg_a=int(obj["seg_a"]), seg_b=int(obj["seg_b"]),
                labels=np.asarray(obj["labels"], dtype=np.float32),
            ))
    if len(records) != header["n_records"]:
        raise DataError(f"{path}: truncated feedback file "
                        f"({len(records)} of {header['n_records']} records)")
    return records, header
