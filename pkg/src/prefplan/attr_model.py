"""Trajectory-level attribute scorer trained from pairwise feedback.

A non-causal transformer encoder reads a variable-length state sequence;
a learned summary token, prepended to the sequence, is mapped by a linear
head to one raw score per attribute. Raw scores are trained with the
pairwise logistic (Bradley-Terry) objective over feedback labels and are
only normalized to [0,1] at inference time, using per-attribute min/max
bounds taken over the training segment pool. Three independently seeded
ensemble members are averaged (on raw scores) before normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics as nm
from .data import FeedbackRecord, SegmentSet
from .env import STATE_DIM, State
from .numerics import AdamConfig, AdamState, Tensor, adam_step

FEATURE_DIM = 3  # y, vx, vy: the attribute-bearing state channels


class AttrModelError(ValueError):
    pass


@dataclass(frozen=True)
class AttrModelConfig:
    embed_dim: int = 128
    heads: int = 4
    layers: int = 2
    ff_dim: int = 128
    dropout: float = 0.1
    ensembles: int = 3
    batch: int = 256
    grad_steps: int = 3000
    holdout_fraction: float = 0.2
    optimizer: AdamConfig = field(default_factory=lambda: AdamConfig(learning_rate=1e-4, weight_decay=1e-4))

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise AttrModelError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.ensembles < 1:
            raise AttrModelError("need at least one ensemble member")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim, "heads": self.heads, "layers": self.layers,
            "ff_dim": self.ff_dim, "dropout": self.dropout, "ensembles": self.ensembles,
            "batch": self.batch, "grad_steps": self.grad_steps,
            "holdout_fraction": self.holdout_fraction,
            "optimizer": {
                "learning_rate": self.optimizer.learning_rate,
                "weight_decay": self.optimizer.weight_decay,
                "beta1": self.optimizer.beta1, "beta2": self.optimizer.beta2,
                "epsilon": self.optimizer.epsilon,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttrModelConfig":
        d = dict(d)
        opt = d.pop("optimizer", None)
        cfg = cls(**d)
        if opt:
            cfg = replace(cfg, optimizer=AdamConfig(**opt))
        return cfg


@dataclass(frozen=True)
class StrengthPrediction:
    raw: np.ndarray         # (k,) unnormalized ensemble-mean scores
    normalized: np.ndarray  # (k,) clipped min-max normalization of raw


def features_from_states(states) -> np.ndarray:
    """Map env states (..., 5) to model features (..., 3): y, vx, vy."""
    if isinstance(states, (list, tuple)) and states and isinstance(states[0], State):
        states = np.stack([s.as_array() for s in states])
    arr = np.asarray(states, dtype=np.float32)
    if arr.shape[-1] != STATE_DIM:
        raise AttrModelError(f"expected state dim {STATE_DIM}, got {arr.shape[-1]}")
    return np.ascontiguousarray(arr[..., 1:4])


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    key = (length, dim)
    if key not in _PE_CACHE:
        pos = np.arange(length, dtype=np.float64)[:, None]
        i = np.arange(dim // 2, dtype=np.float64)[None, :]
        angles = pos / np.power(10000.0, 2.0 * i / dim)
        pe = np.empty((length, dim), dtype=np.float32)
        pe[:, 0::2] = np.sin(angles)
        pe[:, 1::2] = np.cos(angles)
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(np.float32)


def init_member_params(cfg: AttrModelConfig, k: int, rng: np.random.Generator,
                       feature_dim: int = FEATURE_DIM) -> dict[str, Tensor]:
    d = cfg.embed_dim
    p: dict[str, np.ndarray] = {
        "embed.w": _xavier(rng, feature_dim, d),
        "embed.b": np.zeros(d, dtype=np.float32),
        "cls": (rng.standard_normal((1, 1, d)) * 0.02).astype(np.float32),
        "head.w": _xavier(rng, d, k),
        "head.b": np.zeros(k, dtype=np.float32),
        "final_ln.g": np.ones(d, dtype=np.float32),
        "final_ln.b": np.zeros(d, dtype=np.float32),
    }
    for l in range(cfg.layers):
        pre = f"l{l}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = _xavier(rng, d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + name] = np.zeros(d, dtype=np.float32)
        p[pre + "ln1.g"] = np.ones(d, dtype=np.float32)
        p[pre + "ln1.b"] = np.zeros(d, dtype=np.float32)
        p[pre + "ln2.g"] = np.ones(d, dtype=np.float32)
        p[pre + "ln2.b"] = np.zeros(d, dtype=np.float32)
        p[pre + "ff1.w"] = _xavier(rng, d, cfg.ff_dim)
        p[pre + "ff1.b"] = np.zeros(cfg.ff_dim, dtype=np.float32)
        p[pre + "ff2.w"] = _xavier(rng, cfg.ff_dim, d)
        p[pre + "ff2.b"] = np.zeros(d, dtype=np.float32)
    return {name: Tensor(arr, requires_grad=True) for name, arr in p.items()}


def _self_attention(p: dict[str, Tensor], pre: str, x: Tensor, heads: int):
    B, L, d = x.data.shape
    dh = d // heads
    q = nm.linear(x, p[pre + "wq"], p[pre + "bq"])
    k = nm.linear(x, p[pre + "wk"], p[pre + "bk"])
    v = nm.linear(x, p[pre + "wv"], p[pre + "bv"])
    q = nm.swapaxes(nm.reshape(q, (B, L, heads, dh)), 1, 2)
    k = nm.swapaxes(nm.reshape(k, (B, L, heads, dh)), 1, 2)
    v = nm.swapaxes(nm.reshape(v, (B, L, heads, dh)), 1, 2)
    scores = nm.mul(nm.matmul(q, nm.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    att = nm.softmax(scores, axis=-1)
    ctx = nm.matmul(att, v)
    ctx = nm.reshape(nm.swapaxes(ctx, 1, 2), (B, L, d))
    return nm.linear(ctx, p[pre + "wo"], p[pre + "bo"])


def member_forward(p: dict[str, Tensor], feats: np.ndarray, cfg: AttrModelConfig,
                   rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Raw scores (B, k) for a batch of feature sequences (B, L, 3)."""
    B, L, _ = feats.shape
    if L < 2:
        raise AttrModelError(f"need at least 2 states, got {L}")
    x = nm.linear(Tensor(feats), p["embed.w"], p["embed.b"])
    x = nm.add(x, sinusoidal_positions(L, cfg.embed_dim)[None, :, :].astype(x.dtype))
    cls = nm.broadcast_to(p["cls"], (B, 1, cfg.embed_dim))
    x = nm.concat([cls, x], axis=1)
    for l in range(cfg.layers):
        pre = f"l{l}."
        h = nm.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        h = _self_attention(p, pre, h, cfg.heads)
        if training:
            h = nm.dropout(h, cfg.dropout, rng, training)
        x = nm.add(x, h)
        h = nm.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = nm.linear(h, p[pre + "ff1.w"], p[pre + "ff1.b"])
        h = nm.relu(h)
        h = nm.linear(h, p[pre + "ff2.w"], p[pre + "ff2.b"])
        if training:
            h = nm.dropout(h, cfg.dropout, rng, training)
        x = nm.add(x, h)
    # layer norm acts per position, so normalizing only the summary slot
    # is identical to normalizing everything and then slicing
    summary = nm.layer_norm(x[:, 0, :], p["final_ln.g"], p["final_ln.b"])
    return nm.linear(summary, p["head.w"], p["head.b"])


def bt_probability(raw_a, raw_b):
    """P[a beats b] = exp(ra) / (exp(ra) + exp(rb)), via the stable sigmoid form."""
    d = np.asarray(raw_a, dtype=np.float64) - np.asarray(raw_b, dtype=np.float64)
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return float(out) if out.ndim == 0 else out


def bt_loss_from_raw(raw_a: Tensor, raw_b: Tensor, labels: np.ndarray) -> Tensor:
    """Pairwise logistic loss, summed over attributes, averaged over records.

    labels: (B, k, 2) with rows from {(1,0), (0,1), (0.5,0.5)}.
    """
    d = nm.sub(raw_a, raw_b)
    term = nm.add(
        nm.mul(nm.logsigmoid(d), labels[:, :, 0]),
        nm.mul(nm.logsigmoid(nm.mul(d, -1.0)), labels[:, :, 1]),
    )
    return nm.mul(nm.tmean(nm.tsum(term, axis=1)), -1.0)


def bt_loss(records: list[FeedbackRecord], segments: SegmentSet,
            params: dict[str, Tensor], cfg: AttrModelConfig,
            rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Eq-style objective for one member over a batch of feedback records."""
    if not records:
        raise AttrModelError("empty feedback batch")
    feats = features_from_states(segments.states)
    a_ids = np.array([r.seg_a for r in records])
    b_ids = np.array([r.seg_b for r in records])
    labels = np.stack([r.labels for r in records])
    raw = member_forward(params, feats[np.concatenate([a_ids, b_ids])], cfg, rng, training)
    n = len(records)
    return bt_loss_from_raw(raw[:n], raw[n:], labels)


class AttrModel:
    """Ensemble of trained members plus inference-time normalization bounds."""

    def __init__(self, cfg: AttrModelConfig, members: list[dict[str, Tensor]],
                 bounds: np.ndarray, attr_names: tuple[str, ...]):
        self.cfg = cfg
        self.members = members
        self.bounds = np.asarray(bounds, dtype=np.float32)  # (k, 2) min, max
        self.attr_names = tuple(attr_names)

    @property
    def k(self) -> int:
        return len(self.attr_names)

    def raw_from_features(self, feats: np.ndarray) -> np.ndarray:
        """Ensemble-mean raw scores for (B, L, 3) feature batches."""
        with nm.no_grad():
            acc = None
            for p in self.members:
                out = member_forward(p, feats, self.cfg).data
                acc = out if acc is None else acc + out
        return acc / len(self.members)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return np.clip((raw - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)

    def predict_from_features(self, feats: np.ndarray) -> np.ndarray:
        """Normalized strengths (B, k) for feature batches; chunked for memory."""
        outs = []
        for start in range(0, feats.shape[0], 1024):
            outs.append(self.raw_from_features(feats[start:start + 1024]))
        return self.normalize(np.concatenate(outs) if len(outs) > 1 else outs[0])

    def predict(self, traj) -> StrengthPrediction:
        """Score one trajectory of env states (any length >= 2)."""
        feats = features_from_states(traj)
        if feats.ndim != 2:
            raise AttrModelError(f"expected a single (L, {STATE_DIM}) trajectory, got {feats.shape}")
        if feats.shape[0] < 2:
            raise AttrModelError(f"need at least 2 states, got {feats.shape[0]}")
        raw = self.raw_from_features(feats[None])[0]
        return StrengthPrediction(raw=raw, normalized=self.normalize(raw))


def train_attr_model(records: list[FeedbackRecord], segments: SegmentSet,
                     cfg: AttrModelConfig, seed: int,
                     attr_names: tuple[str, ...],
                     progress: bool = False) -> tuple[AttrModel, dict]:
    """Train the ensemble; returns the model and a held-out evaluation report."""
    if len(records) < 100:
        raise AttrModelError(f"need >= 100 feedback records, got {len(records)}")
    k = records[0].labels.shape[0]
    feats = features_from_states(segments.states)

    order = np.random.default_rng([seed, 101]).permutation(len(records))
    n_holdout = int(round(cfg.holdout_fraction * len(records)))
    holdout_ids = order[:n_holdout]
    train_ids = order[n_holdout:]
    train_records = [records[i] for i in train_ids]

    a_ids = np.array([r.seg_a for r in train_records])
    b_ids = np.array([r.seg_b for r in train_records])
    labels = np.stack([r.labels for r in train_records]).astype(np.float32)
    n_train = len(train_records)

    members = []
    losses = []
    for m in range(cfg.ensembles):
        rng = np.random.default_rng([seed, m, 17])
        params = init_member_params(cfg, k, rng)
        state = AdamState(params)
        last_loss = float("nan")
        for it in range(cfg.grad_steps):
            idx = rng.integers(0, n_train, size=cfg.batch)
            batch_feats = feats[np.concatenate([a_ids[idx], b_ids[idx]])]
            raw = member_forward(params, batch_feats, cfg, rng, training=True)
            loss = bt_loss_from_raw(raw[:cfg.batch], raw[cfg.batch:], labels[idx])
            for p in params.values():
                p.grad = None
            nm.backward(loss)
            adam_step(params, {n: p.grad for n, p in params.items()}, state, cfg.optimizer)
            last_loss = float(loss.data)
            if progress and (it + 1) % 200 == 0:
                print(f"  member {m} step {it + 1}/{cfg.grad_steps} loss {last_loss:.4f}", flush=True)
        members.append(params)
        losses.append(last_loss)

    model = AttrModel(cfg, members, np.zeros((k, 2), np.float32), attr_names)
    raw_all = np.concatenate([model.raw_from_features(feats[s:s + 1024])
                              for s in range(0, feats.shape[0], 1024)])
    bounds = np.stack([raw_all.min(axis=0), raw_all.max(axis=0)], axis=1)
    if np.any(bounds[:, 1] - bounds[:, 0] < 1e-6):
        bad = [attr_names[i] for i in range(k) if bounds[i, 1] - bounds[i, 0] < 1e-6]
        raise AttrModelError(f"attribute not identifiable: degenerate raw range for {bad}")
    model.bounds = bounds.astype(np.float32)

    report = {
        "n_records": len(records),
        "n_train": n_train,
        "n_holdout": int(n_holdout),
        "final_losses": losses,
        "holdout_accuracy": evaluate_pairwise_accuracy(
            model, [records[i] for i in holdout_ids], segments),
    }
    return model, report


def evaluate_pairwise_accuracy(model: AttrModel, records: list[FeedbackRecord],
                               segments: SegmentSet) -> dict:
    """Per-attribute fraction of non-tie labels whose order the model reproduces."""
    feats = features_from_states(segments.states)
    a_ids = np.array([r.seg_a for r in records])
    b_ids = np.array([r.seg_b for r in records])
    labels = np.stack([r.labels for r in records])
    raw = np.concatenate([model.raw_from_features(feats[np.concatenate([a_ids, b_ids])][s:s + 1024])
                          for s in range(0, 2 * len(records), 1024)])
    raw_a, raw_b = raw[:len(records)], raw[len(records):]
    out = {"per_attribute": {}, "counts": {}}
    for i, name in enumerate(model.attr_names):
        decided = labels[:, i, 0] != 0.5
        if decided.sum() == 0:
            out["per_attribute"][name] = float("nan")
            out["counts"][name] = 0
            continue
        pred_a = raw_a[decided, i] > raw_b[decided, i]
        true_a = labels[decided, i, 0] == 1.0
        out["per_attribute"][name] = float((pred_a == true_a).mean())
        out["counts"][name] = int(decided.sum())
    return out


def annotate(segments: SegmentSet, model: AttrModel) -> np.ndarray:
    """Normalized strengths (n, k) for every segment, in segment order."""
    if len(segments) == 0:
        return np.zeros((0, model.k), dtype=np.float32)
    return model.predict_from_features(features_from_states(segments.states))


SCHEMA_VERSION = 1


def save_attr_model(path: str | Path, model: AttrModel, meta: dict | None = None) -> None:
    arrays = {"bounds": model.bounds}
    for m, params in enumerate(model.members):
        for name, p in params.items():
            arrays[f"m{m}.{name}"] = p.data
    full_meta = {
        "kind": "attr_model",
        "schema_version": SCHEMA_VERSION,
        "config": model.cfg.to_dict(),
        "attr_names": list(model.attr_names),
        "feature_dim": FEATURE_DIM,
    }
    if meta:
        full_meta.update(meta)
    nm.save_arrays(path, arrays, full_meta)


def load_attr_model(path: str | Path) -> tuple[AttrModel, dict]:
    arrays, meta = nm.load_arrays(path)
    if meta.get("kind") != "attr_model":
        raise AttrModelError(f"{path}: not an attribute model checkpoint")
    cfg = AttrModelConfig.from_dict(meta["config"])
    members = []
    for m in range(cfg.ensembles):
        prefix = f"m{m}."
        members.append({name[len(prefix):]: Tensor(arr, requires_grad=True)
                        for name, arr in arrays.items() if name.startswith(prefix)})
    model = AttrModel(cfg, members, arrays["bounds"], tuple(meta["attr_names"]))
    return model, meta
