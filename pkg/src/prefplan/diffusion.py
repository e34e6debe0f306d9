"""Attribute-conditioned trajectory diffusion.

The generative target is the per-step feature row (y, vx, vy, thrust,
jump), z-normalized with dataset statistics. Conditioning is a pair
(strength vector, interest mask): strengths are discretized into
per-attribute token ranges, embedded, zeroed where the mask is 0, mixed
by one self-attention layer, and injected together with the timestep
embedding into every transformer block through adaptive layer-norm
modulation. An all-zero mask is the unconditional model; no separate
null-token network exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics as nm
from .attr_model import sinusoidal_positions
from .numerics import AdamConfig, AdamState, Tensor, adam_step

FEATURE_DIM = 5  # y, vx, vy, thrust, jump
STATE_SLICE = slice(0, 3)
ACTION_SLICE = slice(3, 5)


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionConfig:
    embed_dim: int = 384
    heads: int = 6
    blocks: int = 12
    mlp_ratio: int = 4
    dropout: float = 0.1
    horizon: int = 32
    batch: int = 32
    grad_steps: int = 50_000
    vocab_per_attr: int = 100   # V in the strength discretization
    clip_slack: float = 1e-6    # delta keeping v=1 inside the last bin
    unmask_p: float = 0.75      # per-attribute keep probability during training
    timesteps: int = 200
    optimizer: AdamConfig = field(default_factory=lambda: AdamConfig(learning_rate=2e-4, weight_decay=1e-4))

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise DiffusionError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 0.0 < self.unmask_p <= 1.0:
            raise DiffusionError(f"unmask_p must be in (0, 1], got {self.unmask_p}")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim, "heads": self.heads, "blocks": self.blocks,
            "mlp_ratio": self.mlp_ratio, "dropout": self.dropout, "horizon": self.horizon,
            "batch": self.batch, "grad_steps": self.grad_steps,
            "vocab_per_attr": self.vocab_per_attr, "clip_slack": self.clip_slack,
            "unmask_p": self.unmask_p, "timesteps": self.timesteps,
            "optimizer": {
                "learning_rate": self.optimizer.learning_rate,
                "weight_decay": self.optimizer.weight_decay,
                "beta1": self.optimizer.beta1, "beta2": self.optimizer.beta2,
                "epsilon": self.optimizer.epsilon,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionConfig":
        d = dict(d)
        opt = d.pop("optimizer", None)
        cfg = cls(**d)
        if opt:
            cfg = replace(cfg, optimizer=AdamConfig(**opt))
        return cfg


class NoiseSchedule:
    """Cosine cumulative signal coefficients xi_0 = 1 > xi_1 > ... > xi_T.

    The cosine argument is truncated so xi_T lands at `tail` instead of the
    raw cosine's ~0: the x0-form reverse update divides by sqrt(xi), and a
    vanishing tail amplifies noise-prediction error by >100x at the first
    reverse step. tail stays below the 1e-3 bound on the terminal
    coefficient and keeps strict monotonicity.
    """

    def __init__(self, timesteps: int = 200, tail: float = 8e-4):
        if not 0.0 < tail < 1e-3:
            raise DiffusionError(f"tail must be in (0, 1e-3), got {tail}")
        f0 = math.cos(0.008 / 1.008 * math.pi / 2.0) ** 2
        # scale s so that the cumulative coefficient at t = T equals tail
        s = (2.0 / math.pi) * math.acos(math.sqrt(tail * f0)) * 1.008 - 0.008
        t = np.arange(timesteps + 1, dtype=np.float64)
        f = np.cos(((s * t / timesteps) + 0.008) / 1.008 * math.pi / 2.0) ** 2
        xi = f / f[0]
        xi[0] = 1.0
        if not np.all(np.diff(xi) < 0):
            raise DiffusionError("schedule is not strictly decreasing")
        if xi[-1] >= 1e-3:
            raise DiffusionError(f"terminal coefficient too large: {xi[-1]}")
        self.T = timesteps
        self.xi = xi.astype(np.float32)

    def signal(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise DiffusionError(f"timestep out of range [0, {self.T}]")
        return self.xi[t]


def discretize(v: np.ndarray, V: int, delta: float = 1e-6) -> np.ndarray:
    """Strength vector(s) in [0,1]^k -> integer tokens; attribute i owns bins [i*V, (i+1)*V)."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise DiffusionError(f"strengths must lie in [0, 1], got range "
                             f"[{v.min():.4f}, {v.max():.4f}]")
    k = v.shape[-1]
    bins = np.floor(np.clip(v, 0.0, 1.0 - delta) * V).astype(np.int64)
    return bins + np.arange(k, dtype=np.int64) * V


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """q(x_t | x_0) sample: sqrt(xi_t) x0 + sqrt(1 - xi_t) eps."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise DiffusionError(f"t must be in [1, {schedule.T}]")
    xi = schedule.signal(t).astype(x0.dtype)
    while xi.ndim < x0.ndim:
        xi = xi[..., None]
    return np.sqrt(xi) * x0 + np.sqrt(1.0 - xi) * eps


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """(1+w) eps_c - w eps_u, associated as eps_c + w (eps_c - eps_u) so the
    eps_c == eps_u case is exact in floating point."""
    if eps_cond.shape != eps_uncond.shape:
        raise DiffusionError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    w = eps_cond.dtype.type(w)
    return eps_cond + w * (eps_cond - eps_uncond)


# ---------------------------------------------------------------------------
# parameters


def _xavier(rng, fan_in, fan_out):
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(np.float32)


def _strength_token_init(rng, k: int, V: int, d: int) -> np.ndarray:
    """Per-attribute offset + smooth embedding over the bin index + jitter."""
    bins = sinusoidal_positions(V, d) * 0.25
    table = np.empty((k * V, d), dtype=np.float32)
    for i in range(k):
        offset = (rng.standard_normal(d) * 0.2).astype(np.float32)
        jitter = (rng.standard_normal((V, d)) * 0.03).astype(np.float32)
        table[i * V:(i + 1) * V] = bins + offset + jitter
    return table


def init_diffusion_params(cfg: DiffusionConfig, k: int, rng: np.random.Generator,
                          feature_dim: int = FEATURE_DIM) -> dict[str, Tensor]:
    d = cfg.embed_dim
    p: dict[str, np.ndarray] = {
        "tok.w": _xavier(rng, feature_dim, d),
        "tok.b": np.zeros(d, dtype=np.float32),
        "temb.w1": _xavier(rng, d, d),
        "temb.b1": np.zeros(d, dtype=np.float32),
        "temb.w2": _xavier(rng, d, d),
        "temb.b2": np.zeros(d, dtype=np.float32),
        # condition encoder: per-attribute token table + one attention layer;
        # initialized large enough that the condition is visible next to the
        # timestep embedding, and smooth over the bin axis so sparsely
        # visited strength bins inherit their neighbors' behavior
        "cond.table": _strength_token_init(rng, k, cfg.vocab_per_attr, d),
        "cond.wq": _xavier(rng, d, d), "cond.bq": np.zeros(d, dtype=np.float32),
        "cond.wk": _xavier(rng, d, d), "cond.bk": np.zeros(d, dtype=np.float32),
        "cond.wv": _xavier(rng, d, d), "cond.bv": np.zeros(d, dtype=np.float32),
        "cond.wo": _xavier(rng, d, d), "cond.bo": np.zeros(d, dtype=np.float32),
        "cond.proj.w": _xavier(rng, d, d),
        "cond.proj.b": np.zeros(d, dtype=np.float32),
        # zero-init so the network starts as identity-with-zero-output
        "final.mod.w": np.zeros((d, 2 * d), dtype=np.float32),
        "final.mod.b": np.zeros(2 * d, dtype=np.float32),
        "final.out.w": np.zeros((d, feature_dim), dtype=np.float32),
        "final.out.b": np.zeros(feature_dim, dtype=np.float32),
    }
    for b in range(cfg.blocks):
        pre = f"b{b}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = _xavier(rng, d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + name] = np.zeros(d, dtype=np.float32)
        p[pre + "mlp1.w"] = _xavier(rng, d, cfg.mlp_ratio * d)
        p[pre + "mlp1.b"] = np.zeros(cfg.mlp_ratio * d, dtype=np.float32)
        p[pre + "mlp2.w"] = _xavier(rng, cfg.mlp_ratio * d, d)
        p[pre + "mlp2.b"] = np.zeros(d, dtype=np.float32)
        p[pre + "mod.w"] = np.zeros((d, 6 * d), dtype=np.float32)
        p[pre + "mod.b"] = np.zeros(6 * d, dtype=np.float32)
    return {name: Tensor(arr, requires_grad=True) for name, arr in p.items()}


def _timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None].astype(np.float64) * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def _attention(p, pre: str, x: Tensor, heads: int):
    B, L, d = x.data.shape
    dh = d // heads
    q = nm.linear(x, p[pre + "wq"], p[pre + "bq"])
    k = nm.linear(x, p[pre + "wk"], p[pre + "bk"])
    v = nm.linear(x, p[pre + "wv"], p[pre + "bv"])
    q = nm.swapaxes(nm.reshape(q, (B, L, heads, dh)), 1, 2)
    k = nm.swapaxes(nm.reshape(k, (B, L, heads, dh)), 1, 2)
    v = nm.swapaxes(nm.reshape(v, (B, L, heads, dh)), 1, 2)
    att = nm.softmax(nm.mul(nm.matmul(q, nm.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh)), axis=-1)
    ctx = nm.reshape(nm.swapaxes(nm.matmul(att, v), 1, 2), (B, L, d))
    return nm.linear(ctx, p[pre + "wo"], p[pre + "bo"])


def encode_condition(p: dict[str, Tensor], tokens: np.ndarray, mask: np.ndarray,
                     cfg: DiffusionConfig) -> Tensor:
    """Masked attribute embeddings -> one self-attention mix -> mean -> projection.

    Zeroing the embedding (not the value fed to it) is what makes masked
    attributes exactly invisible: a strength of 0 still has meaning, but a
    masked slot contributes only bias terms, independent of its token.
    """
    emb = nm.embedding(p["cond.table"], np.asarray(tokens, dtype=np.int64))  # (B, k, D)
    emb = nm.mul(emb, np.asarray(mask, dtype=np.float32)[:, :, None])
    mixed = _attention(p, "cond.", emb, cfg.heads)
    pooled = nm.tmean(mixed, axis=1)
    return nm.linear(pooled, p["cond.proj.w"], p["cond.proj.b"])


def predict_noise(p: dict[str, Tensor], x_t: np.ndarray, t: np.ndarray,
                  tokens: np.ndarray | None, mask: np.ndarray | None,
                  cfg: DiffusionConfig, rng: np.random.Generator | None = None,
                  training: bool = False) -> Tensor:
    """Noise estimate for (B, H, d) inputs; tokens/mask None means unconditional."""
    B, H, d_in = x_t.shape
    k_total = p["cond.table"].data.shape[0]
    if tokens is None or mask is None:
        k = k_total // cfg.vocab_per_attr
        tokens = np.zeros((B, k), dtype=np.int64)
        mask = np.zeros((B, k), dtype=np.float32)

    x = nm.linear(Tensor(np.ascontiguousarray(x_t, dtype=np.float32)), p["tok.w"], p["tok.b"])
    x = nm.add(x, sinusoidal_positions(H, cfg.embed_dim)[None, :, :])

    temb = nm.linear(Tensor(_timestep_embedding(np.asarray(t), cfg.embed_dim)),
                     p["temb.w1"], p["temb.b1"])
    temb = nm.linear(nm.silu(temb), p["temb.w2"], p["temb.b2"])
    c = nm.silu(nm.add(temb, encode_condition(p, tokens, mask, cfg)))

    D = cfg.embed_dim
    for b in range(cfg.blocks):
        pre = f"b{b}."
        mod = nm.linear(c, p[pre + "mod.w"], p[pre + "mod.b"])
        sh_a = nm.reshape(mod[:, 0 * D:1 * D], (B, 1, D))
        sc_a = nm.reshape(mod[:, 1 * D:2 * D], (B, 1, D))
        g_a = nm.reshape(mod[:, 2 * D:3 * D], (B, 1, D))
        sh_m = nm.reshape(mod[:, 3 * D:4 * D], (B, 1, D))
        sc_m = nm.reshape(mod[:, 4 * D:5 * D], (B, 1, D))
        g_m = nm.reshape(mod[:, 5 * D:6 * D], (B, 1, D))

        h = nm.layer_norm(x)
        h = nm.add(nm.mul(h, nm.add(sc_a, 1.0)), sh_a)
        h = _attention(p, pre, h, cfg.heads)
        if training and cfg.dropout > 0:
            h = nm.dropout(h, cfg.dropout, rng, training)
        x = nm.add(x, nm.mul(h, g_a))

        h = nm.layer_norm(x)
        h = nm.add(nm.mul(h, nm.add(sc_m, 1.0)), sh_m)
        h = nm.linear(h, p[pre + "mlp1.w"], p[pre + "mlp1.b"])
        h = nm.relu(h)
        h = nm.linear(h, p[pre + "mlp2.w"], p[pre + "mlp2.b"])
        if training and cfg.dropout > 0:
            h = nm.dropout(h, cfg.dropout, rng, training)
        x = nm.add(x, nm.mul(h, g_m))

    mod = nm.linear(c, p["final.mod.w"], p["final.mod.b"])
    sh = nm.reshape(mod[:, :D], (B, 1, D))
    sc = nm.reshape(mod[:, D:], (B, 1, D))
    h = nm.layer_norm(x)
    h = nm.add(nm.mul(h, nm.add(sc, 1.0)), sh)
    return nm.linear(h, p["final.out.w"], p["final.out.b"])


def diffusion_loss(p: dict[str, Tensor], x0: np.ndarray, strengths: np.ndarray,
                   schedule: NoiseSchedule, cfg: DiffusionConfig,
                   rng: np.random.Generator, training: bool = True,
                   predictor=None) -> Tensor:
    """Noise-prediction MSE over a batch of normalized trajectories.

    Per item: t ~ U{1..T}, eps ~ N(0, I), mask bits ~ Bernoulli(unmask_p).
    Normalized as mean over batch and steps, summed over channels, so a
    zero predictor scores exactly the channel count.
    """
    if x0.shape[0] == 0:
        raise DiffusionError("empty batch")
    B = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(x0.shape, dtype=np.float32)
    mask = (rng.random((B, strengths.shape[1]), dtype=np.float32) < cfg.unmask_p).astype(np.float32)
    tokens = discretize(strengths, cfg.vocab_per_attr, cfg.clip_slack)
    x_t = forward_noise(x0.astype(np.float32), t, eps, schedule)
    if predictor is None:
        est = predict_noise(p, x_t, t, tokens, mask, cfg, rng, training)
    else:
        est = predictor(x_t, t, tokens, mask)
    err = nm.sub(est, eps) if isinstance(est, Tensor) else Tensor(est - eps)
    return nm.tmean(nm.tsum(nm.square(err), axis=2))


# ---------------------------------------------------------------------------
# trained-model bundle


def trajectory_features(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Stack (y, vx, vy) state channels with actions into (…, H, 5) rows."""
    return np.concatenate([states[..., 1:4], actions], axis=-1).astype(np.float32)


class DiffusionModel:
    def __init__(self, cfg: DiffusionConfig, params: dict[str, Tensor],
                 schedule: NoiseSchedule, norm_mean: np.ndarray, norm_std: np.ndarray,
                 attr_names: tuple[str, ...]):
        self.cfg = cfg
        self.params = params
        self.schedule = schedule
        self.norm_mean = norm_mean.astype(np.float32)
        self.norm_std = norm_std.astype(np.float32)
        self.attr_names = tuple(attr_names)

    @property
    def k(self) -> int:
        return len(self.attr_names)

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.norm_mean) / self.norm_std

    def denormalize(self, feats: np.ndarray) -> np.ndarray:
        return feats * self.norm_std + self.norm_mean

    def predict_noise_np(self, x_t: np.ndarray, t: np.ndarray,
                         tokens: np.ndarray | None, mask: np.ndarray | None) -> np.ndarray:
        with nm.no_grad():
            return predict_noise(self.params, x_t, t, tokens, mask, self.cfg).data


def train_diffusion(feats: np.ndarray, strengths: np.ndarray, cfg: DiffusionConfig,
                    seed: int, attr_names: tuple[str, ...],
                    progress: bool = False) -> tuple[DiffusionModel, dict]:
    """Fit the noise predictor on annotated trajectory windows (raw features)."""
    if feats.ndim != 3 or feats.shape[0] < cfg.batch:
        raise DiffusionError(f"need at least one batch of trajectories, got {feats.shape}")
    mean = feats.reshape(-1, feats.shape[-1]).mean(axis=0)
    std = feats.reshape(-1, feats.shape[-1]).std(axis=0)
    std = np.maximum(std, 1e-6)
    if feats.shape[-1] == FEATURE_DIM:
        # action channels are bounded by definition; scripted data keeps their
        # empirical std tiny (thrust ~0.05), which would turn a full-throttle
        # action into a 20-sigma event the sampler can never emit. Normalize
        # them by their defined ranges instead: thrust [-1,1], jump [0,1].
        mean[3], std[3] = 0.0, 1.0
        mean[4], std[4] = 0.5, 0.5
    x0 = ((feats - mean) / std).astype(np.float32)

    schedule = NoiseSchedule(cfg.timesteps)
    rng = np.random.default_rng([seed, 23])
    params = init_diffusion_params(cfg, strengths.shape[1], rng, feature_dim=feats.shape[-1])
    state = AdamState(params)
    loss_trace = []
    for it in range(cfg.grad_steps):
        idx = rng.integers(0, x0.shape[0], size=cfg.batch)
        loss = diffusion_loss(params, x0[idx], strengths[idx], schedule, cfg, rng)
        for p in params.values():
            p.grad = None
        nm.backward(loss)
        adam_step(params, {n: p.grad for n, p in params.items()}, state, cfg.optimizer)
        if (it + 1) % 50 == 0 or it == 0:
            loss_trace.append((it + 1, float(loss.data)))
        if progress and (it + 1) % 500 == 0:
            print(f"  diffusion step {it + 1}/{cfg.grad_steps} loss {float(loss.data):.4f}", flush=True)

    model = DiffusionModel(cfg, params, schedule, mean, std, attr_names)
    return model, {"loss_trace": loss_trace, "n_trajectories": int(feats.shape[0])}


SCHEMA_VERSION = 1


def save_diffusion_model(path: str | Path, model: DiffusionModel, meta: dict | None = None) -> None:
    arrays = {"norm_mean": model.norm_mean, "norm_std": model.norm_std}
    for name, p in model.params.items():
        arrays["p." + name] = p.data
    full_meta = {
        "kind": "diffusion_model",
        "schema_version": SCHEMA_VERSION,
        "config": model.cfg.to_dict(),
        "attr_names": list(model.attr_names),
        "feature_dim": FEATURE_DIM,
    }
    if meta:
        full_meta.update(meta)
    nm.save_arrays(path, arrays, full_meta)


def load_diffusion_model(path: str | Path) -> tuple[DiffusionModel, dict]:
    arrays, meta = nm.load_arrays(path)
    if meta.get("kind") != "diffusion_model":
        raise DiffusionError(f"{path}: not a diffusion checkpoint")
    cfg = DiffusionConfig.from_dict(meta["config"])
    params = {name[2:]: Tensor(arr, requires_grad=True)
              for name, arr in arrays.items() if name.startswith("p.")}
    model = DiffusionModel(cfg, params, NoiseSchedule(cfg.timesteps),
                           arrays["norm_mean"], arrays["norm_std"], tuple(meta["attr_names"]))
    return model, meta
