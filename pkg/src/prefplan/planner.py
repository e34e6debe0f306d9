"""Receding-horizon planning with the trained diffusion model.

Each decision step denoises N candidate trajectory windows through a short
DDIM subsequence, steering with classifier-free guidance toward the active
preference, pinning the current state into slot 0 at every iteration, then
executes the first action of the candidate whose predicted strengths sit
closest to the target (masked squared distance). The preference lives in
an atomically swappable cell so it can change between any two env steps.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .attr_model import AttrModel
from .diffusion import (
    ACTION_SLICE,
    STATE_SLICE,
    DiffusionModel,
    NoiseSchedule,
    cfg_combine,
    discretize,
)
from .env import Action, BouncerConfig, State, step as env_step


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PreferenceQuery:
    v_targ: np.ndarray  # (k,) targets in [0, 1]
    mask: np.ndarray    # (k,) binary interest flags

    def __post_init__(self):
        v = np.asarray(self.v_targ, dtype=np.float32)
        m = np.asarray(self.mask, dtype=np.float32)
        if v.shape != m.shape:
            raise PlannerError(f"target/mask shape mismatch {v.shape} vs {m.shape}")
        if np.any(v < 0) or np.any(v > 1):
            raise PlannerError(f"targets must lie in [0, 1], got {v}")
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise PlannerError(f"mask must be binary, got {m}")
        object.__setattr__(self, "v_targ", v)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True)
class PlanCandidate:
    trajectory: np.ndarray  # (H, 5) denormalized feature rows
    score: float            # masked squared distance to the target strengths


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 10        # DDIM subsequence length S
    candidates: int = 8    # N parallel noise seeds
    guidance: float = 1.5  # CFG scale w
    sigma: float = 0.0     # per-step noise scale (0 = deterministic DDIM)
    plan_stride: int = 1   # env steps executed per planning call
    # "channel": execute the plan's generated action channels;
    # "inverse_dynamics": derive the action that best realizes the plan's
    # first state transition under the known dynamics
    action_source: str = "channel"

    def __post_init__(self):
        if self.steps < 1:
            raise PlannerError("need at least one DDIM step")
        if self.candidates < 1:
            raise PlannerError("need at least one candidate")
        if self.guidance < 0:
            raise PlannerError("guidance scale must be non-negative")
        if self.action_source not in ("channel", "inverse_dynamics"):
            raise PlannerError(f"unknown action source {self.action_source!r}")

    def to_dict(self) -> dict:
        return {"steps": self.steps, "candidates": self.candidates,
                "guidance": self.guidance, "sigma": self.sigma,
                "plan_stride": self.plan_stride, "action_source": self.action_source}


@dataclass
class PipelineModels:
    attr: AttrModel
    diffusion: DiffusionModel


def ddim_subsequence(S: int, T: int) -> np.ndarray:
    """kappa: 0 plus S evenly spaced timesteps ending at T."""
    if not 1 <= S <= T:
        raise PlannerError(f"S must be in [1, {T}], got {S}")
    kappa = np.unique(np.round(np.linspace(0, T, S + 1)).astype(np.int64))
    if len(kappa) != S + 1:
        raise PlannerError(f"degenerate subsequence for S={S}, T={T}")
    return kappa


def ddim_step(x: np.ndarray, eps: np.ndarray, t_cur: int, t_prev: int,
              schedule: NoiseSchedule, sigma: float = 0.0,
              noise: np.ndarray | None = None) -> np.ndarray:
    """One reverse jump x_{t_cur} -> x_{t_prev} given a noise estimate."""
    if t_prev >= t_cur:
        raise PlannerError(f"t_prev {t_prev} must be below t_cur {t_cur}")
    xi_cur = float(schedule.signal(t_cur))
    xi_prev = float(schedule.signal(t_prev))
    if sigma * sigma > 1.0 - xi_prev + 1e-12:
        raise PlannerError(f"sigma^2 {sigma**2:.3e} exceeds 1 - xi_prev {1 - xi_prev:.3e}")
    dt = x.dtype.type
    x0_hat = (x - dt(np.sqrt(1.0 - xi_cur)) * eps) / dt(np.sqrt(xi_cur))
    out = dt(np.sqrt(xi_prev)) * x0_hat + dt(np.sqrt(max(1.0 - xi_prev - sigma * sigma, 0.0))) * eps
    if sigma > 0.0:
        if noise is None:
            raise PlannerError("sigma > 0 requires a noise sample")
        out = out + dt(sigma) * noise
    return out


def _normalized_state_features(dm: DiffusionModel, states: np.ndarray) -> np.ndarray:
    """Env states (B, 5) -> normalized (y, vx, vy) rows matching feature channels."""
    feats = states[:, 1:4].astype(np.float32)
    return (feats - dm.norm_mean[STATE_SLICE]) / dm.norm_std[STATE_SLICE]


def inverse_dynamics_actions(states: np.ndarray, next_feats: np.ndarray,
                             env_cfg: BouncerConfig) -> np.ndarray:
    """Actions that best realize the planned first transition.

    states: (B, 5) current env states; next_feats: (B, 3) the plan's slot-1
    (y, vx, vy). The dynamics invert exactly: thrust from the velocity
    delta, jump from the commanded ascent when grounded. Infeasible deltas
    saturate, turning a too-aggressive plan into full effort toward it.
    """
    dvx = next_feats[:, 1] - states[:, 2]
    thrust = np.clip(dvx / (env_cfg.thrust_gain * env_cfg.dt), -1.0, 1.0)
    grounded = states[:, 4] > 0.5
    jump = np.where(grounded & (next_feats[:, 2] > 0.0),
                    np.clip(next_feats[:, 2] / env_cfg.impulse_gain, 0.0, 1.0), 0.0)
    return np.stack([thrust, jump], axis=1).astype(np.float32)


def plan_batch(models: PipelineModels, states: np.ndarray, v_targ: np.ndarray,
               mask: np.ndarray, sampler: SamplerConfig,
               rng: np.random.Generator,
               env_cfg: BouncerConfig = BouncerConfig()) -> dict:
    """Plan for B independent contexts at once (the planner's vectorized core).

    states: (B, 5) env-state rows; v_targ, mask: (B, k).
    Returns actions (B, 2), chosen trajectories (B, H, 5), scores (B,),
    and the full candidate set (B, N, H, 5).
    """
    dm = models.diffusion
    H, d = dm.cfg.horizon, dm.norm_mean.shape[0]
    B = states.shape[0]
    N = sampler.candidates
    kappa = ddim_subsequence(sampler.steps, dm.schedule.T)

    inpaint = np.repeat(_normalized_state_features(dm, states), N, axis=0)  # (BN, 3)
    tokens = np.repeat(discretize(v_targ, dm.cfg.vocab_per_attr, dm.cfg.clip_slack), N, axis=0)
    cond_mask = np.repeat(mask.astype(np.float32), N, axis=0)
    unconditional = not cond_mask.any()

    x = rng.standard_normal((B * N, H, d), dtype=np.float32)
    x[:, 0, STATE_SLICE] = inpaint
    for i in range(sampler.steps, 0, -1):
        t_cur, t_prev = int(kappa[i]), int(kappa[i - 1])
        t_arr = np.full(B * N, t_cur, dtype=np.int64)
        if unconditional:
            # conditional and unconditional branches coincide bit-for-bit
            eps = dm.predict_noise_np(x, t_arr, tokens, cond_mask)
        else:
            stacked = np.concatenate([x, x], axis=0)
            t2 = np.concatenate([t_arr, t_arr])
            tok2 = np.concatenate([tokens, tokens], axis=0)
            m2 = np.concatenate([cond_mask, np.zeros_like(cond_mask)], axis=0)
            both = dm.predict_noise_np(stacked, t2, tok2, m2)
            eps = cfg_combine(both[:B * N], both[B * N:], sampler.guidance)
        noise = rng.standard_normal(x.shape, dtype=np.float32) if sampler.sigma > 0 else None
        x = ddim_step(x, eps, t_cur, t_prev, dm.schedule, sampler.sigma, noise)
        x[:, 0, STATE_SLICE] = inpaint

    finite = np.isfinite(x).all(axis=(1, 2)).reshape(B, N)
    if not finite.any(axis=1).all():
        bad = int(np.where(~finite.any(axis=1))[0][0])
        raise PlannerError(f"all candidates diverged for context {bad}")

    trajs = dm.denormalize(x).reshape(B, N, H, d)
    # re-stamp the raw state slice so candidates start at the current state
    # bit-for-bit, free of the normalize/denormalize round-trip
    trajs[:, :, 0, STATE_SLICE] = states[:, None, 1:4]
    if unconditional:
        # J is identically zero under an all-zero mask; ties break to index 0
        scores = np.zeros((B, N), dtype=np.float32)
    else:
        strengths = models.attr.predict_from_features(
            np.ascontiguousarray(x.reshape(B * N, H, d)[:, :, STATE_SLICE] * dm.norm_std[STATE_SLICE]
                                 + dm.norm_mean[STATE_SLICE]))
        diff = (np.repeat(v_targ, N, axis=0) - strengths) * cond_mask
        scores = (diff * diff).sum(axis=1).reshape(B, N).astype(np.float32)
    scores = np.where(finite, scores, np.inf).astype(np.float32)
    best = scores.argmin(axis=1)

    rows = np.arange(B)
    chosen = trajs[rows, best]
    if sampler.action_source == "inverse_dynamics":
        actions = inverse_dynamics_actions(states, chosen[:, 1, STATE_SLICE], env_cfg)
    else:
        actions = chosen[:, 0, ACTION_SLICE].copy()
    return {
        "actions": actions,
        "chosen": chosen,
        "scores": scores[rows, best],
        "candidates": trajs,
        "candidate_scores": scores,
    }


def score_trajectories(trajs: np.ndarray, pref: PreferenceQuery, attr_model: AttrModel) -> np.ndarray:
    """Masked squared distance J for (N, H, 5) denormalized trajectories."""
    strengths = attr_model.predict_from_features(np.ascontiguousarray(trajs[:, :, STATE_SLICE]))
    diff = (pref.v_targ[None, :] - strengths) * pref.mask[None, :]
    return (diff * diff).sum(axis=1)


def select(candidates: list[PlanCandidate]) -> PlanCandidate:
    """Lowest score wins; ties go to the earliest candidate."""
    if not candidates:
        raise PlannerError("no candidates to select from")
    best = min(range(len(candidates)), key=lambda i: candidates[i].score)
    return candidates[best]


def generate_candidates(state: State, pref: PreferenceQuery, models: PipelineModels,
                        sampler: SamplerConfig, seed: int) -> list[PlanCandidate]:
    """Sample, guide, and score N candidates for one state (seed-deterministic)."""
    rng = np.random.default_rng([seed, 31])
    out = plan_batch(models, state.as_array()[None], pref.v_targ[None], pref.mask[None],
                     sampler, rng)
    trajs = out["candidates"][0]
    scores = out["candidate_scores"][0]
    return [PlanCandidate(trajectory=trajs[i], score=float(scores[i]))
            for i in range(trajs.shape[0])]


class PreferenceCell:
    """Atomically swappable preference shared between the planner and writers."""

    def __init__(self, query: PreferenceQuery):
        self._lock = threading.Lock()
        self._query = query

    def get(self) -> PreferenceQuery:
        with self._lock:
            return self._query

    def set(self, query: PreferenceQuery) -> None:
        if not isinstance(query, PreferenceQuery):
            raise PlannerError("preference cell holds PreferenceQuery values")
        with self._lock:
            self._query = query


@dataclass
class RolloutResult:
    states: np.ndarray       # (T+1, 5) visited states, including the start
    actions: np.ndarray      # (T, 2)
    diagnostics: list[dict] = field(default_factory=list)


def rollout(models: PipelineModels, pref_source: PreferenceCell, episode_len: int,
            sampler: SamplerConfig, seed: int, s0: State | None = None,
            env_cfg: BouncerConfig = BouncerConfig(),
            on_step=None) -> RolloutResult:
    """Receding-horizon episode: read preference, plan, execute, log, repeat.

    The preference is re-read from the cell before every planning call, so a
    swap between env steps takes effect at the very next step. on_step(diag,
    state) fires after each executed action; raising StopIteration inside it
    ends the episode early with a partial log.
    """
    rng = np.random.default_rng([seed, 41])
    s = s0 if s0 is not None else State(0.0, 0.0, 0.0, 0.0, True)
    H = models.diffusion.cfg.horizon
    states = [s.as_array()]
    actions = []
    diags = []
    plan = None
    plan_age = 0
    for t in range(episode_len):
        pref = pref_source.get()
        if plan is None or plan_age >= sampler.plan_stride:
            out = plan_batch(models, s.as_array()[None], pref.v_targ[None], pref.mask[None],
                             sampler, rng, env_cfg)
            plan = out
            plan_age = 0
        row = plan["chosen"][0]
        if sampler.action_source == "inverse_dynamics":
            nxt = row[min(plan_age + 1, H - 1), STATE_SLICE]
            arr = inverse_dynamics_actions(s.as_array()[None], nxt[None], env_cfg)[0]
            a = Action(thrust=float(arr[0]), jump=float(arr[1]))
        else:
            a = Action(thrust=float(row[plan_age, ACTION_SLICE][0]),
                       jump=float(row[plan_age, ACTION_SLICE][1]))
        s = env_step(s, a, env_cfg)
        states.append(s.as_array())
        actions.append((a.thrust, a.jump))
        plan_age += 1

        window = np.asarray(states[-(H + 1):], dtype=np.float32)
        achieved = models.attr.predict_from_features(
            np.ascontiguousarray(window[None, :, 1:4]))[0]
        diag = {
            "step": t,
            "v_targ": pref.v_targ.tolist(),
            "mask": pref.mask.astype(int).tolist(),
            "score": float(plan["scores"][0]),
            "achieved": achieved.tolist(),
            "action": [a.thrust, a.jump],
        }
        diags.append(diag)
        if on_step is not None:
            try:
                on_step(diag, s)
            except StopIteration:
                break
    return RolloutResult(states=np.asarray(states, dtype=np.float32),
                         actions=np.asarray(actions, dtype=np.float32),
                         diagnostics=diags)


def measure_plan_latency(models: PipelineModels, sampler: SamplerConfig,
                         n_calls: int = 20, seed: int = 0) -> float:
    """Median seconds per planning call on a single context."""
    rng = np.random.default_rng(seed)
    s = State(0.0, 0.0, 0.0, 0.0, True).as_array()[None]
    k = models.attr.k
    v = np.full((1, k), 0.5, np.float32)
    m = np.ones((1, k), np.float32)
    times = []
    for _ in range(n_calls):
        t0 = time.perf_counter()
        plan_batch(models, s, v, m, sampler, rng)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def write_diagnostics(path, diagnostics: list[dict]) -> None:
    """Line-delimited rollout log with a leading header record."""
    import json
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"v": 1, "kind": "rollout_diagnostics", "n": len(diagnostics)}) + "\n")
        for d in diagnostics:
            f.write(json.dumps(d) + "\n")
