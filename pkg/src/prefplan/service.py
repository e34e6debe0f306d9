"""Live steering endpoint.

One websocket connection = one rollout session. A planner thread steps the
environment and pushes frame messages through a bounded queue (slow
clients apply backpressure instead of losing frames); control messages
land between planning steps: preference swaps, NL instructions (answered
with an ack), pause/resume, and reset. Message schemas:

  frame   {v:1, type:"frame", step, state:{x,y,vx,vy}, v_targ:[k],
           mask:[k], achieved:[k], score}
  ack     {v:1, type:"ack", instruction, attr, dir, similarity, v_targ, mask}
  error   {v:1, type:"error", reason}
  control {v:1, type:"set_preference"|"instruction"|"pause"|"resume"|"reset", ...}
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .attr_model import features_from_states
from .config import PipelineConfig
from .env import Action, State, step as env_step
from .nl import CorpusEntry, NlError, apply_to_query, match
from .planner import PipelineModels, PlannerError, PreferenceCell, PreferenceQuery, plan_batch


class Session:
    """Planner loop state for one connection."""

    def __init__(self, models: PipelineModels, cfg: PipelineConfig,
                 corpus: list[CorpusEntry], session_seed: int = 0):
        self.models = models
        self.cfg = cfg
        self.corpus = corpus
        k = models.attr.k
        self.cell = PreferenceCell(PreferenceQuery(np.full(k, 0.5, np.float32),
                                                   np.zeros(k, np.float32)))
        self.outbox: queue.Queue = queue.Queue(maxsize=16)
        self.closed = threading.Event()
        self.running = threading.Event()
        self.running.set()
        self.reset_requested = threading.Event()
        self.rng = np.random.default_rng([cfg.seed, session_seed, 97])
        self.H = models.diffusion.cfg.horizon
        self.thread = threading.Thread(target=self._loop, daemon=True)

    def start(self):
        self.thread.start()

    def stop(self):
        self.closed.set()
        self.running.set()

    def _emit(self, message: dict):
        while not self.closed.is_set():
            try:
                self.outbox.put(message, timeout=0.2)
                return
            except queue.Full:
                continue

    def _loop(self):
        s = State(0.0, 0.0, 0.0, 0.0, True)
        trail = [s.as_array()]
        step_idx = 0
        while not self.closed.is_set():
            if not self.running.is_set():
                self.running.wait(timeout=0.2)
                continue
            if self.reset_requested.is_set():
                self.reset_requested.clear()
                s = State(0.0, 0.0, 0.0, 0.0, True)
                trail = [s.as_array()]
            pref = self.cell.get()
            try:
                out = plan_batch(self.models, s.as_array()[None], pref.v_targ[None],
                                 pref.mask[None], self.cfg.sampler, self.rng, self.cfg.env)
            except PlannerError as e:
                self._emit({"v": 1, "type": "error", "reason": f"planning failed: {e}"})
                continue
            a = Action(float(out["actions"][0, 0]), float(out["actions"][0, 1]))
            s = env_step(s, a, self.cfg.env)
            trail.append(s.as_array())
            if len(trail) > self.H + 1:
                trail.pop(0)
            achieved = self.models.attr.predict_from_features(
                features_from_states(np.asarray(trail, np.float32)[None]))[0]
            self._emit({
                "v": 1,
                "type": "frame",
                "step": step_idx,
                "state": {"x": s.x, "y": s.y, "vx": s.vx, "vy": s.vy},
                "v_targ": [float(x) for x in pref.v_targ],
                "mask": [int(x) for x in pref.mask],
                "achieved": [float(x) for x in achieved],
                "score": float(out["scores"][0]),
            })
            step_idx += 1
            if step_idx >= self.cfg.service.episode_len:
                break

    def handle_control(self, raw: str):
        """Parse and apply one control message; malformed input yields an
        error message but keeps the session alive."""
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as e:
            self._emit({"v": 1, "type": "error", "reason": f"not valid JSON: {e}"})
            return
        kind = msg.get("type")
        try:
            if kind == "set_preference":
                query = PreferenceQuery(np.asarray(msg["v_targ"], np.float32),
                                        np.asarray(msg["mask"], np.float32))
                self.cell.set(query)
            elif kind == "instruction":
                self._handle_instruction(str(msg["text"]))
            elif kind == "pause":
                self.running.clear()
            elif kind == "resume":
                self.running.set()
            elif kind == "reset":
                self.reset_requested.set()
            else:
                self._emit({"v": 1, "type": "error", "reason": f"unknown control type {kind!r}"})
        except (KeyError, TypeError, ValueError, PlannerError, NlError) as e:
            self._emit({"v": 1, "type": "error", "reason": f"bad {kind} message: {e}"})

    def _handle_instruction(self, text: str):
        result = match(text, self.corpus, self.cfg.nl.similarity_threshold)
        pref = self.cell.get()
        if result.has_intent:
            attr_index = self.models.attr.attr_names.index(result.attr)
            v, m = apply_to_query(pref.v_targ, pref.mask, attr_index, result.direction)
            pref = PreferenceQuery(v, m)
            self.cell.set(pref)
        self._emit({
            "v": 1,
            "type": "ack",
            "instruction": text,
            "attr": result.attr,
            "dir": result.direction,
            "similarity": result.similarity,
            "v_targ": [float(x) for x in pref.v_targ],
            "mask": [int(x) for x in pref.mask],
        })


def create_app(models: PipelineModels, cfg: PipelineConfig,
               corpus: list[CorpusEntry]) -> FastAPI:
    app = FastAPI(title="prefplan steering service")
    counter = {"sessions": 0}

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "attrs": list(models.attr.attr_names)}

    @app.get("/meta")
    async def meta():
        return {
            "v": 1,
            "attrs": list(models.attr.attr_names),
            "horizon": models.diffusion.cfg.horizon,
            "sampler": cfg.sampler.to_dict(),
        }

    @app.websocket("/ws")
    async def ws(websocket: WebSocket):
        await websocket.accept()
        counter["sessions"] += 1
        session = Session(models, cfg, corpus, session_seed=counter["sessions"])
        session.start()

        async def pump():
            # poll with a timeout so this task can exit once the session
            # closes instead of pinning a worker thread on queue.get
            while not session.closed.is_set():
                try:
                    frame = await asyncio.to_thread(session.outbox.get, True, 0.3)
                except queue.Empty:
                    continue
                await websocket.send_text(json.dumps(frame))

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                raw = await websocket.receive_text()
                session.handle_control(raw)
        except WebSocketDisconnect:
            pass
        finally:
            session.stop()
            pump_task.cancel()

    frontend = cfg.service.frontend_dir
    if frontend:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend, html=True), name="ui")
    return app


def serve(models: PipelineModels, cfg: PipelineConfig, corpus: list[CorpusEntry]):
    import uvicorn
    app = create_app(models, cfg, corpus)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port, log_level="warning")
