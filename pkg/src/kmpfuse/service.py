"""HTTP service: training, prediction grids, and live steerable rollouts.

The rollout stream is a chunked POST returning newline-delimited JSON
messages ({"type": "session" | "step" | "error" | "done", ...}); client
messages ({"type": "set_context" | "cancel"}) go to the session's message
endpoint and take effect at the next control step. The stepping loop runs in
its own task at a paced rate, pushing frames into a bounded queue: a slow
consumer loses intermediate frames (iteration numbers expose the gaps) but
never slows the control loop, and the complete trace stays retrievable from
the session afterwards.
"""

from __future__ import annotations

import asyncio
import json
import logging
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .demonstrations import build_training_set, corpus_from_dict, load_training_set
from .errors import (
    DataError,
    DimensionMismatchError,
    KmpFuseError,
    NumericalError,
    SchemaError,
    UsageError,
)
from .pipeline import PolicyBundle
from .rollout import GridSpec, STRATEGIES, check_strategy, policy_step, vector_field_grid

log = logging.getLogger(__name__)


class TrainRequest(BaseModel):
    corpus: dict | None = None
    dataset: str | None = None
    config: dict = Field(default_factory=dict)


class FieldRequest(BaseModel):
    nx: int = 40
    ny: int = 40
    bounds: list[float] | None = None   # xmin, xmax, ymin, ymax
    context: list[float] | None = None
    strategy: str = "full"


class RolloutRequest(BaseModel):
    x0: list[float]
    context: list[float] | None = None
    strategy: str = "full"
    max_iters: int = 500
    success_radius: float = 0.01
    dt: float = 0.05
    pace_hz: float = 20.0


class SessionMessage(BaseModel):
    type: str
    context: list[float] | None = None


class _LruStore(OrderedDict):
    def __init__(self, capacity: int):
        super().__init__()
        self.capacity = capacity

    def put(self, key, value):
        self[key] = value
        self.move_to_end(key)
        while len(self) > self.capacity:
            self.popitem(last=False)

    def touch(self, key):
        if key in self:
            self.move_to_end(key)


@dataclass
class Session:
    id: str
    model_id: str
    request: RolloutRequest
    context_dim: int
    status: str = "running"
    iteration: int = 0
    terminal_distance: float | None = None
    pending_context: list[float] | None = None
    cancelled: bool = False
    steps: list = field(default_factory=list)
    context_log: list = field(default_factory=list)
    queue: asyncio.Queue = field(default_factory=lambda: asyncio.Queue(maxsize=256))
    task: asyncio.Task | None = None

    def emit(self, message: dict) -> None:
        while True:
            try:
                self.queue.put_nowait(message)
                return
            except asyncio.QueueFull:
                try:  # drop the oldest display frame, keep stepping
                    self.queue.get_nowait()
                except asyncio.QueueEmpty:
                    pass

    def public_state(self) -> dict:
        return {
            "session_id": self.id,
            "model_id": self.model_id,
            "status": self.status,
            "iteration": self.iteration,
            "terminal_distance": self.terminal_distance,
        }


def _train_from_request(req: TrainRequest, default_config) -> PolicyBundle:
    from .cli import RunConfig

    config = RunConfig() if default_config is None else RunConfig(**vars(default_config))
    unknown = set(req.config) - set(RunConfig.KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in req.config.items():
        setattr(config, RunConfig.KEYS[key], value)

    if req.corpus is not None:
        training = build_training_set(corpus_from_dict(req.corpus))
    elif req.dataset or config.dataset:
        training = load_training_set(req.dataset or config.dataset)
    else:
        raise SchemaError("$", "either 'corpus' or 'dataset' is required")
    from .pipeline import train_bundle

    return train_bundle(training, config.train_settings(), config.fusion_params())


def create_app(
    default_config=None,
    store_capacity: int = 16,
    frontend_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="kmpfuse service")
    app.state.models = _LruStore(store_capacity)
    app.state.sessions = _LruStore(64)
    app.state.field_cache = _LruStore(32)

    def get_bundle(model_id: str) -> PolicyBundle:
        bundle = app.state.models.get(model_id)
        if bundle is None:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id}")
        app.state.models.touch(model_id)
        return bundle

    @app.get("/health")
    def health():
        return {"status": "ok", "models": len(app.state.models)}

    @app.post("/train")
    def train(req: TrainRequest):
        try:
            bundle = _train_from_request(req, default_config)
        except (SchemaError, UsageError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except DimensionMismatchError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except DataError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except NumericalError as exc:
            raise HTTPException(
                status_code=500, detail=f"training stage failed: {exc}"
            ) from exc
        model_id = uuid.uuid4().hex[:12]
        app.state.models.put(model_id, bundle)
        return {
            "model_id": model_id,
            "content_hash": bundle.content_hash(),
            "dims": list(bundle.dims),
            "train_bounds": np.asarray(bundle.train_bounds).tolist(),
            "goals": bundle.goals.positions.tolist(),
        }

    @app.get("/models/{model_id}")
    def get_model(model_id: str):
        return get_bundle(model_id).to_dict()

    @app.post("/models/{model_id}/field")
    def field_grid(model_id: str, req: FieldRequest):
        bundle = get_bundle(model_id)
        key = (
            model_id, req.nx, req.ny,
            tuple(req.bounds) if req.bounds else None,
            tuple(req.context) if req.context else None,
            req.strategy,
        )
        cached = app.state.field_cache.get(key)
        if cached is not None:
            app.state.field_cache.touch(key)
            return cached
        try:
            if req.bounds is not None:
                if len(req.bounds) != 4:
                    raise UsageError("bounds must be [xmin, xmax, ymin, ymax]")
                bounds = np.asarray(req.bounds, dtype=float).reshape(2, 2)
            else:
                from .rollout import inflate_bounds

                bounds = inflate_bounds(bundle.train_bounds)
            grid = GridSpec(nx=req.nx, ny=req.ny, bounds=bounds)
            out = vector_field_grid(
                bundle.kmp, bundle.goals, bundle.fusion, grid,
                req.context, req.strategy,
            )
        except (UsageError, KmpFuseError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        doc = out.to_dict()
        app.state.field_cache.put(key, doc)
        return doc

    async def run_session(session: Session, bundle: PolicyBundle):
        req = session.request
        params = bundle.fusion
        c = np.zeros(0) if req.context is None else np.asarray(req.context, dtype=float)
        x = np.asarray(req.x0, dtype=float)
        session.context_log.append({"iteration": 0, "context": c.tolist()})
        session.emit({"type": "session", **session.public_state()})
        try:
            for t in range(req.max_iters + 1):
                if session.cancelled:
                    session.status = "cancelled"
                    break
                pending, session.pending_context = session.pending_context, None
                if pending is not None:
                    if len(pending) != session.context_dim:
                        session.emit({
                            "type": "error",
                            "message": f"context dim {len(pending)} != "
                                       f"{session.context_dim}; keeping previous",
                        })
                    else:
                        c = np.asarray(pending, dtype=float)
                        session.context_log.append(
                            {"iteration": t, "context": c.tolist()})
                session.iteration = t
                s = np.concatenate([c, x])
                action = policy_step(bundle.kmp, bundle.goals, params,
                                     req.strategy, s)
                distance = float(np.linalg.norm(
                    x - bundle.goals.positions[action.goal_index]))
                record = {
                    "iteration": t,
                    "input": s.tolist(),
                    "mean": action.mean.tolist(),
                    "weights": action.weights.tolist(),
                    "k_max": action.k_max,
                    "goal_index": int(action.goal_index),
                    "sigma_ep": action.sigma_ep,
                    "distance": distance,
                }
                session.steps.append(record)
                session.emit({"type": "step", **record})
                session.terminal_distance = distance
                if distance < req.success_radius:
                    session.status = "succeeded"
                    break
                if t == req.max_iters:
                    session.status = "failed"
                    break
                x = x + req.dt * action.mean
                if not np.isfinite(x).all():
                    session.status = "failed"
                    session.emit({"type": "error", "message": "state diverged"})
                    break
                if req.pace_hz > 0:
                    await asyncio.sleep(1.0 / req.pace_hz)
                else:
                    await asyncio.sleep(0)
        except Exception as exc:  # surface, never hang the stream
            log.exception("session %s crashed", session.id)
            session.status = "failed"
            session.emit({"type": "error", "message": str(exc)})
        session.emit({
            "type": "done",
            "status": session.status,
            "iterations": session.iteration,
            "terminal_distance": session.terminal_distance,
        })

    @app.post("/models/{model_id}/rollout")
    async def rollout_stream(model_id: str, req: RolloutRequest, request: Request):
        bundle = get_bundle(model_id)
        try:
            check_strategy(req.strategy)
            c_dim = bundle.dims.context
            given = 0 if req.context is None else len(req.context)
            if given != c_dim:
                raise UsageError(f"context of dim {c_dim} required, got {given}")
            if len(req.x0) != bundle.dims.position:
                raise UsageError(f"x0 must have dim {bundle.dims.position}")
        except UsageError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

        session = Session(
            id=uuid.uuid4().hex[:12], model_id=model_id,
            request=req, context_dim=bundle.dims.context,
        )
        app.state.sessions.put(session.id, session)
        session.task = asyncio.create_task(run_session(session, bundle))

        async def stream():
            try:
                while True:
                    message = await session.queue.get()
                    yield json.dumps(message) + "\n"
                    if message["type"] == "done":
                        break
            finally:
                if session.status == "running":
                    session.cancelled = True

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.post("/sessions/{session_id}/message")
    async def session_message(session_id: str, msg: SessionMessage):
        session = app.state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        if msg.type == "set_context":
            if msg.context is None:
                raise HTTPException(status_code=400, detail="set_context needs 'context'")
            # Dimension problems are reported in-band; the session keeps running.
            session.pending_context = list(msg.context)
        elif msg.type == "cancel":
            session.cancelled = True
        else:
            raise HTTPException(status_code=400, detail=f"unknown message type {msg.type!r}")
        return {"accepted": True, "session_id": session_id}

    @app.get("/sessions/{session_id}")
    async def session_state(session_id: str):
        session = app.state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session.public_state()

    @app.get("/sessions/{session_id}/trace")
    async def session_trace(session_id: str):
        session = app.state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        if session.task is not None and not session.task.done():
            await session.task
        return {
            **session.public_state(),
            "steps": session.steps,
            "context_log": session.context_log,
            "request": session.request.model_dump(),
        }

    @app.get("/strategies")
    def strategies():
        return {"strategies": list(STRATEGIES)}

    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=frontend_dir, html=True), name="app")

    return app
