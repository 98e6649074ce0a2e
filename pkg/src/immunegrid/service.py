"""Run-control HTTP service: create/steer runs, stream frames, export logs.

One worker thread per run owns its engine; every mutating command goes
through that run's queue, so commands apply in arrival order and clients
never observe a half-applied tick.  Frames fan out to WebSocket
subscribers through bounded queues; a slow subscriber back-pressures the
engine instead of losing frames.
"""
from __future__ import annotations

import io
import json
import os
import queue
import threading
import uuid
from typing import Optional, Union

from fastapi import FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field
from starlette.concurrency import run_in_threadpool

from .runner import Runner
from .scenario import (
    BUILTIN_NAMES, KineticsSetup, Scenario, ScenarioError, builtin_scenario,
    parse_scenario, scenario_doc, validate_scenario,
)

FRAME_QUEUE_SIZE = 256


# -- wire models ---------------------------------------------------------

class PlacementModel(BaseModel):
    mode: str = "uniform"
    axis: Optional[int] = None
    face: Optional[int] = None
    point: Optional[list[int]] = None

    def as_tuple(self) -> tuple:
        if self.mode == "uniform":
            return ("uniform",)
        if self.mode == "wall":
            return ("wall", self.axis, self.face)
        if self.mode == "point":
            if not self.point or len(self.point) != 3:
                raise ValueError("point placement needs point [x,y,z]")
            return ("point", *self.point)
        raise ValueError(f"unknown placement mode {self.mode!r}")


class CreateRunRequest(BaseModel):
    scenario: Union[str, dict] = Field(
        description="builtin scenario name or an inline scenario document")
    seed: int
    ticks: Optional[int] = Field(default=None, description="override run length")


class RunHandleModel(BaseModel):
    run_id: str
    scenario_name: str
    scenario_digest: str
    seed: int
    tick: int
    run_length: int
    status: str
    agents: list[str]
    compartments: dict[str, list[int]]


class AdvanceRequest(BaseModel):
    ticks: int = Field(gt=0)


class RunUntilRequest(BaseModel):
    tick: int = Field(ge=0)


class InjectRequest(BaseModel):
    compartment: str
    agent: str
    placement: PlacementModel = PlacementModel()
    count: int = Field(ge=1)


class InjectResponse(BaseModel):
    placed: int
    tick: int


# -- run management --------------------------------------------------------

class _Subscriber:
    def __init__(self, stride: int, slices: list[tuple[str, str, int, int]]):
        self.stride = max(1, stride)
        self.slices = slices
        self.q: queue.Queue = queue.Queue(maxsize=FRAME_QUEUE_SIZE)
        self.dead = False


class ManagedRun:
    def __init__(self, run_id: str, scenario: Scenario, seed: int,
                 log_path: Optional[str]):
        self.run_id = run_id
        self.scenario = scenario
        if log_path is None:
            self._log_stream: io.TextIOBase = io.StringIO()
            self._log_path = None
        else:
            self._log_stream = open(log_path, "w")
            self._log_path = log_path
        self.runner = Runner(scenario, seed, log_stream=self._log_stream)
        self.status = "paused"
        self._cmd: queue.Queue = queue.Queue()
        self._pause = threading.Event()
        self._shutdown = threading.Event()
        self._subs: list[_Subscriber] = []
        self._subs_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, daemon=True,
                                        name=f"run-{run_id}")
        self._worker.start()

    # -- worker side -----------------------------------------------------

    def _run(self) -> None:
        while not self._shutdown.is_set():
            try:
                cmd = self._cmd.get(timeout=0.2)
            except queue.Empty:
                continue
            kind = cmd[0]
            if kind == "stop":
                break
            if kind == "inject":
                _, req, reply = cmd
                try:
                    placed = self.runner.inject(req.compartment, req.agent,
                                                req.placement.as_tuple(),
                                                req.count, live=True)
                    reply.put(("ok", placed))
                except Exception as e:  # reported to the caller
                    reply.put(("error", str(e)))
                continue
            if kind == "advance":
                target = min(cmd[1], self.scenario.ticks)
                self._pause.clear()
                with self._state_lock:
                    self.status = "running"
                while (self.runner.tick < target
                       and not self._pause.is_set()
                       and not self._shutdown.is_set()):
                    report = self.runner.step()
                    self._broadcast(report)
                with self._state_lock:
                    self.status = "finished" if self.runner.finished else "paused"

    def _broadcast(self, report) -> None:
        with self._subs_lock:
            subs = list(self._subs)
        for sub in subs:
            if sub.dead:
                with self._subs_lock:
                    if sub in self._subs:
                        self._subs.remove(sub)
                continue
            if report.tick % sub.stride != 0:
                continue
            frame = self._make_frame(report, sub.slices)
            while not sub.dead and not self._shutdown.is_set():
                try:
                    sub.q.put(frame, timeout=0.5)
                    break
                except queue.Full:
                    continue  # backpressure: hold the engine, drop nothing

    def _make_frame(self, report, slices) -> dict:
        frame = {"tick": report.tick, "status": "running",
                 "census": report.census, "slices": []}
        for (comp, agent, axis, index) in slices:
            entry = {"compartment": comp, "agent": agent,
                     "axis": axis, "index": index}
            try:
                grid = self.runner.world.slice_concentration(comp, agent,
                                                             axis, index)
                entry["grid"] = grid.tolist()
            except (KeyError, IndexError) as e:
                entry["error"] = str(e)
            frame["slices"].append(entry)
        return frame

    # -- client side -----------------------------------------------------

    def handle(self) -> RunHandleModel:
        with self._state_lock:
            status = self.status
        agents = sorted(set(self.scenario.cells) | set(self.scenario.molecules))
        return RunHandleModel(
            run_id=self.run_id,
            scenario_name=self.scenario.name,
            scenario_digest=self.runner.digest,
            seed=self.runner.seed,
            tick=self.runner.tick,
            run_length=self.scenario.ticks,
            status=status,
            agents=agents,
            compartments={c.name: list(c.dims) for c in self.scenario.compartments},
        )

    def advance_to(self, target: int) -> None:
        if self.runner.finished:
            raise HTTPException(409, "run is finished")
        self._cmd.put(("advance", target))

    def pause(self) -> None:
        self._pause.set()
        # drop queued advances; a pause wins over anything not yet started
        drained = []
        while True:
            try:
                cmd = self._cmd.get_nowait()
            except queue.Empty:
                break
            if cmd[0] != "advance":
                drained.append(cmd)
        for cmd in drained:
            self._cmd.put(cmd)

    def inject(self, req: InjectRequest) -> int:
        if self.runner.finished:
            raise HTTPException(409, "run is finished")
        reply: queue.Queue = queue.Queue()
        self._cmd.put(("inject", req, reply))
        status, payload = reply.get()
        if status == "error":
            raise HTTPException(422, payload)
        return payload

    def subscribe(self, stride: int, slices) -> _Subscriber:
        sub = _Subscriber(stride, slices)
        with self._subs_lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        sub.dead = True

    def export_log(self) -> str:
        self.runner.finalize()
        if self._log_path is None:
            return self._log_stream.getvalue()
        self._log_stream.flush()
        with open(self._log_path) as fh:
            return fh.read()

    def stop(self) -> None:
        self._shutdown.set()
        self._pause.set()
        self._cmd.put(("stop",))
        self._worker.join(timeout=5)
        self.runner.finalize()
        if self._log_path is not None:
            self._log_stream.flush()
            self._log_stream.close()


def _parse_slice_param(raw: str) -> tuple[str, str, int, int]:
    parts = raw.split(":")
    if len(parts) != 4:
        raise HTTPException(422, f"slice spec {raw!r}: want comp:agent:axis:index")
    comp, agent, axis_s, index_s = parts
    axis_names = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}
    if axis_s not in axis_names:
        raise HTTPException(422, f"slice spec {raw!r}: bad axis {axis_s!r}")
    try:
        index = int(index_s)
    except ValueError:
        raise HTTPException(422, f"slice spec {raw!r}: bad index {index_s!r}")
    return comp, agent, axis_names[axis_s], index


def create_app(data_dir: Optional[str] = None) -> FastAPI:
    from contextlib import asynccontextmanager

    runs: dict[str, ManagedRun] = {}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        # graceful shutdown: stop workers and flush logs
        for run in runs.values():
            run.stop()

    app = FastAPI(title="immunegrid run control", version="1",
                  lifespan=lifespan)
    app.state.runs = runs

    # serve the steering UI when a built bundle sits next to the package
    ui_dist = os.environ.get("IMMUNEGRID_UI_DIST") or os.path.join(
        os.path.dirname(os.path.dirname(os.path.dirname(
            os.path.dirname(os.path.abspath(__file__))))), "frontend", "dist")
    if os.path.isdir(ui_dist):
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dist, html=True), name="ui")

    def get_run(run_id: str) -> ManagedRun:
        run = runs.get(run_id)
        if run is None:
            raise HTTPException(404, f"no run {run_id!r}")
        return run

    @app.get("/scenarios")
    def list_scenarios() -> dict:
        return {"builtins": list(BUILTIN_NAMES)}

    @app.get("/scenarios/{name}")
    def get_scenario(name: str) -> dict:
        try:
            sc = builtin_scenario(name)
        except ScenarioError as e:
            raise HTTPException(404, str(e))
        if isinstance(sc, KineticsSetup):
            return {"name": name, "kind": "kinetics",
                    "params": sc.params.__dict__, "init": sc.init.__dict__}
        return scenario_doc(sc)

    @app.post("/runs", response_model=RunHandleModel)
    def create_run(req: CreateRunRequest) -> RunHandleModel:
        try:
            if isinstance(req.scenario, str):
                sc = builtin_scenario(req.scenario)
                if isinstance(sc, KineticsSetup):
                    raise HTTPException(
                        422, f"{req.scenario} is an ODE parameter set")
            else:
                sc = parse_scenario(json.dumps(req.scenario))
        except ScenarioError as e:
            raise HTTPException(422, str(e))
        report = validate_scenario(sc)
        if not report.ok:
            raise HTTPException(422, "; ".join(report.errors))
        if req.ticks is not None:
            sc.ticks = req.ticks
        run_id = uuid.uuid4().hex[:12]
        log_path = None
        if data_dir is not None:
            os.makedirs(data_dir, exist_ok=True)
            log_path = os.path.join(data_dir, f"run_{run_id}.log")
        try:
            runs[run_id] = ManagedRun(run_id, sc, req.seed, log_path)
        except ScenarioError as e:
            raise HTTPException(422, str(e))
        return runs[run_id].handle()

    @app.get("/runs")
    def list_runs() -> list[RunHandleModel]:
        return [run.handle() for run in runs.values()]

    @app.get("/runs/{run_id}", response_model=RunHandleModel)
    def get_handle(run_id: str) -> RunHandleModel:
        return get_run(run_id).handle()

    @app.post("/runs/{run_id}/advance", response_model=RunHandleModel)
    def advance(run_id: str, req: AdvanceRequest) -> RunHandleModel:
        run = get_run(run_id)
        run.advance_to(run.runner.tick + req.ticks)
        return run.handle()

    @app.post("/runs/{run_id}/run_until", response_model=RunHandleModel)
    def run_until(run_id: str, req: RunUntilRequest) -> RunHandleModel:
        run = get_run(run_id)
        run.advance_to(req.tick)
        return run.handle()

    @app.post("/runs/{run_id}/pause", response_model=RunHandleModel)
    def pause(run_id: str) -> RunHandleModel:
        run = get_run(run_id)
        run.pause()
        return run.handle()

    @app.post("/runs/{run_id}/inject", response_model=InjectResponse)
    def inject(run_id: str, req: InjectRequest) -> InjectResponse:
        run = get_run(run_id)
        placed = run.inject(req)
        return InjectResponse(placed=placed, tick=run.runner.tick)

    @app.get("/runs/{run_id}/log", response_class=PlainTextResponse)
    def export_log(run_id: str) -> str:
        return get_run(run_id).export_log()

    @app.websocket("/runs/{run_id}/frames")
    async def frames(ws: WebSocket, run_id: str,
                     stride: int = Query(default=1, ge=1),
                     slice: list[str] = Query(default=[])):
        run = runs.get(run_id)
        if run is None:
            await ws.close(code=4004, reason=f"no run {run_id!r}")
            return
        slices = [_parse_slice_param(s) for s in slice]
        await ws.accept()
        sub = run.subscribe(stride, slices)
        await ws.send_json({"hello": run.handle().model_dump()})

        def next_frame():
            try:
                return sub.q.get(timeout=0.5)
            except queue.Empty:
                return None

        try:
            while True:
                frame = await run_in_threadpool(next_frame)
                if frame is None:
                    continue
                await ws.send_text(json.dumps(frame))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            run.unsubscribe(sub)

    return app
