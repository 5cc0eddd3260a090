"""WebSocket frame service: one duplex connection per viewer session.

The client drives a session with small JSON messages (loadScene, camera,
params, requestFrame); the server answers with JSON stats followed by a
binary frame (u32 frame id, u16 width, u16 height, u8 format, payload).
Camera and parameter changes count as motion: while motion is fresh the
session renders fast preview frames at a reduced resolution with shadows
and ambient occlusion switched off, and once the camera has been quiet
for the debounce interval it renders one refined full-resolution frame
unprompted.  Preview frames ship as raw RGBA8, refined frames as PNG.

Message intake and rendering run as separate tasks so a slow render never
blocks input; state changes bump an epoch counter and a finished frame is
thrown away when its epoch is stale, which coalesces bursts of camera
messages into a single render of the latest state.  Frame ids increase
strictly per session (dropped frames leave gaps).

`serve` additionally hosts the static browser viewer on a second port.
"""

from __future__ import annotations

import asyncio
import contextlib
import dataclasses
import json
import os
import struct
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket
from starlette.websockets import WebSocketDisconnect

from .imaging import png_available, png_bytes, to_uint8
from .model_io import load_vxl
from .raycast import Camera, RenderParams, default_camera, ensure_lod, render_frame

FORMAT_RAW = 0  # RGBA8, row-major, top row first
FORMAT_PNG = 1

_FRAME_HEAD = struct.Struct("<IHHB")


def encode_frame(frame_id: int, width: int, height: int, fmt: int,
                 payload: bytes) -> bytes:
    """Binary frame message: header (id, dims, format byte) + pixel payload."""
    return _FRAME_HEAD.pack(frame_id, width, height, fmt) + payload


def decode_frame(blob: bytes):
    """Split a binary frame message into (frame_id, width, height, fmt, payload)."""
    if len(blob) < _FRAME_HEAD.size:
        raise ValueError("frame message shorter than its header")
    frame_id, width, height, fmt = _FRAME_HEAD.unpack_from(blob)
    return frame_id, width, height, fmt, bytes(blob[_FRAME_HEAD.size:])


def params_update(params: RenderParams, fields: dict) -> RenderParams:
    """Current params overlaid with the given field values; unknown names or
    invalid values raise without touching `params`."""
    names = {f.name for f in dataclasses.fields(RenderParams)}
    unknown = sorted(set(fields) - names)
    if unknown:
        raise ValueError("unknown render parameter(s): " + ", ".join(unknown))
    merged = {name: getattr(params, name) for name in names}
    merged.update(fields)
    return RenderParams(**merged)


def synthetic_scene(name: str):
    """Built-in demo scenes addressed by name instead of a .vxl path.

    "tornado" (or "tornado:CURVES,STEPS,SEED[,GRID,BINS]") integrates the
    procedural tornado flow and voxelizes it on the spot.
    """
    from .scene_io import generate_tornado, grid_spec_for, normalize_to_grid
    from .voxelizer import build_voxel_model

    base, _, rest = name.partition(":")
    if base != "tornado":
        raise ValueError(f"unknown scene name {name!r} (try \"tornado\")")
    n_curves, steps, seed, grid, bins = 200, 400, 7, 64, 32
    if rest:
        vals = [int(v) for v in rest.split(",")]
        if len(vals) == 3:
            n_curves, steps, seed = vals
        elif len(vals) == 5:
            n_curves, steps, seed, grid, bins = vals
        else:
            raise ValueError(
                "scene spec takes CURVES,STEPS,SEED or CURVES,STEPS,SEED,GRID,BINS")
    curves = generate_tornado(n_curves, steps, seed)
    spec = grid_spec_for(curves, grid, bins)
    model = build_voxel_model(normalize_to_grid(curves, spec), spec)
    return model, None, None


class Session:
    """Per-connection state plus the moving/still render policy.

    The class is synchronous and clock-injectable so the policy can be unit
    tested; the asyncio plumbing around it lives in the websocket endpoint.
    """

    def __init__(self, bundle=None, threads: int = 1, width: int = 640,
                 height: int = 360, still_delay: float = 0.3, divisor: int = 2,
                 clock=time.monotonic):
        if divisor < 1:
            raise ValueError("resolution divisor must be >= 1")
        self.threads = threads
        self.width = width
        self.height = height
        self.still_delay = still_delay
        self.divisor = divisor
        self.clock = clock
        self.model = None
        self.octree = None
        self.replines = None
        self.params = RenderParams(neighbor_mode="auto")
        self.view: Optional[dict] = None
        self.epoch = 0
        self.frame_id = 0
        self.last_motion = float("-inf")
        self.needs_frame = False
        self.needs_refine = False
        self.wake = asyncio.Event()
        self.send_lock = asyncio.Lock()
        if bundle is not None:
            model, octree, replines = bundle
            self.set_scene(model, octree, replines)

    # -- state transitions driven by client messages --------------------

    def set_scene(self, model, octree, replines) -> None:
        self.model = model
        self.octree = octree
        self.replines = replines
        self.epoch += 1
        self.needs_frame = False
        self.needs_refine = False
        cam = default_camera(model.spec.dims, self.width, self.height)
        self.view = {"pos": cam.position, "target": cam.target,
                     "up": cam.up, "fov": cam.fov}
        self.wake.set()

    def _mark_motion(self) -> None:
        self.last_motion = self.clock()
        self.epoch += 1
        if self.model is not None:
            self.needs_frame = True
            self.needs_refine = True
        self.wake.set()

    def apply_camera(self, msg: dict) -> None:
        view = dict(self.view) if self.view is not None else {}
        for key in ("pos", "target", "up"):
            if key in msg:
                vec = np.asarray(msg[key], dtype=np.float64)
                if vec.shape != (3,):
                    raise ValueError(f"camera {key} must have 3 components")
                view[key] = vec
        if "fov" in msg:
            view["fov"] = float(msg["fov"])
        for key in ("pos", "target"):
            if key not in view:
                raise ValueError(f"camera message missing {key!r}")
        view.setdefault("up", np.array([0.0, 0.0, 1.0]))
        view.setdefault("fov", 45.0)
        # constructing validates (fov range, up not parallel to the view)
        Camera(position=view["pos"], target=view["target"], up=view["up"],
               fov=view["fov"], width=self.width, height=self.height)
        self.view = view
        self._mark_motion()

    def apply_params(self, msg: dict) -> None:
        fields = {k: v for k, v in msg.items() if k != "type"}
        self.params = params_update(self.params, fields)
        self._mark_motion()

    def request_frame(self) -> None:
        if self.model is None:
            raise ValueError("no scene is loaded; send loadScene first")
        self.needs_frame = True
        self.wake.set()

    def next_frame_id(self) -> int:
        self.frame_id += 1
        return self.frame_id

    # -- render policy ----------------------------------------------------

    def plan(self, now: float):
        """What the render worker should do next: ("render-moving", 0.0),
        ("render-still", 0.0), or ("wait", seconds-or-None)."""
        if self.model is not None and self.needs_frame:
            if now - self.last_motion < self.still_delay:
                return "render-moving", 0.0
            return "render-still", 0.0
        if self.model is not None and self.needs_refine:
            remaining = self.still_delay - (now - self.last_motion)
            if remaining > 0.0:
                return "wait", remaining
            return "render-still", 0.0
        return "wait", None

    def mark_delivered(self, moving: bool) -> None:
        self.needs_frame = False
        if not moving:
            self.needs_refine = False

    def render(self, moving: bool):
        """Synchronous render of the current state; runs on a worker thread."""
        model = self.model
        view = self.view
        params = self.params
        if moving:
            width = max(1, self.width // self.divisor)
            height = max(1, self.height // self.divisor)
            params = dataclasses.replace(params, shadow_mode="none",
                                         ao_mode="none")
            octree, replines = self.octree, self.replines
        else:
            width, height = self.width, self.height
            octree, replines = ensure_lod(model, self.octree, self.replines,
                                          params)
            if self.model is model:  # keep derived fields for the next still
                self.octree, self.replines = octree, replines
        camera = Camera(position=view["pos"], target=view["target"],
                        up=view["up"], fov=view["fov"],
                        width=width, height=height)
        return render_frame(camera, model, octree=octree, replines=replines,
                            params=params, workers=self.threads, moving=moving)


def encode_payload(image, prefer_png: bool):
    """(format byte, payload bytes) for a rendered image; PNG when asked for
    and available, raw RGBA8 otherwise."""
    arr = to_uint8(image)
    if arr.shape[2] == 3:
        arr = np.dstack([arr, np.full(arr.shape[:2], 255, np.uint8)])
    if prefer_png and png_available():
        return FORMAT_PNG, png_bytes(arr)
    return FORMAT_RAW, np.ascontiguousarray(arr).tobytes()


async def _send_json(session: Session, ws, obj: dict) -> None:
    async with session.send_lock:
        await ws.send_text(json.dumps(obj))


async def _load_scene(session: Session, ws, msg: dict) -> None:
    if "path" in msg:
        label = str(msg["path"])
        bundle = await asyncio.to_thread(load_vxl, msg["path"])
    elif "name" in msg:
        label = str(msg["name"])
        bundle = await asyncio.to_thread(synthetic_scene, label)
    else:
        raise ValueError('loadScene needs a "name" or a "path"')
    model, octree, replines = bundle
    session.set_scene(model, octree, replines)
    await _send_json(session, ws, {
        "type": "scene",
        "scene": label,
        "dims": [int(d) for d in model.spec.dims],
        "bins": int(model.spec.bins_per_axis),
        "segments": model.segment_count,
        "memoryBytes": model.memory_bytes,
    })


async def _handle_text(session: Session, ws, text: str) -> None:
    try:
        msg = json.loads(text)
        if not isinstance(msg, dict):
            raise ValueError("message must be a JSON object")
    except json.JSONDecodeError:
        await _send_json(session, ws,
                         {"type": "error", "message": "message is not valid JSON"})
        return
    mtype = msg.get("type")
    try:
        if mtype == "loadScene":
            await _load_scene(session, ws, msg)
        elif mtype == "camera":
            session.apply_camera(msg)
        elif mtype == "params":
            session.apply_params(msg)
        elif mtype == "requestFrame":
            session.request_frame()
        else:
            raise ValueError(f"unknown message type {mtype!r}")
    except Exception as exc:
        await _send_json(session, ws, {"type": "error", "message": str(exc)})


async def _render_loop(session: Session, ws) -> None:
    """Runs beside the intake loop; owns all frame sends for the session.
    Exits quietly when the peer goes away mid-send."""
    try:
        while True:
            action, delay = session.plan(session.clock())
            if action == "wait":
                if delay is None:
                    await session.wake.wait()
                else:
                    with contextlib.suppress(asyncio.TimeoutError):
                        await asyncio.wait_for(session.wake.wait(),
                                               timeout=delay)
                session.wake.clear()
                continue
            moving = action == "render-moving"
            epoch = session.epoch
            frame_id = session.next_frame_id()
            try:
                frame = await asyncio.to_thread(session.render, moving)
            except Exception as exc:
                session.mark_delivered(moving=False)  # do not retry in a loop
                await _send_json(session, ws,
                                 {"type": "error", "frameId": frame_id,
                                  "message": f"render failed: {exc}"})
                continue
            async with session.send_lock:
                if session.epoch != epoch:
                    continue  # superseded mid-render; plan() sees fresh state
                session.mark_delivered(moving)
                quality = "moving" if moving else "still"
                fmt, payload = encode_payload(frame.image,
                                              prefer_png=not moving)
                height, width = frame.image.shape[:2]
                await ws.send_text(json.dumps({
                    "type": "stats",
                    "frameId": frame_id,
                    "renderMs": frame.stats["ms"],
                    "voxelSteps": frame.stats["voxel_steps"],
                    "tests": frame.stats["intersection_tests"],
                    "quality": quality,
                }))
                await ws.send_bytes(encode_frame(frame_id, width, height,
                                                 fmt, payload))
    except (WebSocketDisconnect, RuntimeError):
        return


def create_app(model_path=None, threads: int = 1, width: int = 640,
               height: int = 360, still_delay: float = 0.3, divisor: int = 2):
    """The frame-service ASGI app; a model given here is loaded once and
    shared read-only by every session."""
    app = FastAPI(title="linevox frame service")
    app.state.bundle = load_vxl(model_path) if model_path is not None else None

    async def endpoint(ws: WebSocket) -> None:
        await ws.accept()
        session = Session(bundle=app.state.bundle, threads=threads,
                          width=width, height=height,
                          still_delay=still_delay, divisor=divisor)
        worker = asyncio.create_task(_render_loop(session, ws))
        try:
            while True:
                msg = await ws.receive()
                if msg["type"] == "websocket.disconnect":
                    break
                if msg.get("text") is not None:
                    await _handle_text(session, ws, msg["text"])
                else:
                    await _send_json(session, ws, {
                        "type": "error",
                        "message": "binary client messages are not supported"})
        except WebSocketDisconnect:
            pass
        finally:
            worker.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await worker

    app.websocket("/")(endpoint)
    app.websocket("/ws")(endpoint)
    return app


def viewer_dir() -> Path:
    """Where the built browser viewer lives: $LINEVOX_VIEWER_DIR, else the
    in-repo frontend/dist next to this package."""
    env = os.environ.get("LINEVOX_VIEWER_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "frontend" / "dist"


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>linevox viewer</title></head><body>
<h1>linevox viewer</h1>
<p>No built viewer bundle was found. Build it with
<code>npm install &amp;&amp; npm run build</code> inside <code>frontend/</code>,
or point LINEVOX_VIEWER_DIR at a build.</p>
<p>The frame service itself is up; connect a WebSocket client to the
service port.</p>
</body></html>"""


def create_static_app():
    """Static host for the viewer bundle (or a hint page when not built)."""
    from fastapi.responses import HTMLResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="linevox viewer host")
    root = viewer_dir()
    if root.is_dir():
        app.mount("/", StaticFiles(directory=str(root), html=True),
                  name="viewer")
    else:
        @app.get("/")
        async def fallback() -> HTMLResponse:
            return HTMLResponse(_FALLBACK_PAGE)
    return app


def serve(model_path=None, port: int = 9870, http_port: int = 9871,
          threads: int = 1) -> int:
    """Run the frame service and the static viewer host until interrupted."""
    import uvicorn

    frames = create_app(model_path=model_path, threads=threads)
    static = create_static_app()

    async def _run() -> None:
        ws_server = uvicorn.Server(uvicorn.Config(
            frames, host="127.0.0.1", port=port, log_level="info"))
        http_server = uvicorn.Server(uvicorn.Config(
            static, host="127.0.0.1", port=http_port, log_level="warning"))
        await asyncio.gather(ws_server.serve(), http_server.serve())

    asyncio.run(_run())
    return 0
