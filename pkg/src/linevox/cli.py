"""Command-line front door: voxelize | precompute-ao | render | metrics | bench | serve.

Inputs are curve files (.lines binary or OBJ polylines, sniffed by magic) or
the synthetic generator `tornado:CURVES,STEPS,SEED`.  Render settings follow
the precedence flags > --config JSON > defaults; the JSON config mirrors
RenderParams field names.  Heavy modules (the JIT kernels in particular) are
imported inside the subcommands so `linevox --help` stays instant.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error
(argparse prints the usage text).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import re
import sys
import time

import numpy as np

_INPUT_HELP = "curve file (.lines or OBJ polylines), or tornado:CURVES,STEPS,SEED"


def _default_threads() -> int:
    env = os.environ.get("LINEVOX_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"LINEVOX_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"LINEVOX_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _load_curves(text: str):
    from .scene_io import generate_tornado, load_lines_binary, load_obj_lines

    if text.startswith("tornado:"):
        parts = text[len("tornado:"):].split(",")
        if len(parts) != 3:
            raise ValueError(f"tornado input is tornado:CURVES,STEPS,SEED, got {text!r}")
        n, steps, seed = (int(p) for p in parts)
        return generate_tornado(n, steps, seed)
    with open(text, "rb") as fh:
        head = fh.read(4)
    if head == b"LNS1":
        return load_lines_binary(text)
    return load_obj_lines(text)


def _parse_grid(curves, grid: str, bins: int):
    from .scene_io import GridSpec, grid_spec_for

    parts = str(grid).split(",")
    if len(parts) == 1:
        return grid_spec_for(curves, int(parts[0]), bins_per_axis=bins)
    if len(parts) == 3:
        return GridSpec(dims=tuple(int(p) for p in parts), bins_per_axis=bins)
    raise ValueError(f"--grid takes one resolution or RX,RY,RZ, got {grid!r}")


def _parse_size(text: str):
    m = re.fullmatch(r"(\d+)x(\d+)", str(text))
    if not m:
        raise ValueError(f"--size must look like 640x360, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _parse_floats(text, n: int, what: str):
    parts = str(text).split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise ValueError(f"{what} needs {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise ValueError(f"{what} needs {n} comma-separated numbers, got {text!r}")
    return vals


def _make_camera(camera_text, up_text, dims, width: int, height: int):
    from .raycast import Camera, default_camera

    if not camera_text:
        cam = default_camera(dims, width, height)
        if up_text:
            cam.up = np.asarray(_parse_floats(up_text, 3, "--up"), dtype=np.float64)
            cam.basis()
        return cam
    up = _parse_floats(up_text, 3, "--up") if up_text else (0.0, 0.0, 1.0)
    v = _parse_floats(camera_text, 7, "--camera")
    return Camera(position=v[:3], target=v[3:6], up=up, fov=v[6],
                  width=width, height=height)


def _params_from_flags(args, neighbor_default: str):
    """RenderParams from the layered sources: defaults, then the JSON config
    file, then explicitly passed flags."""
    from .raycast import RenderParams

    merged: dict = {"neighbor_mode": neighbor_default}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        allowed = {f.name for f in dataclasses.fields(RenderParams)}
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise ValueError(f"{args.config}: unknown config keys {unknown}")
        merged.update(cfg)
    overrides = {
        "tube_radius": args.tube_radius,
        "opacity_mode": args.opacity_mode,
        "base_opacity": args.opacity,
        "tau": args.tau,
        "shadow_mode": args.shadows,
        "ao_mode": args.ao,
        "neighbor_mode": args.neighbors,
        "ao_rays": args.ao_rays,
        "ao_radius": args.ao_radius,
        "shadow_rep_level": args.shadow_rep_level,
    }
    if args.light is not None:
        overrides["light_dir"] = _parse_floats(args.light, 3, "--light")
    if args.background is not None:
        overrides["background"] = _parse_floats(args.background, 4, "--background")
    if args.no_joints:
        overrides["joint_spheres"] = False
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RenderParams(**merged)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _emit_json(report: dict, path, label: str) -> None:
    text = json.dumps(report, indent=2, default=_json_default)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"{path}: {label} written")
    else:
        print(text)


# --- subcommands --------------------------------------------------------------

def cmd_voxelize(args) -> int:
    from .lod import build_octree, build_rep_lines, compute_density_level0
    from .model_io import save_vxl
    from .scene_io import normalize_to_grid
    from .voxelizer import build_voxel_model

    t0 = time.perf_counter()
    curves = _load_curves(args.input)
    spec = _parse_grid(curves, args.grid, args.bins)
    local = normalize_to_grid(curves, spec)
    model = build_voxel_model(local, spec, workers=args.threads)
    octree = replines = None
    if args.with_lod:
        octree = build_octree(compute_density_level0(model))
        replines = build_rep_lines(model, octree)
    save_vxl(model, args.out, octree=octree, replines=replines)
    ms = (time.perf_counter() - t0) * 1000.0
    print(f"{args.out}: {model.segment_count} segments in {model.voxel_count} voxels "
          f"(N={spec.bins_per_axis}, {model.memory_bytes} bytes encoded, "
          f"{model.dropped_overflow} dropped by overflow) in {ms:.0f} ms")
    return 0


def cmd_precompute_ao(args) -> int:
    from .illumination import AOParams, precompute_voxel_ao
    from .lod import build_octree, compute_density_level0
    from .model_io import load_vxl, save_vxl

    model, octree, replines = load_vxl(args.model)
    if octree is None:
        octree = build_octree(compute_density_level0(model))
    t0 = time.perf_counter()
    field = precompute_voxel_ao(
        model, octree, AOParams(n_rays=args.rays, radius=args.radius, step=args.step),
        workers=args.threads)
    model.ao = field.values
    out = args.out or args.model
    save_vxl(model, out, octree=octree, replines=replines)
    ms = (time.perf_counter() - t0) * 1000.0
    occupied = int((model.counts > 0).sum())
    print(f"{out}: AO baked for {occupied} occupied voxels "
          f"({args.rays} rays, radius {args.radius:g}) in {ms:.0f} ms")
    return 0


def cmd_render(args) -> int:
    from .imaging import write_image
    from .model_io import load_vxl
    from .raycast import ensure_lod, render_frame

    model, octree, replines = load_vxl(args.model)
    params = _params_from_flags(args, neighbor_default="on")
    octree, replines = ensure_lod(model, octree, replines, params)
    width, height = _parse_size(args.size)
    camera = _make_camera(args.camera, args.up, model.spec.dims, width, height)
    frame = render_frame(camera, model, octree=octree, replines=replines,
                         params=params, workers=args.threads)
    write_image(frame, args.out)
    s = frame.stats
    print(f"{args.out}: {width}x{height} in {s['ms']:.1f} ms "
          f"({s['voxel_steps']} voxel steps, {s['intersection_tests']} tests, "
          f"{s['workers']} workers)")
    return 0


def cmd_metrics(args) -> int:
    from .metrics import mean_hausdorff, mean_tangent_deviation, memory_report
    from .scene_io import normalize_to_grid
    from .voxelizer import build_voxel_model, count_duplicates

    curves = _load_curves(args.input)
    spec = _parse_grid(curves, args.grid, args.bins)
    local = normalize_to_grid(curves, spec)
    t0 = time.perf_counter()
    model = build_voxel_model(local, spec, workers=args.threads)
    build_ms = (time.perf_counter() - t0) * 1000.0
    report = {
        "input": args.input,
        "grid": list(spec.dims),
        "bins": spec.bins_per_axis,
        "curves": local.n_curves,
        "segments": model.segment_count,
        "voxels": model.voxel_count,
        "occupied_voxels": int((model.counts > 0).sum()),
        "dropped_overflow": model.dropped_overflow,
        "build_ms": build_ms,
        "memory": memory_report(model),
        "duplicate_rate": count_duplicates(model),
        "hausdorff": mean_hausdorff(local, model, spacing=args.spacing),
        "tangent_deviation_deg": mean_tangent_deviation(local, model, spacing=args.spacing),
    }
    _emit_json(report, args.json, f"metrics for {args.input}")
    return 0


def cmd_bench(args) -> int:
    from .model_io import load_vxl
    from .raycast import Camera, ensure_lod, render_frame

    model, octree, replines = load_vxl(args.model)
    params = _params_from_flags(args, neighbor_default="auto")
    octree, replines = ensure_lod(model, octree, replines, params)
    width, height = _parse_size(args.size)
    if args.frames < 1:
        raise ValueError("--frames must be >= 1")
    moving = args.quality == "moving"
    dims = model.spec.dims
    center = np.asarray(dims, dtype=np.float64) * 0.5
    dist = 1.7 * float(max(dims))
    records = []
    for i in range(args.frames):
        a = 2.0 * math.pi * i / args.frames
        position = center + dist * np.array([math.cos(a), math.sin(a), 0.4])
        camera = Camera(position=position, target=center, up=(0, 0, 1),
                        fov=45.0, width=width, height=height)
        frame = render_frame(camera, model, octree=octree, replines=replines,
                             params=params, workers=args.threads, moving=moving)
        s = frame.stats
        records.append({"frame": i, "ms": s["ms"], "voxel_steps": s["voxel_steps"],
                        "intersection_tests": s["intersection_tests"]})
    report = {
        "model": args.model,
        "frames": args.frames,
        "size": [width, height],
        "threads": args.threads,
        "quality": args.quality,
        "mean_ms": sum(r["ms"] for r in records) / len(records),
        "per_frame": records,
    }
    _emit_json(report, args.json, f"bench over {args.frames} frames")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    return serve(model_path=args.model, port=args.port, http_port=args.http_port,
                 threads=args.threads)


# --- parser -------------------------------------------------------------------

def _add_threads(sp) -> None:
    sp.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: LINEVOX_THREADS or logical cores)")


def _add_param_flags(sp) -> None:
    sp.add_argument("--config", metavar="JSON",
                    help="JSON file of render settings; explicit flags override it")
    sp.add_argument("--tube-radius", type=float, default=None,
                    help="tube radius in voxel units (default 0.3)")
    sp.add_argument("--opacity", type=float, default=None,
                    help="base opacity in (0,1] (default 1.0)")
    sp.add_argument("--opacity-mode", default=None,
                    choices=("constant", "transfer", "distance-scaled"))
    sp.add_argument("--tau", type=float, default=None,
                    help="early-termination opacity threshold (default 0.95)")
    sp.add_argument("--shadows", default=None,
                    choices=("none", "hard", "replines", "cone"))
    sp.add_argument("--ao", default=None,
                    choices=("none", "hemisphere-geometry", "density-rays", "precomputed"))
    sp.add_argument("--neighbors", default=None, choices=("on", "off", "auto"))
    sp.add_argument("--light", metavar="X,Y,Z", default=None,
                    help="direction toward the light (default: headlight)")
    sp.add_argument("--background", metavar="R,G,B,A", default=None)
    sp.add_argument("--ao-rays", type=int, default=None)
    sp.add_argument("--ao-radius", type=float, default=None)
    sp.add_argument("--shadow-rep-level", type=int, default=None,
                    help="representative-line level for replines shadows")
    sp.add_argument("--no-joints", action="store_true",
                    help="skip the joint spheres at segment endpoints")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="linevox",
        description="Voxel-based rendering pipeline for large 3D line sets.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    vx = sub.add_parser("voxelize", help="discretize a curve set into a .vxl model")
    vx.add_argument("--input", required=True, help=_INPUT_HELP)
    vx.add_argument("--grid", required=True,
                    help="longest-axis resolution, or explicit RX,RY,RZ")
    vx.add_argument("--bins", type=int, default=32,
                    help="face bins per axis, power of two (default 32)")
    vx.add_argument("--out", required=True, help="output .vxl path")
    vx.add_argument("--with-lod", action="store_true",
                    help="also build and store the density octree and representative lines")
    _add_threads(vx)
    vx.set_defaults(func=cmd_voxelize)

    pa = sub.add_parser("precompute-ao",
                        help="bake per-voxel ambient occlusion into a .vxl model")
    pa.add_argument("--model", required=True, help=".vxl model to augment")
    pa.add_argument("--rays", type=int, default=100, help="directions per voxel (default 100)")
    pa.add_argument("--radius", type=float, default=5.0,
                    help="radius of influence in voxels (default 5)")
    pa.add_argument("--step", type=float, default=1.0,
                    help="density sampling step in voxels (default 1)")
    pa.add_argument("--out", default=None,
                    help="output path (default: rewrite the input model)")
    _add_threads(pa)
    pa.set_defaults(func=cmd_precompute_ao)

    rd = sub.add_parser("render", help="render one frame from a .vxl model")
    rd.add_argument("--model", required=True, help=".vxl model to render")
    rd.add_argument("--camera", metavar="PX,PY,PZ,TX,TY,TZ,FOV", default=None,
                    help="position, target, vertical fov; default frames the whole grid")
    rd.add_argument("--up", metavar="X,Y,Z", default=None, help="camera up (default 0,0,1)")
    rd.add_argument("--size", default="640x360", help="image size WxH (default 640x360)")
    rd.add_argument("--out", required=True,
                    help="output image (.ppm always, .png when Pillow is installed)")
    _add_param_flags(rd)
    _add_threads(rd)
    rd.set_defaults(func=cmd_render)

    mt = sub.add_parser("metrics",
                        help="voxelize and report memory/fidelity metrics as JSON")
    mt.add_argument("--input", required=True, help=_INPUT_HELP)
    mt.add_argument("--grid", required=True,
                    help="longest-axis resolution, or explicit RX,RY,RZ")
    mt.add_argument("--bins", type=int, default=32)
    mt.add_argument("--json", default=None, metavar="PATH",
                    help="write the report here instead of stdout")
    mt.add_argument("--spacing", type=float, default=0.1,
                    help="arc-length sample spacing for fidelity metrics (default 0.1)")
    _add_threads(mt)
    mt.set_defaults(func=cmd_metrics)

    bn = sub.add_parser("bench", help="render a scripted camera orbit and report timings")
    bn.add_argument("--model", required=True, help=".vxl model to orbit")
    bn.add_argument("--frames", type=int, default=60, help="orbit length (default 60)")
    bn.add_argument("--size", default="640x360", help="image size WxH (default 640x360)")
    bn.add_argument("--quality", choices=("moving", "still"), default="moving",
                    help="motion hint for neighbor_mode=auto (default moving)")
    bn.add_argument("--json", default=None, metavar="PATH",
                    help="write the report here instead of stdout")
    _add_param_flags(bn)
    _add_threads(bn)
    bn.set_defaults(func=cmd_bench)

    sv = sub.add_parser("serve", help="WebSocket frame service plus the static viewer")
    sv.add_argument("--model", default=None, help="preload this .vxl model")
    sv.add_argument("--port", type=int, default=9870, help="WebSocket port (default 9870)")
    sv.add_argument("--http-port", type=int, default=9871,
                    help="static viewer port (default 9871)")
    _add_threads(sv)
    sv.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", None) is None:
            args.threads = _default_threads()
        elif args.threads < 1:
            raise ValueError("--threads must be >= 1")
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
