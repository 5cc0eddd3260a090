"""Voxel-backed rendering of large 3D line sets.

The pipeline discretizes polylines into a two-level structure (a coarse voxel
grid whose cell faces carry quantized entry/exit bins), derives a density
octree with representative lines for level-of-detail shading, and ray-casts
tube primitives reconstructed on the fly from the compact encoding.  Fully
transparent rendering with correct depth ordering, soft shadows, and ambient
occlusion runs on the CPU; a WebSocket service streams frames to a browser
viewer.

Submodules are imported lazily so that lightweight entry points (CLI help,
file inspection) do not pay the JIT-compilation import cost of the render
kernels.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "scene_io": [
        "Curve", "CurveSet", "CurveFormatError", "GridSpec",
        "generate_tornado", "grid_spec_for", "load_lines_binary",
        "load_obj_lines", "normalize_to_grid", "save_lines_binary",
        "tornado_bound",
    ],
    "voxelizer": [
        "QuantizedSegment", "VoxelModel", "build_voxel_model",
        "clip_curve_to_voxels", "count_duplicates", "pack_segment",
        "quantize_point_on_face", "record_width", "unpack_segment",
    ],
    "lod": [
        "DensityOctree", "RepLineField", "build_octree",
        "build_rep_lines", "compute_density_level0", "representative_line",
    ],
    "raycast": [
        "Camera", "Frame", "HitRecord", "RenderParams", "composite",
        "gather_voxel_hits", "intersect_ray_sphere", "intersect_ray_tube",
        "render_frame", "shade_local", "traverse_voxels",
    ],
    "illumination": [
        "AOField", "AOParams", "ao_density_rays", "ao_hemisphere_geometry",
        "cone_soft_shadow", "hard_shadow", "precompute_voxel_ao",
        "replines_shadow", "sample_ao",
    ],
    "metrics": [
        "brute_force_render", "image_compare", "mean_hausdorff",
        "mean_tangent_deviation", "memory_report",
    ],
    "model_io": ["ModelFormatError", "load_vxl", "save_vxl"],
    "imaging": ["png_available", "png_bytes", "read_ppm", "to_uint8",
                "write_image", "write_png", "write_ppm"],
}

_ATTR_TO_MODULE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = ["__version__", *_ATTR_TO_MODULE]


def __getattr__(name: str):
    mod = _ATTR_TO_MODULE.get(name)
    if mod is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(import_module(f".{mod}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(__all__)
