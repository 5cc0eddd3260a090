"""Image export for rendered frames.

Frames are (H, W, 4) float32 premultiplied RGBA in [0, 1].  Binary PPM (P6)
needs nothing beyond the standard library and is always written natively;
PNG goes through Pillow when that is importable.  With the usual opaque
background the premultiplied RGB channels already are the final pixel
colors, so PPM's lack of an alpha channel loses nothing.
"""

from __future__ import annotations

import io

import numpy as np

try:
    from PIL import Image as _PILImage
except ImportError:  # pragma: no cover - depends on the environment
    _PILImage = None


def png_available() -> bool:
    return _PILImage is not None


def to_uint8(image) -> np.ndarray:
    """Quantize a float image (or Frame) to 8 bits per channel; uint8 input
    passes through untouched."""
    if hasattr(image, "image"):
        image = image.image
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"expected (height, width, 3|4), got {arr.shape}")
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(image, path) -> None:
    """Binary PPM (P6), RGB, 8 bits per channel; alpha is dropped."""
    arr = to_uint8(image)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr[:, :, :3]).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read back a binary PPM written by :func:`write_ppm` (P6, maxval 255)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    off = 0
    while len(fields) < 4:
        while off < len(data) and data[off:off + 1].isspace():
            off += 1
        if data[off:off + 1] == b"#":  # comment runs to end of line
            off = data.index(b"\n", off) + 1
            continue
        end = off
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[off:end])
        off = end
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(fields[1]), int(fields[2])
    off += 1  # single whitespace after the header
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off)
    return pixels.reshape(h, w, 3).copy()


def write_png(image, path) -> None:
    """RGBA PNG via Pillow; raises RuntimeError when Pillow is missing."""
    if _PILImage is None:
        raise RuntimeError("PNG output needs Pillow; write PPM instead")
    arr = to_uint8(image)
    if arr.shape[2] == 3:
        _PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        _PILImage.fromarray(arr, mode="RGBA").save(path, format="PNG")


def png_bytes(image) -> bytes:
    """PNG-encode to memory (same pixels as :func:`write_png`)."""
    if _PILImage is None:
        raise RuntimeError("PNG output needs Pillow; write PPM instead")
    arr = to_uint8(image)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"expected (height, width, 3|4), got {arr.shape}")
    buf = io.BytesIO()
    mode = "RGB" if arr.shape[2] == 3 else "RGBA"
    _PILImage.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_image(image, path) -> None:
    """Dispatch on the file suffix: .ppm always works, .png needs Pillow."""
    name = str(path).lower()
    if name.endswith(".ppm"):
        write_ppm(image, path)
    elif name.endswith(".png"):
        write_png(image, path)
    else:
        raise ValueError(f"unsupported image suffix on {path!r} (use .ppm or .png)")
