"""Depth image file formats.

* PNG: 16-bit grayscale, millimeters, 0 = invalid.
* Raw: 16-byte header (magic ``GFDI``, u32 width, u32 height, u32 reserved,
  little-endian) then row-major little-endian float32 meters.
"""
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import DepthImage

RAW_MAGIC = b"GFDI"
_HEADER = struct.Struct("<4sIII")


def write_png(img: DepthImage, path):
    mm = np.rint(img.pixels * 1000.0)
    if mm.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit millimeter range")
    arr = mm.astype("<u2")
    Image.fromarray(arr).save(path, format="PNG")


def read_png(path) -> DepthImage:
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.uint16)
    return DepthImage(arr.astype(float) / 1000.0)


def write_raw(img: DepthImage, path):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RAW_MAGIC, w, h, 0))
        fh.write(np.ascontiguousarray(img.pixels, dtype="<f4").tobytes())


def read_raw(path) -> DepthImage:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated depth header")
    magic, w, h, _ = _HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 4 * w * h:
        raise ValueError(f"{path}: expected {4 * w * h} payload bytes, got {len(body)}")
    return DepthImage(np.frombuffer(body, dtype="<f4").reshape(h, w).astype(float))


def write_depth(img: DepthImage, path):
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(img, path)
    else:
        write_raw(img, path)


def read_depth(path) -> DepthImage:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    return read_raw(path)
