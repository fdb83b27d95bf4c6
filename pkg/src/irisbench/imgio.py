"""8-bit single-channel image files, PNG or binary PGM."""

from __future__ import annotations

from pathlib import Path

import numpy as np

FORMATS = ("png", "pgm")


def write_image(arr: np.ndarray, path):
    """Write a uint8 grayscale array; format chosen by extension."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise ValueError("expected a 2-D uint8 array")
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
            fh.write(arr.tobytes())
    elif suffix == ".png":
        from PIL import Image
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported image extension {suffix!r}")


def read_image(path) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        with open(path, "rb") as fh:
            data = fh.read()
        return _parse_pgm(data, path)
    from PIL import Image
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


def _parse_pgm(data: bytes, path):
    # header: magic, width, height, maxval, single whitespace, raster
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy()
