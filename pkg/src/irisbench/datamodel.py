"""Core record types and their on-disk formats.

Three interchange formats live here:

* dataset manifest: JSON Lines, one sample record per line, with
  geometry annotations inline.  Binary masks are stored either as a
  compressed run-length string (synthetic data) or as a path to an
  external 8-bit raster (real data).
* template store: little-endian binary container for iris codes or
  embeddings, magic ``IRTB``.
* the in-memory types (Ellipse, BBox, Annotation, QualityScores,
  SampleRecord, IrisCode, Embedding) used by every other module.

Records are immutable after load; derived stages produce new records
via :func:`dataclasses.replace`.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DuplicateId, InvariantViolation, MixedKinds, ParseError,
                     ShapeMismatch)

EYES = ("L", "R")
CATEGORIES = ("standard", "challenging")
SPLITS = ("train", "test")
GAZE_POINTS = tuple(range(1, 10))
BRIGHTNESS_LEVELS = tuple(range(0, 11))
FRAMES_PER_LEVEL = 5

MANIFEST_KEYS = ("sample_id", "subject_id", "eye", "gaze_point",
                 "brightness_level", "frame_idx", "image_ref", "annotation",
                 "quality", "category", "split")

CODE_KINDS = ("gabor", "ordinal")
_STORE_MAGIC = b"IRTB"
_STORE_VERSION = 1
_KIND_TO_TAG = {"gabor": 0, "ordinal": 1, "embedding": 2}
_TAG_TO_KIND = {v: k for k, v in _KIND_TO_TAG.items()}


# ---- geometry ----

@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, x/y top-left corner in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"bbox sides must be positive, got {self.w}x{self.h}")

    def to_json(self):
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_json(cls, obj):
        return cls(*map(float, obj))


@dataclass(frozen=True)
class Ellipse:
    """cx/cy center, a/b semi-axes (a >= b), phi major-axis angle.

    phi is normalized into [0, pi).  Boundary points are evaluated in
    the ellipse frame and rotated out, with the angular parameter taken
    in image coordinates so that rotating the image rotates the
    parameterization by the same amount.
    """

    cx: float
    cy: float
    a: float
    b: float
    phi: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError(f"need a >= b > 0, got a={self.a} b={self.b}")
        phi = self.phi % math.pi
        object.__setattr__(self, "phi", phi)

    def boundary_point(self, theta):
        """Point on the boundary at image-frame angle ``theta``.

        Accepts scalars or arrays.
        """
        t = np.asarray(theta, dtype=np.float64) - self.phi
        ex = self.a * np.cos(t)
        ey = self.b * np.sin(t)
        c, s = math.cos(self.phi), math.sin(self.phi)
        return self.cx + c * ex - s * ey, self.cy + s * ex + c * ey

    def bbox(self) -> BBox:
        c, s = math.cos(self.phi), math.sin(self.phi)
        ex = math.hypot(self.a * c, self.b * s)
        ey = math.hypot(self.a * s, self.b * c)
        return BBox(self.cx - ex, self.cy - ey, 2 * ex, 2 * ey)

    def contains(self, x, y):
        """Interior test, vectorized over x/y arrays."""
        dx = np.asarray(x, dtype=np.float64) - self.cx
        dy = np.asarray(y, dtype=np.float64) - self.cy
        c, s = math.cos(self.phi), math.sin(self.phi)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0

    def area(self):
        return math.pi * self.a * self.b

    def to_json(self):
        return [self.cx, self.cy, self.a, self.b, self.phi]

    @classmethod
    def from_json(cls, obj):
        return cls(*map(float, obj))


# ---- binary masks ----

def _encode_varints(values: np.ndarray) -> bytes:
    """LEB128-style encoding, vectorized; values must fit 21 bits."""
    v = np.asarray(values, dtype=np.uint32)
    if v.size and int(v.max()) >= 1 << 21:
        raise ValueError("run length too large for varint encoding")
    nbytes = np.where(v < 1 << 7, 1, np.where(v < 1 << 14, 2, 3)).astype(np.int64)
    ends = np.cumsum(nbytes)
    starts = ends - nbytes
    out = np.zeros(int(ends[-1]) if v.size else 0, dtype=np.uint8)
    m1 = nbytes == 1
    m2 = nbytes == 2
    m3 = nbytes == 3
    out[starts[m1]] = v[m1]
    out[starts[m2]] = (v[m2] & 0x7F) | 0x80
    out[starts[m2] + 1] = v[m2] >> 7
    out[starts[m3]] = (v[m3] & 0x7F) | 0x80
    out[starts[m3] + 1] = ((v[m3] >> 7) & 0x7F) | 0x80
    out[starts[m3] + 2] = v[m3] >> 14
    return out.tobytes()


def _decode_varints(buf: bytes) -> np.ndarray:
    b = np.frombuffer(buf, dtype=np.uint8)
    if b.size == 0:
        return np.zeros(0, dtype=np.int64)
    last = b < 0x80
    if not last[-1]:
        raise ValueError("truncated varint stream")
    ends = np.nonzero(last)[0]
    starts = np.concatenate([[0], ends[:-1] + 1])
    lens = ends - starts + 1
    if int(lens.max()) > 3:
        raise ValueError("varint too long")
    vals = (b[starts] & 0x7F).astype(np.int64)
    m2 = lens >= 2
    vals[m2] |= (b[starts[m2] + 1] & 0x7F).astype(np.int64) << 7
    m3 = lens >= 3
    vals[m3] |= (b[starts[m3] + 2] & 0x7F).astype(np.int64) << 14
    return vals


def mask_to_rle(arr: np.ndarray) -> str:
    """Compress a binary mask to an ascii string.

    Row-major run lengths (first run counts zeros), varint-packed,
    deflated, base64.
    """
    flat = np.ascontiguousarray(arr, dtype=np.uint8).ravel()
    if flat.size == 0:
        raise ValueError("empty mask")
    edges = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], edges, [flat.size]])
    runs = np.diff(bounds)
    if flat[0] != 0:
        runs = np.concatenate([[0], runs])
    # long runs are split so every varint fits three bytes
    limit = (1 << 21) - 1
    if int(runs.max()) > limit:
        out = []
        for i, r in enumerate(runs):
            r = int(r)
            while r > limit:
                out.extend([limit, 0])
                r -= limit
            out.append(r)
        runs = np.asarray(out, dtype=np.int64)
    payload = zlib.compress(_encode_varints(runs), 6)
    return base64.b64encode(payload).decode("ascii")


def rle_to_mask(data: str, shape) -> np.ndarray:
    runs = _decode_varints(zlib.decompress(base64.b64decode(data)))
    total = int(runs.sum())
    h, w = shape
    if total != h * w:
        raise ValueError(f"run lengths sum to {total}, expected {h * w}")
    vals = np.zeros(len(runs), dtype=np.uint8)
    vals[1::2] = 1
    return np.repeat(vals, runs).reshape(h, w)


class Mask:
    """Binary raster, held compressed.

    Backed either by an inline RLE string or by an external image file
    (8-bit raster, nonzero means set).  ``array`` decodes on every
    access rather than caching; a corpus holds hundreds of thousands of
    masks, so resident full-frame rasters are not affordable.
    """

    __slots__ = ("shape", "_rle", "_path")

    def __init__(self, shape, rle=None, path=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self._rle = rle
        self._path = path
        if rle is None and path is None:
            raise ValueError("mask needs rle or path backing")

    @classmethod
    def from_array(cls, arr) -> "Mask":
        arr = (np.asarray(arr) != 0).astype(np.uint8)
        return cls(arr.shape, rle=mask_to_rle(arr))

    @property
    def array(self) -> np.ndarray:
        if self._rle is not None:
            return rle_to_mask(self._rle, self.shape)
        from PIL import Image
        raster = np.asarray(Image.open(self._path))
        if raster.shape != self.shape:
            raise ShapeMismatch(
                f"mask raster {self._path} is {raster.shape}, "
                f"expected {self.shape}")
        return (raster != 0).astype(np.uint8)

    def to_json(self):
        if self._path is not None:
            return {"shape": list(self.shape), "path": str(self._path)}
        return {"shape": list(self.shape), "rle": self._rle}

    @classmethod
    def from_json(cls, obj, base_dir=None):
        shape = obj["shape"]
        if "rle" in obj:
            return cls(shape, rle=obj["rle"])
        path = obj["path"]
        if base_dir is not None:
            path = str(Path(base_dir) / path)
        return cls(shape, path=path)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self.array, other.array))


# ---- annotation and quality ----

@dataclass(frozen=True)
class Annotation:
    ocular_bbox: BBox
    iris_bbox: BBox
    iris_ellipse: Ellipse
    pupil_ellipse: Ellipse
    occlusion_mask: Mask
    reflection_mask: Mask

    def __post_init__(self):
        ie, pe = self.iris_ellipse, self.pupil_ellipse
        dist = math.hypot(pe.cx - ie.cx, pe.cy - ie.cy)
        if not dist + pe.a < ie.a:
            raise ValueError("pupil ellipse not strictly inside iris ellipse")
        if self.occlusion_mask.shape != self.reflection_mask.shape:
            raise ValueError("occlusion and reflection masks disagree on shape")

    def to_json(self):
        return {
            "ocular_bbox": self.ocular_bbox.to_json(),
            "iris_bbox": self.iris_bbox.to_json(),
            "iris_ellipse": self.iris_ellipse.to_json(),
            "pupil_ellipse": self.pupil_ellipse.to_json(),
            "occlusion_mask": self.occlusion_mask.to_json(),
            "reflection_mask": self.reflection_mask.to_json(),
        }

    @classmethod
    def from_json(cls, obj, base_dir=None):
        return cls(
            ocular_bbox=BBox.from_json(obj["ocular_bbox"]),
            iris_bbox=BBox.from_json(obj["iris_bbox"]),
            iris_ellipse=Ellipse.from_json(obj["iris_ellipse"]),
            pupil_ellipse=Ellipse.from_json(obj["pupil_ellipse"]),
            occlusion_mask=Mask.from_json(obj["occlusion_mask"], base_dir),
            reflection_mask=Mask.from_json(obj["reflection_mask"], base_dir),
        )


QUALITY_DIMS = ("eyelid_occ", "eyelash_occ", "pupil_ratio", "gaze_dev",
                "reflection")


@dataclass(frozen=True)
class QualityScores:
    """Per-dimension degradation scores, 0 clean .. 1 worst."""

    eyelid_occ: float
    eyelash_occ: float
    pupil_ratio: float
    gaze_dev: float
    reflection: float

    def __post_init__(self):
        for dim in QUALITY_DIMS:
            v = getattr(self, dim)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{dim}={v} outside [0, 1]")

    def as_dict(self):
        return {dim: getattr(self, dim) for dim in QUALITY_DIMS}

    def to_json(self):
        return self.as_dict()

    @classmethod
    def from_json(cls, obj):
        return cls(**{dim: float(obj[dim]) for dim in QUALITY_DIMS})


# ---- sample records / manifest ----

@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    subject_id: str
    eye: str
    gaze_point: int
    brightness_level: int
    frame_idx: int
    image_ref: str
    annotation: Annotation | None = None
    quality: QualityScores | None = None
    category: str | None = None
    split: str | None = None

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("empty sample_id")
        if self.eye not in EYES:
            raise ValueError(f"eye must be one of {EYES}, got {self.eye!r}")
        if self.gaze_point not in GAZE_POINTS:
            raise ValueError(f"gaze_point {self.gaze_point} outside 1..9")
        if self.brightness_level not in BRIGHTNESS_LEVELS:
            raise ValueError(f"brightness_level {self.brightness_level} outside 0..10")
        if not (0 <= self.frame_idx < FRAMES_PER_LEVEL):
            raise ValueError(f"frame_idx {self.frame_idx} outside 0..4")
        if self.category is not None and self.category not in CATEGORIES:
            raise ValueError(f"category {self.category!r} invalid")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"split {self.split!r} invalid")

    @property
    def class_label(self) -> str:
        """Identity label: one class per (subject, eye)."""
        return f"{self.subject_id}/{self.eye}"

    def to_json(self):
        return {
            "sample_id": self.sample_id,
            "subject_id": self.subject_id,
            "eye": self.eye,
            "gaze_point": self.gaze_point,
            "brightness_level": self.brightness_level,
            "frame_idx": self.frame_idx,
            "image_ref": self.image_ref,
            "annotation": None if self.annotation is None else self.annotation.to_json(),
            "quality": None if self.quality is None else self.quality.to_json(),
            "category": self.category,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj, base_dir=None):
        extra = set(obj) - set(MANIFEST_KEYS)
        if extra:
            raise ValueError(f"unknown manifest keys {sorted(extra)}")
        missing = set(MANIFEST_KEYS[:7]) - set(obj)
        if missing:
            raise ValueError(f"missing manifest keys {sorted(missing)}")
        ann = obj.get("annotation")
        qual = obj.get("quality")
        return cls(
            sample_id=str(obj["sample_id"]),
            subject_id=str(obj["subject_id"]),
            eye=obj["eye"],
            gaze_point=int(obj["gaze_point"]),
            brightness_level=int(obj["brightness_level"]),
            frame_idx=int(obj["frame_idx"]),
            image_ref=str(obj["image_ref"]),
            annotation=None if ann is None else Annotation.from_json(ann, base_dir),
            quality=None if qual is None else QualityScores.from_json(qual),
            category=obj.get("category"),
            split=obj.get("split"),
        )


def save_manifest(records, path):
    """Write records as JSON Lines, preserving order."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":"),
                                allow_nan=False))
            fh.write("\n")


def load_manifest(path):
    """Read a JSON Lines manifest into SampleRecords.

    Raises ParseError with the offending line number, DuplicateId on a
    repeated sample_id, InvariantViolation when a record fails its own
    field validation.
    """
    path = Path(path)
    base_dir = path.parent
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(str(e), line_no) from None
            if not isinstance(obj, dict):
                raise ParseError("record is not an object", line_no)
            sid = obj.get("sample_id")
            try:
                rec = SampleRecord.from_json(obj, base_dir)
            except (KeyError, TypeError) as e:
                raise ParseError(f"malformed record: {e}", line_no) from None
            except ValueError as e:
                if sid is None:
                    raise ParseError(str(e), line_no) from None
                raise InvariantViolation(sid, "record", str(e)) from None
            if rec.sample_id in seen:
                raise DuplicateId(rec.sample_id)
            seen.add(rec.sample_id)
            records.append(rec)
    return records


# ---- templates ----

@dataclass(frozen=True)
class IrisCode:
    """Packed binary texture code with a validity mask.

    layout = (rows, grid_cols, bits_per_position); total bit count is
    the product.  ``bits`` and ``mask`` are packbits() arrays in
    row-major (row, col, bit) order.  Rotation by one grid column moves
    every position by bits_per_position bit positions within its row.
    """

    kind: str
    bits: np.ndarray
    mask: np.ndarray
    layout: tuple

    def __post_init__(self):
        if self.kind not in CODE_KINDS:
            raise ValueError(f"kind {self.kind!r} not in {CODE_KINDS}")
        rows, cols, bpp = self.layout
        if rows <= 0 or cols <= 0 or bpp <= 0:
            raise ValueError(f"bad layout {self.layout}")
        object.__setattr__(self, "layout", (int(rows), int(cols), int(bpp)))
        n = self.n_bits
        nbytes = (n + 7) // 8
        for name in ("bits", "mask"):
            arr = getattr(self, name)
            arr = np.ascontiguousarray(arr, dtype=np.uint8)
            if arr.shape != (nbytes,):
                raise ValueError(f"{name} must pack to {nbytes} bytes")
            object.__setattr__(self, name, arr)

    @property
    def n_bits(self) -> int:
        rows, cols, bpp = self.layout
        return rows * cols * bpp

    @classmethod
    def from_bools(cls, kind, bits, mask, layout):
        rows, cols, bpp = layout
        bits = np.asarray(bits, dtype=bool).reshape(rows * cols * bpp)
        mask = np.asarray(mask, dtype=bool).reshape(rows * cols * bpp)
        return cls(kind, np.packbits(bits), np.packbits(mask), tuple(layout))

    def unpacked(self):
        """(bits, mask) as bool arrays shaped (rows, cols, bpp)."""
        rows, cols, bpp = self.layout
        n = self.n_bits
        b = np.unpackbits(self.bits, count=n).astype(bool).reshape(rows, cols, bpp)
        m = np.unpackbits(self.mask, count=n).astype(bool).reshape(rows, cols, bpp)
        return b, m

    def rotate(self, s: int) -> "IrisCode":
        """Circular shift by s grid columns (within each row)."""
        b, m = self.unpacked()
        return IrisCode.from_bools(self.kind, np.roll(b, s, axis=1),
                                   np.roll(m, s, axis=1), self.layout)

    def __eq__(self, other):
        if not isinstance(other, IrisCode):
            return NotImplemented
        return (self.kind == other.kind and self.layout == other.layout
                and np.array_equal(self.bits, other.bits)
                and np.array_equal(self.mask, other.mask))


UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class Embedding:
    """Unit-norm float64 vector; similarity is the dot product."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("embedding must be a nonempty 1-D vector")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"embedding norm {norm} not within {UNIT_NORM_TOL} of 1")
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return np.array_equal(self.values, other.values)


def _template_kind(t):
    return t.kind if isinstance(t, IrisCode) else "embedding"


def save_templates(templates: dict, path):
    """Serialize an id -> IrisCode/Embedding map.

    All entries must share one kind (and layout or dims); records are
    written sorted by id.  An empty map writes a valid header-only file.
    """
    kinds = {_template_kind(t) for t in templates.values()}
    if len(kinds) > 1:
        raise MixedKinds(f"mixed template kinds {sorted(kinds)}")
    kind = kinds.pop() if kinds else "embedding"
    ids = sorted(templates)

    if kind == "embedding":
        dims = {t.dims for t in templates.values()}
        if len(dims) > 1:
            raise MixedKinds(f"mixed embedding dims {sorted(dims)}")
        dim = dims.pop() if dims else 0
        header_tail = struct.pack("<I", dim)
    else:
        layouts = {t.layout for t in templates.values()}
        if len(layouts) > 1:
            raise MixedKinds(f"mixed code layouts {sorted(layouts)}")
        rows, cols, bpp = layouts.pop()
        header_tail = struct.pack("<III", rows, cols, bpp)

    with open(path, "wb") as fh:
        fh.write(_STORE_MAGIC)
        fh.write(struct.pack("<BB", _STORE_VERSION, _KIND_TO_TAG[kind]))
        fh.write(header_tail)
        fh.write(struct.pack("<Q", len(ids)))
        for sid in ids:
            t = templates[sid]
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            if kind == "embedding":
                fh.write(t.values.astype("<f8").tobytes())
            else:
                fh.write(t.bits.tobytes())
                fh.write(t.mask.tobytes())


def load_templates(path) -> dict:
    def need(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise ParseError(f"truncated template store ({what})")
        return buf

    with open(path, "rb") as fh:
        if need(fh, 4, "magic") != _STORE_MAGIC:
            raise ParseError("bad magic, not a template store")
        version, tag = struct.unpack("<BB", need(fh, 2, "header"))
        if version != _STORE_VERSION:
            raise ParseError(f"unsupported store version {version}")
        if tag not in _TAG_TO_KIND:
            raise ParseError(f"unknown template kind tag {tag}")
        kind = _TAG_TO_KIND[tag]
        if kind == "embedding":
            (dim,) = struct.unpack("<I", need(fh, 4, "dims"))
        else:
            rows, cols, bpp = struct.unpack("<III", need(fh, 12, "layout"))
            nbytes = (rows * cols * bpp + 7) // 8
        (count,) = struct.unpack("<Q", need(fh, 8, "count"))
        out = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<I", need(fh, 4, "id length"))
            sid = need(fh, id_len, "id").decode("utf-8")
            if sid in out:
                raise DuplicateId(sid)
            if kind == "embedding":
                vals = np.frombuffer(need(fh, 8 * dim, "embedding"), dtype="<f8").copy()
                # foreign stores may carry drifted norms; repair on load
                norm = float(np.linalg.norm(vals))
                if abs(norm - 1.0) > UNIT_NORM_TOL:
                    if norm < 1e-12:
                        raise ParseError(f"zero-norm embedding for {sid!r}")
                    vals /= norm
                out[sid] = Embedding(vals)
            else:
                bits = np.frombuffer(need(fh, nbytes, "bits"), dtype=np.uint8)
                mask = np.frombuffer(need(fh, nbytes, "mask"), dtype=np.uint8)
                out[sid] = IrisCode(kind, bits.copy(), mask.copy(),
                                    (rows, cols, bpp))
        if fh.read(1):
            raise ParseError("trailing bytes after last template")
    return out
