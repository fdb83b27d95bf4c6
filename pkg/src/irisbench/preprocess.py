"""Template-ready views of an ocular image.

Two preprocessing paradigms:

* :func:`bbox_crop` cuts a padded square around the iris box and
  resamples it to a fixed grid.  No polar unwrapping; downstream
  encoders must absorb the remaining geometric variation.
* :func:`rubber_sheet` unwraps the iris annulus between the pupil and
  iris boundaries into a rows x cols polar texture with a per-cell
  validity channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Annotation, BBox
from .errors import DegenerateGeometry, MissingAnnotation, NoOverlap


@dataclass(frozen=True)
class CropConfig:
    expand_factor: float = 1.2
    out_size: int = 112

    def __post_init__(self):
        if self.expand_factor <= 0 or self.out_size <= 0:
            raise ValueError("expand_factor and out_size must be positive")


@dataclass(frozen=True)
class RubberSheetConfig:
    rows: int = 64
    cols: int = 512

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("rows and cols must be positive")


@dataclass(frozen=True)
class NormalizedIris:
    """Polar iris texture in [0, 1] plus per-cell validity.

    Row 0 hugs the pupil boundary, the last row the iris boundary.
    Column c covers angle 2*pi*c/cols from the positive x axis.
    """

    texture: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.texture, dtype=np.float32)
        v = np.ascontiguousarray(self.validity, dtype=bool)
        if t.ndim != 2 or t.shape != v.shape:
            raise ValueError("texture and validity must be 2-D and congruent")
        object.__setattr__(self, "texture", t)
        object.__setattr__(self, "validity", v)


def _bilinear(image, px, py):
    """Sample image at float positions, zero outside; returns (values, inside)."""
    h, w = image.shape
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    vals = np.zeros(px.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            contrib = np.zeros(px.shape, dtype=np.float64)
            contrib[ok] = image[yi[ok], xi[ok]]
            vals += wgt * contrib
    inside = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    return vals, inside


def crop_window(iris_bbox: BBox, config: CropConfig = CropConfig()):
    """(x0, y0, side) of the expanded square crop window."""
    side = config.expand_factor * max(iris_bbox.w, iris_bbox.h)
    cx = iris_bbox.x + iris_bbox.w / 2.0
    cy = iris_bbox.y + iris_bbox.h / 2.0
    return cx - side / 2.0, cy - side / 2.0, side


def bbox_crop(image: np.ndarray, annotation, config: CropConfig = CropConfig()):
    """Square crop around the iris bbox, resampled to out_size**2.

    ``annotation`` may be an Annotation or a bare BBox.  The window is
    expand_factor times the larger bbox side, concentric with the bbox;
    area outside the image contributes exact zeros.  Returns float32 in
    the source gray range.
    """
    if annotation is None:
        raise MissingAnnotation("bbox_crop needs an iris bbox")
    bbox = annotation.iris_bbox if isinstance(annotation, Annotation) else annotation
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    h, w = image.shape
    x0, y0, side = crop_window(bbox, config)
    if x0 >= w or y0 >= h or x0 + side <= 0 or y0 + side <= 0:
        raise NoOverlap(f"crop window [{x0}, {x0 + side}) x [{y0}, {y0 + side}) "
                        f"misses the {w}x{h} image")
    n = config.out_size
    step = side / n
    # output pixel centers in source pixel-index coordinates
    xs = x0 + (np.arange(n, dtype=np.float64) + 0.5) * step - 0.5
    ys = y0 + (np.arange(n, dtype=np.float64) + 0.5) * step - 0.5
    px, py = np.meshgrid(xs, ys)
    vals, _ = _bilinear(image.astype(np.float64), px, py)
    return vals.astype(np.float32)


def rubber_sheet(image: np.ndarray, annotation: Annotation,
                 config: RubberSheetConfig = RubberSheetConfig()) -> NormalizedIris:
    """Unwrap the annulus between pupil and iris boundaries.

    Cell (r, c): theta = 2*pi*c/cols, sample point = pupil boundary
    point + ((r + 0.5)/rows) * (iris boundary point - pupil boundary
    point), bilinear gray over 255.  validity is 1 iff the point is in
    frame and not flagged in the occlusion mask.
    """
    if annotation is None:
        raise MissingAnnotation("rubber_sheet needs boundary annotation")
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    h, w = image.shape
    occ = annotation.occlusion_mask.array
    if occ.shape != (h, w):
        raise DegenerateGeometry(
            f"occlusion mask {occ.shape} does not match image {(h, w)}")

    theta = 2.0 * np.pi * np.arange(config.cols, dtype=np.float64) / config.cols
    in_x, in_y = annotation.pupil_ellipse.boundary_point(theta)
    out_x, out_y = annotation.iris_ellipse.boundary_point(theta)
    if not np.all(annotation.iris_ellipse.contains(in_x, in_y)):
        raise DegenerateGeometry("pupil boundary leaves the iris ellipse")

    frac = ((np.arange(config.rows, dtype=np.float64) + 0.5) / config.rows)[:, None]
    px = in_x[None, :] + frac * (out_x - in_x)[None, :]
    py = in_y[None, :] + frac * (out_y - in_y)[None, :]

    vals, inside = _bilinear(image.astype(np.float64), px, py)
    # occlusion lookup at the nearest pixel
    nx = np.clip(np.rint(px).astype(np.int64), 0, w - 1)
    ny = np.clip(np.rint(py).astype(np.int64), 0, h - 1)
    validity = inside & (occ[ny, nx] == 0)
    texture = (vals / 255.0).astype(np.float32)
    texture[~inside] = 0.0
    return NormalizedIris(texture=texture, validity=validity)
