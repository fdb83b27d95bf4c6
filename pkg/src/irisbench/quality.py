"""Capture quality scoring and standard/challenging categorization.

Five dimensions, each normalized to [0, 1] with higher meaning worse:

* eyelid_occ   - fraction of the iris ellipse covered by eyelid
* eyelash_occ  - fraction covered by eyelash strokes
* pupil_ratio  - pupil-to-iris diameter ratio (dilation proxy)
* gaze_dev     - distance of the gaze point from the grid center
* reflection   - fraction covered by specular reflections

A sample is challenging when any dimension strictly exceeds its
threshold; the exceeded set is kept because downstream protocol pools
select on the specific failing dimensions, not just the label.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy import ndimage

from .datamodel import QUALITY_DIMS, Annotation, QualityScores, SampleRecord
from .errors import MissingAnnotation

# an occlusion component at least this wide relative to the iris
# diameter is read as eyelid; narrower ones as eyelash
LID_WIDTH_FACTOR = 0.6


@dataclass(frozen=True)
class QualityThresholds:
    eyelid_occ: float = 0.20
    eyelash_occ: float = 0.15
    pupil_ratio: float = 0.63
    gaze_dev: float = 0.70
    reflection: float = 0.10

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def override(self, **kwargs) -> "QualityThresholds":
        unknown = set(kwargs) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown quality dimensions {sorted(unknown)}")
        return replace(self, **kwargs)


def gaze_deviation(gaze_point: int) -> float:
    """0 at the grid center, 0.5 at edge midpoints, 1 at corners."""
    col = (gaze_point - 1) % 3
    row = (gaze_point - 1) // 3
    return (abs(col - 1) + abs(row - 1)) / 2.0


def _iris_window(ann: Annotation, shape):
    bb = ann.iris_ellipse.bbox()
    h, w = shape
    x0 = int(np.clip(np.floor(bb.x), 0, w))
    x1 = int(np.clip(np.ceil(bb.x + bb.w) + 1, 0, w))
    y0 = int(np.clip(np.floor(bb.y), 0, h))
    y1 = int(np.clip(np.ceil(bb.y + bb.h) + 1, 0, h))
    return x0, x1, y0, y1


def occlusion_components(ann: Annotation):
    """Within-iris occlusion split into (eyelid_px, eyelash_px, iris_px).

    Connected components of the occlusion mask restricted to the iris
    ellipse are classified by width: anything spanning at least
    LID_WIDTH_FACTOR of the iris diameter counts as eyelid.  The cutoff
    is heuristic; a lid that barely clips the iris rim reads as lash,
    but such grazes contribute negligible area either way.
    """
    occ = ann.occlusion_mask.array
    x0, x1, y0, y1 = _iris_window(ann, occ.shape)
    if x0 >= x1 or y0 >= y1:
        return 0, 0, 0
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = ann.iris_ellipse.contains(xx, yy)
    iris_px = int(inside.sum())
    hit = inside & (occ[y0:y1, x0:x1] != 0)
    if not hit.any():
        return 0, 0, iris_px
    labels, n = ndimage.label(hit, structure=np.ones((3, 3), dtype=int))
    lid_px = 0
    lash_px = 0
    min_width = LID_WIDTH_FACTOR * 2.0 * ann.iris_ellipse.a
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        px = int((labels[sl] == idx).sum())
        width = sl[1].stop - sl[1].start
        if width >= min_width:
            lid_px += px
        else:
            lash_px += px
    return lid_px, lash_px, iris_px


def score_quality(record: SampleRecord) -> QualityScores:
    """Quality dimensions from a record's ground-truth annotation."""
    ann = record.annotation
    if ann is None:
        raise MissingAnnotation(record.sample_id)
    lid_px, lash_px, iris_px = occlusion_components(ann)
    refl = ann.reflection_mask.array
    x0, x1, y0, y1 = _iris_window(ann, refl.shape)
    refl_frac = 0.0
    if iris_px > 0 and x0 < x1 and y0 < y1:
        yy, xx = np.mgrid[y0:y1, x0:x1]
        inside = ann.iris_ellipse.contains(xx, yy)
        refl_frac = float((inside & (refl[y0:y1, x0:x1] != 0)).sum()) / iris_px
    lid_frac = lid_px / iris_px if iris_px else 1.0
    lash_frac = lash_px / iris_px if iris_px else 1.0
    clamp = lambda v: float(min(1.0, max(0.0, v)))
    return QualityScores(
        eyelid_occ=clamp(lid_frac),
        eyelash_occ=clamp(lash_frac),
        pupil_ratio=clamp(ann.pupil_ellipse.a / ann.iris_ellipse.a),
        gaze_dev=clamp(gaze_deviation(record.gaze_point)),
        reflection=clamp(refl_frac),
    )


def exceeded_dims(scores: QualityScores,
                  thresholds: QualityThresholds = QualityThresholds()):
    """Dimensions strictly above threshold, as a frozenset of names."""
    return frozenset(dim for dim in QUALITY_DIMS
                     if getattr(scores, dim) > getattr(thresholds, dim))


def categorize(scores: QualityScores,
               thresholds: QualityThresholds = QualityThresholds()) -> str:
    return "challenging" if exceeded_dims(scores, thresholds) else "standard"


def score_records(records, thresholds: QualityThresholds = QualityThresholds()):
    """Fill quality and category on every annotated record.

    Records without annotation pass through untouched; they carry no
    scores and never enter protocol pools.
    """
    out = []
    for rec in records:
        if rec.annotation is None:
            out.append(rec)
            continue
        q = score_quality(rec)
        out.append(replace(rec, quality=q, category=categorize(q, thresholds)))
    return out


def clean(records):
    """Drop records whose annotation is missing."""
    return [rec for rec in records if rec.annotation is not None]


def challenging_fraction(records) -> float:
    cats = [rec.category for rec in records if rec.category is not None]
    if not cats:
        return 0.0
    return sum(c == "challenging" for c in cats) / len(cats)
