"""Shared builders and corpus fixtures.

Most tests construct records and annotations directly so the property
under test is isolated from the simulator.  A small simulated corpus
(annotation-only, no pixel rasters) is shared session-wide for the
stages that need realistic structure; rendering real images is kept to
the handful of tests that read pixels.
"""

import numpy as np
import pytest

from irisbench.datamodel import (Annotation, Ellipse, Mask, QualityScores,
                                 SampleRecord)
from irisbench.quality import QualityThresholds, categorize, score_records
from irisbench.protocols import split_dataset
from irisbench.synthgen import (DEFAULT_DEGRADATIONS, SimulatorConfig,
                                generate_session, make_subject)

# small geometry keeps simulated fixtures fast without changing any
# contract under test
SMALL_SIM = SimulatorConfig(image_size=320, iris_radius_range=(52.0, 64.0))


def zeros_mask(size=64):
    return Mask.from_array(np.zeros((size, size), dtype=np.uint8))


def circle_annotation(size=64, rp=8.0, ri=20.0, cx=None, cy=None,
                      occ=None, refl=None):
    """Concentric-circle annotation centered in a size x size frame."""
    cx = size / 2.0 if cx is None else cx
    cy = size / 2.0 if cy is None else cy
    iris = Ellipse(cx, cy, ri, ri, 0.0)
    pupil = Ellipse(cx, cy, rp, rp, 0.0)
    to_mask = lambda m: zeros_mask(size) if m is None else Mask.from_array(m)
    return Annotation(ocular_bbox=iris.bbox(), iris_bbox=iris.bbox(),
                      iris_ellipse=iris, pupil_ellipse=pupil,
                      occlusion_mask=to_mask(occ), reflection_mask=to_mask(refl))


def make_scores(**kwargs):
    base = dict(eyelid_occ=0.0, eyelash_occ=0.0, pupil_ratio=0.5,
                gaze_dev=0.0, reflection=0.0)
    base.update(kwargs)
    return QualityScores(**base)


def make_record(sample_id, subject="s1", eye="L", gaze=5, level=0, frame=0,
                annotation="default", quality=None, category="auto",
                split=None, thresholds=QualityThresholds()):
    """Record builder; category defaults to following the quality scores."""
    if annotation == "default":
        annotation = circle_annotation()
    if category == "auto":
        category = None if quality is None else categorize(quality, thresholds)
    return SampleRecord(
        sample_id=sample_id, subject_id=subject, eye=eye, gaze_point=gaze,
        brightness_level=level, frame_idx=frame,
        image_ref=f"images/{subject}/{sample_id}.png",
        annotation=annotation, quality=quality, category=category, split=split)


@pytest.fixture(scope="session")
def sim_records():
    """Three simulated subjects, annotations only (no images on disk)."""
    out = []
    for i in range(1, 4):
        model = make_subject(f"sim{i:03d}", 99, SMALL_SIM)
        out.extend(generate_session(model, 99, out_dir=None, config=SMALL_SIM,
                                    profile=DEFAULT_DEGRADATIONS,
                                    render_images=False))
    return out


@pytest.fixture(scope="session")
def scored_records(sim_records):
    return score_records(sim_records)


@pytest.fixture(scope="session")
def split_records(scored_records):
    return split_dataset(scored_records, seed=5, train_fraction=0.34)
