"""Quality dimensions, categorization rule, and cleaning."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irisbench.datamodel import QUALITY_DIMS
from irisbench.errors import MissingAnnotation
from irisbench.quality import (QualityThresholds, categorize,
                               challenging_fraction, clean, exceeded_dims,
                               gaze_deviation, occlusion_components,
                               score_quality, score_records)

from conftest import circle_annotation, make_record, make_scores

SIZE = 128
R_IRIS = 40.0
R_PUPIL = 16.0


def _ann(occ=None, refl=None, rp=R_PUPIL, ri=R_IRIS):
    return circle_annotation(size=SIZE, rp=rp, ri=ri, occ=occ, refl=refl)


def _iris_interior_mask():
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    c = SIZE / 2.0
    return (xx - c) ** 2 + (yy - c) ** 2 <= R_IRIS ** 2


# ---- per-dimension scores ----

def test_zero_masks_center_gaze():
    rec = make_record("clean", gaze=5, annotation=_ann())
    q = score_quality(rec)
    assert q.eyelid_occ == 0.0
    assert q.eyelash_occ == 0.0
    assert q.gaze_dev == 0.0
    assert q.reflection == 0.0
    assert q.pupil_ratio == pytest.approx(R_PUPIL / R_IRIS)


def test_pupil_ratio_is_major_axis_ratio():
    rec = make_record("dilated", annotation=_ann(rp=30.0, ri=60.0))
    assert score_quality(rec).pupil_ratio == pytest.approx(0.5)


def test_eyelid_half_coverage_oracle():
    # a full-width band over the iris' upper half: one wide component
    occ = np.zeros((SIZE, SIZE), np.uint8)
    occ[: SIZE // 2, :] = 1
    rec = make_record("half", annotation=_ann(occ=occ))
    q = score_quality(rec)
    assert q.eyelid_occ == pytest.approx(0.5, abs=0.02)
    assert q.eyelash_occ == 0.0


def test_narrow_strokes_read_as_lash():
    # three 2px-wide vertical strokes: each far narrower than 0.6 of
    # the iris diameter, so all pixels count as eyelash
    occ = np.zeros((SIZE, SIZE), np.uint8)
    inside = _iris_interior_mask()
    for x in (52, 64, 76):
        occ[:, x : x + 2] = 1
    occ &= inside.astype(np.uint8)
    rec = make_record("lash", annotation=_ann(occ=occ))
    q = score_quality(rec)
    expected = (occ & inside).sum() / inside.sum()
    assert q.eyelash_occ == pytest.approx(expected, rel=0.05)
    assert q.eyelid_occ == 0.0


def test_component_width_rule_pixel_oracle():
    # wide bar -> lid; separate narrow bar -> lash; verify exact pixel
    # counts against a hand computation on the same raster
    occ = np.zeros((SIZE, SIZE), np.uint8)
    inside = _iris_interior_mask()
    occ[30:36, :] = 1                 # wide: spans the whole iris width
    occ[90:96, 60:66] = 1             # narrow 6px block
    occ &= inside.astype(np.uint8)
    lid_px, lash_px, iris_px = occlusion_components(_ann(occ=occ))
    assert iris_px == inside.sum()
    assert lid_px == (occ[30:36] & inside[30:36]).sum()
    assert lash_px == (occ[90:96] & inside[90:96]).sum()


def test_occlusion_outside_iris_ignored():
    occ = np.ones((SIZE, SIZE), np.uint8)
    occ[_iris_interior_mask()] = 0          # cover everything except the iris
    rec = make_record("outside", annotation=_ann(occ=occ))
    q = score_quality(rec)
    assert q.eyelid_occ == 0.0
    assert q.eyelash_occ == 0.0


def test_reflection_fraction_oracle():
    refl = np.zeros((SIZE, SIZE), np.uint8)
    refl[60:68, 60:68] = 1                  # 64 px blob inside the iris
    rec = make_record("glare", annotation=_ann(refl=refl))
    inside = _iris_interior_mask()
    expected = (refl.astype(bool) & inside).sum() / inside.sum()
    assert score_quality(rec).reflection == pytest.approx(expected, rel=1e-6)


def test_gaze_deviation_table():
    assert gaze_deviation(5) == 0.0
    for edge in (2, 4, 6, 8):
        assert gaze_deviation(edge) == 0.5
    for corner in (1, 3, 7, 9):
        assert gaze_deviation(corner) == 1.0


def test_missing_annotation_raises():
    rec = make_record("none", annotation=None)
    with pytest.raises(MissingAnnotation):
        score_quality(rec)


def test_scores_clamped():
    occ = np.ones((SIZE, SIZE), np.uint8)
    rec = make_record("full", annotation=_ann(occ=occ, refl=occ))
    q = score_quality(rec)
    for dim in QUALITY_DIMS:
        assert 0.0 <= getattr(q, dim) <= 1.0
    assert q.eyelid_occ == pytest.approx(1.0, abs=0.02)
    assert q.reflection == pytest.approx(1.0, abs=0.02)


# ---- categorization ----

def test_all_zero_is_standard():
    q = make_scores(pupil_ratio=0.0)
    assert categorize(q) == "standard"
    assert exceeded_dims(q) == frozenset()


def test_threshold_boundary_strict():
    thr = QualityThresholds()
    at = make_scores(eyelid_occ=thr.eyelid_occ)
    above = make_scores(eyelid_occ=thr.eyelid_occ + 1e-6)
    assert categorize(at, thr) == "standard"
    assert categorize(above, thr) == "challenging"
    assert exceeded_dims(above, thr) == {"eyelid_occ"}


def test_multiple_exceeded_dims_reported():
    q = make_scores(eyelash_occ=0.5, reflection=0.5)
    assert exceeded_dims(q) == {"eyelash_occ", "reflection"}


def test_flag_soundness_random():
    rng = np.random.default_rng(0)
    thr = QualityThresholds()
    for _ in range(300):
        q = make_scores(**{d: float(rng.random()) for d in QUALITY_DIMS})
        flags = exceeded_dims(q, thr)
        assert (categorize(q, thr) == "challenging") == bool(flags)
        for dim in flags:
            assert getattr(q, dim) > getattr(thr, dim)


@given(st.integers(0, 2 ** 31), st.sampled_from(QUALITY_DIMS),
       st.floats(0.0, 1.0))
@settings(max_examples=120, deadline=None)
def test_monotone_in_every_dimension(seed, dim, bump):
    """Raising any single score never flips challenging back to standard."""
    rng = np.random.default_rng(seed)
    scores = {d: float(rng.random()) for d in QUALITY_DIMS}
    q = make_scores(**scores)
    scores[dim] = min(1.0, scores[dim] + bump)
    q2 = make_scores(**scores)
    if categorize(q) == "challenging":
        assert categorize(q2) == "challenging"


def test_threshold_override():
    thr = QualityThresholds().override(pupil_ratio=0.5)
    assert thr.pupil_ratio == 0.5
    assert thr.eyelid_occ == QualityThresholds().eyelid_occ
    with pytest.raises(ValueError):
        QualityThresholds().override(sharpness=0.3)


# ---- batch operations ----

def test_score_records_fills_quality_and_category(scored_records):
    annotated = [r for r in scored_records if r.annotation is not None]
    assert annotated
    for rec in annotated[:200]:
        assert rec.quality is not None
        assert rec.category in ("standard", "challenging")
        assert (rec.category == "challenging") == bool(exceeded_dims(rec.quality))


def test_score_records_passes_unannotated_through(sim_records):
    dead = [r for r in sim_records if r.annotation is None][:5]
    out = score_records(dead)
    assert out == dead


def test_score_records_deterministic(sim_records):
    sample = [r for r in sim_records if r.annotation is not None][:40]
    a = score_records(sample)
    b = score_records(sample)
    assert a == b


def test_clean_keeps_annotated_preserving_order():
    recs = [make_record("a1"), make_record("a2", annotation=None),
            make_record("a3")]
    kept = clean(recs)
    assert [r.sample_id for r in kept] == ["a1", "a3"]
    assert clean([make_record("z", annotation=None)]) == []
    assert len(clean(recs)) + 1 == len(recs)


def test_challenging_fraction_in_calibration_band(scored_records):
    frac = challenging_fraction(scored_records)
    assert 0.36 <= frac <= 0.56


def test_challenging_fraction_vacuous():
    assert challenging_fraction([make_record("x")]) == 0.0


def test_simulated_gaze_dev_matches_formula(scored_records):
    for rec in scored_records[:300]:
        if rec.quality is not None:
            assert rec.quality.gaze_dev == gaze_deviation(rec.gaze_point)


def test_dilated_levels_exceed_pupil_threshold(scored_records):
    thr = QualityThresholds()
    by_level = {}
    for rec in scored_records:
        if rec.quality is not None:
            by_level.setdefault(rec.brightness_level, []).append(rec.quality)
    # level 0 sits above the default ratio threshold, level 2 below
    assert all(q.pupil_ratio > thr.pupil_ratio for q in by_level[0])
    assert all(q.pupil_ratio < thr.pupil_ratio for q in by_level[2])
