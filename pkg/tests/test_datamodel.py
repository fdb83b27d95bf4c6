"""Record types, geometry primitives, and the two container formats."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irisbench.datamodel import (BBox, Ellipse, Embedding, IrisCode, Mask,
                                 SampleRecord, load_manifest, load_templates,
                                 mask_to_rle, rle_to_mask, save_manifest,
                                 save_templates)
from irisbench.errors import (DuplicateId, InvariantViolation, MixedKinds,
                              ParseError)

from conftest import circle_annotation, make_record, make_scores


# ---- geometry ----

def test_bbox_rejects_nonpositive_sides():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BBox(0, 0, 5, -1)


def test_ellipse_boundary_point_on_circle_is_radius():
    e = Ellipse(10.0, 20.0, 5.0, 5.0, 0.3)
    theta = np.linspace(0, 2 * np.pi, 17)
    x, y = e.boundary_point(theta)
    r = np.hypot(x - 10.0, y - 20.0)
    assert np.allclose(r, 5.0)
    # the angular parameter is the image-frame angle
    assert np.allclose(np.cos(theta), (x - 10.0) / 5.0)


def test_ellipse_boundary_point_axis_aligned():
    e = Ellipse(0.0, 0.0, 4.0, 2.0, 0.0)
    x, y = e.boundary_point(0.0)
    assert (x, y) == pytest.approx((4.0, 0.0))
    x, y = e.boundary_point(math.pi / 2)
    assert (x, y) == pytest.approx((0.0, 2.0))


@given(cx=st.floats(-50, 50), cy=st.floats(-50, 50),
       a=st.floats(1.0, 30.0), ratio=st.floats(0.2, 1.0),
       phi=st.floats(0.0, 3.1))
@settings(max_examples=60, deadline=None)
def test_ellipse_bbox_matches_boundary_extrema(cx, cy, a, ratio, phi):
    e = Ellipse(cx, cy, a, a * ratio, phi)
    theta = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    x, y = e.boundary_point(theta)
    bb = e.bbox()
    assert bb.x == pytest.approx(x.min(), abs=1e-3)
    assert bb.y == pytest.approx(y.min(), abs=1e-3)
    assert bb.x + bb.w == pytest.approx(x.max(), abs=1e-3)
    assert bb.y + bb.h == pytest.approx(y.max(), abs=1e-3)


@given(cx=st.floats(-10, 10), cy=st.floats(-10, 10),
       a=st.floats(1.0, 10.0), ratio=st.floats(0.2, 1.0),
       phi=st.floats(0.0, 3.1), px=st.floats(-25, 25), py=st.floats(-25, 25))
@settings(max_examples=80, deadline=None)
def test_ellipse_contains_matches_quadratic_form(cx, cy, a, ratio, phi, px, py):
    e = Ellipse(cx, cy, a, a * ratio, phi)
    c, s = math.cos(phi), math.sin(phi)
    u = c * (px - cx) + s * (py - cy)
    v = -s * (px - cx) + c * (py - cy)
    expected = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
    assert bool(e.contains(px, py)) == expected


def test_ellipse_area_and_normalized_phi():
    e = Ellipse(0, 0, 3.0, 2.0, math.pi + 0.25)
    assert e.area() == pytest.approx(math.pi * 6.0)
    assert 0.0 <= e.phi < math.pi
    assert e.phi == pytest.approx(0.25)


def test_ellipse_requires_major_at_least_minor():
    with pytest.raises(ValueError):
        Ellipse(0, 0, 2.0, 3.0, 0.0)


# ---- masks ----

@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_mask_rle_roundtrip_random(h, w, seed):
    rng = np.random.default_rng(seed)
    arr = (rng.random((h, w)) < rng.random()).astype(np.uint8)
    assert np.array_equal(rle_to_mask(mask_to_rle(arr), (h, w)), arr)


def test_mask_rle_roundtrip_extremes():
    for arr in (np.zeros((5, 7), np.uint8), np.ones((5, 7), np.uint8)):
        assert np.array_equal(rle_to_mask(mask_to_rle(arr), arr.shape), arr)


def test_mask_rle_long_run_split():
    # a run longer than the 21-bit varint ceiling must still round-trip
    arr = np.zeros((2049, 1024), np.uint8)
    arr[-1, -1] = 1
    assert np.array_equal(rle_to_mask(mask_to_rle(arr), arr.shape), arr)


def test_mask_rle_shape_mismatch_rejected():
    rle = mask_to_rle(np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        rle_to_mask(rle, (4, 5))


def test_mask_from_array_decodes_fresh_and_compares_by_content():
    arr = (np.arange(36).reshape(6, 6) % 5 == 0).astype(np.uint8)
    m = Mask.from_array(arr)
    first = m.array
    first[0, 0] ^= 1          # mutating one decode must not leak into the next
    assert np.array_equal(m.array, arr)
    assert m == Mask.from_array(arr)
    assert m != Mask.from_array(1 - arr)


def test_mask_json_roundtrip():
    arr = (np.eye(8) > 0).astype(np.uint8)
    m = Mask.from_array(arr)
    again = Mask.from_json(m.to_json())
    assert again == m


def test_mask_path_backing(tmp_path):
    from irisbench.imgio import write_image
    arr = (np.arange(64).reshape(8, 8) % 3 == 0).astype(np.uint8)
    p = tmp_path / "m.png"
    write_image(arr * 255, p)
    m = Mask((8, 8), path=str(p))
    assert np.array_equal(m.array, arr)
    assert m.to_json() == {"shape": [8, 8], "path": str(p)}


# ---- sample records / manifest ----

def test_record_field_invariants():
    for kwargs in (dict(gaze=0), dict(gaze=10), dict(level=11),
                   dict(frame=5), dict(eye="X")):
        with pytest.raises(ValueError):
            make_record("bad", **kwargs)
    with pytest.raises(ValueError):
        dataclasses.replace(make_record("x"), category="odd")
    with pytest.raises(ValueError):
        dataclasses.replace(make_record("x"), split="validation")


def test_class_label_pairs_subject_and_eye():
    assert make_record("a", subject="p7", eye="R").class_label == "p7/R"


def test_manifest_empty_file(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert load_manifest(p) == []


def test_manifest_roundtrip_lossless(tmp_path):
    occ = np.zeros((64, 64), np.uint8)
    occ[10:20, 4:40] = 1
    records = [
        make_record("r1", gaze=5),
        make_record("r2", subject="s2", eye="R", gaze=3, level=7, frame=4,
                    annotation=circle_annotation(occ=occ),
                    quality=make_scores(eyelid_occ=0.4), split="test"),
        make_record("r3", annotation=None),
    ]
    p = tmp_path / "m.jsonl"
    save_manifest(records, p)
    back = load_manifest(p)
    assert back == records
    assert back[1].quality == records[1].quality
    assert back[1].annotation.occlusion_mask == records[1].annotation.occlusion_mask
    assert back[2].annotation is None


def test_manifest_single_record_identity(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest([make_record("only", gaze=5, annotation=None)], p)
    (rec,) = load_manifest(p)
    assert rec.sample_id == "only"
    assert rec.gaze_point == 5


def test_manifest_gaze_zero_is_invariant_violation(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest([make_record("ok", annotation=None)], p)
    text = p.read_text().replace('"gaze_point":5', '"gaze_point":0')
    p.write_text(text)
    with pytest.raises(InvariantViolation):
        load_manifest(p)


def test_manifest_duplicate_id(tmp_path):
    p = tmp_path / "m.jsonl"
    rec = make_record("dup", annotation=None)
    save_manifest([rec], p)
    p.write_text(p.read_text() * 2)
    with pytest.raises(DuplicateId):
        load_manifest(p)


def test_manifest_parse_error_carries_line_number(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest([make_record("ok", annotation=None)], p)
    p.write_text(p.read_text() + "{not json\n")
    with pytest.raises(ParseError) as err:
        load_manifest(p)
    assert err.value.line_no == 2


def test_manifest_unknown_key_rejected(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest([make_record("ok", annotation=None)], p)
    p.write_text(p.read_text().replace('"split":null', '"split":null,"zz":1'))
    with pytest.raises((ParseError, InvariantViolation)):
        load_manifest(p)


# ---- iris codes / embeddings ----

def _random_code(rng, kind="gabor", layout=(4, 16, 2)):
    n = layout[0] * layout[1] * layout[2]
    return IrisCode.from_bools(kind, rng.random(n) < 0.5, rng.random(n) < 0.8,
                               layout)


def test_iriscode_layout_arithmetic():
    code = _random_code(np.random.default_rng(0), layout=(8, 128, 4))
    assert code.n_bits == 4096
    assert code.bits.size == 512 and code.mask.size == 512


def test_iriscode_rotate_roundtrip():
    rng = np.random.default_rng(1)
    code = _random_code(rng)
    assert code.rotate(5).rotate(-5) == code
    assert code.rotate(code.layout[1]) == code


def test_iriscode_rotation_moves_grid_columns():
    bits = np.zeros((2, 8, 3), dtype=bool)
    bits[:, 2, :] = True
    code = IrisCode.from_bools("gabor", bits, np.ones_like(bits), (2, 8, 3))
    rot, _ = code.rotate(1).unpacked()
    assert rot[:, 3, :].all() and rot.sum() == bits.sum()


def test_embedding_normalization_contract():
    with pytest.raises(ValueError):
        Embedding(np.ones(4))
    v = np.ones(4) / 2.0
    assert Embedding(v).dims == 4


def test_template_store_roundtrip_codes(tmp_path):
    rng = np.random.default_rng(7)
    templates = {f"id{i}": _random_code(rng) for i in range(5)}
    p = tmp_path / "t.irtb"
    save_templates(templates, p)
    assert load_templates(p) == templates


def test_template_store_roundtrip_embeddings(tmp_path):
    rng = np.random.default_rng(8)
    templates = {}
    for i in range(4):
        v = rng.normal(size=16)
        templates[f"e{i}"] = Embedding(v / np.linalg.norm(v))
    p = tmp_path / "t.irtb"
    save_templates(templates, p)
    assert load_templates(p) == templates


def test_template_store_empty(tmp_path):
    p = tmp_path / "t.irtb"
    save_templates({}, p)
    assert load_templates(p) == {}


def test_template_store_mixed_kinds_rejected(tmp_path):
    rng = np.random.default_rng(9)
    templates = {"a": _random_code(rng, "gabor"),
                 "b": _random_code(rng, "ordinal")}
    with pytest.raises(MixedKinds):
        save_templates(templates, tmp_path / "t.irtb")


def test_template_store_renormalizes_drifted_embedding(tmp_path):
    v = np.zeros(8)
    v[0] = 1.0
    p = tmp_path / "t.irtb"
    save_templates({"u": Embedding(v)}, p)
    raw = bytearray(p.read_bytes())
    # double the stored vector: norm 2.0 must be repaired on load
    vec = np.frombuffer(raw[-64:], dtype="<f8") * 2.0
    raw[-64:] = vec.tobytes()
    p.write_bytes(bytes(raw))
    (out,) = load_templates(p).values()
    assert np.linalg.norm(out.values) == pytest.approx(1.0, abs=1e-12)
    assert out.values[0] == pytest.approx(1.0)


def test_template_store_truncation_detected(tmp_path):
    rng = np.random.default_rng(10)
    p = tmp_path / "t.irtb"
    save_templates({"one": _random_code(rng)}, p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-3])
    with pytest.raises(ParseError):
        load_templates(p)
    p.write_bytes(blob + b"x")
    with pytest.raises(ParseError):
        load_templates(p)
    p.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(ParseError):
        load_templates(p)
