"""Exit-code contract, config merging, and stage wiring of the CLI."""

import json

import numpy as np
import pytest

from irisbench.cli import main
from irisbench.datamodel import (IrisCode, load_manifest, save_manifest,
                                 save_templates)
from irisbench.match import MatcherConfig, ScoreTable, load_scores, save_scores
from irisbench.metrics import load_report
from irisbench.protocols import (IdentificationSet, PairList, ProtocolSpec,
                                 save_identification, save_pairs,
                                 split_dataset)

from conftest import make_record, make_scores


def run(*argv):
    return main(list(argv))


def _write_manifest(path, records):
    save_manifest(records, path)
    return str(path)


def _corpus(n_subjects=4):
    recs = []
    for i in range(n_subjects):
        for f in (0, 1):
            recs.append(make_record(f"p{i}_L_g5_f{f}", subject=f"p{i}",
                                    gaze=5, frame=f, quality=make_scores()))
    return recs


def _random_code(rng, layout=(1, 8, 2)):
    return IrisCode.from_bools("gabor", rng.random(layout) < 0.5,
                               np.ones(layout, bool), layout)


# ---- exit codes ----

def test_version_exits_ok(capsys):
    assert run("--version") == 0
    capsys.readouterr()


def test_usage_errors_exit_2(capsys):
    assert run() == 2
    assert run("frobnicate") == 2
    assert run("split", "--bogus-flag", "x") == 2
    assert run("synth") == 2                  # missing nested action
    assert run("synth", "generate", "--subjects", "NaNory") == 2
    capsys.readouterr()


def test_undefined_protocol_combinations_exit_1(tmp_path):
    # domain errors, not usage errors: the combination is well-formed
    # but undefined, and rejection happens before any file I/O
    args = ("protocol", "build", "--manifest", str(tmp_path / "absent.jsonl"),
            "--out", str(tmp_path / "out.csv"), "--seed", "1")
    assert run(*args, "--name", "dilation", "--task", "identification") == 1
    assert run(*args, "--name", "select", "--eye", "dual") == 1
    assert run(*args, "--name", "bogus") == 1


def test_missing_manifest_exits_1(tmp_path):
    assert run("clean", "--manifest", str(tmp_path / "absent.jsonl"),
               "--out", str(tmp_path / "out.jsonl")) == 1


def test_bad_threshold_exits_2_before_io(tmp_path):
    args = ("quality", "score", "--manifest", str(tmp_path / "absent.jsonl"),
            "--out", str(tmp_path / "out.jsonl"))
    assert run(*args, "--threshold", "pupil_ratio=abc") == 2
    assert run(*args, "--threshold", "no_equals_sign") == 2
    assert run(*args, "--threshold", "bogus_dim=0.5") == 2


def test_seed_required(tmp_path):
    manifest = _write_manifest(tmp_path / "m.jsonl", _corpus())
    assert run("split", "--manifest", manifest,
               "--out", str(tmp_path / "s.jsonl")) == 2
    assert run("synth", "generate", "--out", str(tmp_path / "d"),
               "--subjects", "1") == 2


# ---- config files ----

def test_config_bad_lines_exit_2(tmp_path):
    manifest = _write_manifest(tmp_path / "m.jsonl", _corpus())
    bad = tmp_path / "bad.conf"
    bad.write_text("this line has no equals\n")
    assert run("split", "--manifest", manifest, "--out",
               str(tmp_path / "o.jsonl"), "--seed", "1",
               "--config", str(bad)) == 2
    not_a_number = tmp_path / "nan.conf"
    not_a_number.write_text("train-fraction = banana\n")
    assert run("split", "--manifest", manifest, "--out",
               str(tmp_path / "o.jsonl"), "--seed", "1",
               "--config", str(not_a_number)) == 2


def test_config_supplies_defaults_flags_win(tmp_path):
    recs = _corpus(4)
    manifest = _write_manifest(tmp_path / "m.jsonl", recs)
    conf = tmp_path / "run.conf"
    conf.write_text("seed = 9\ntrain-fraction = 0.25   # one subject\n")

    out1 = tmp_path / "from_config.jsonl"
    assert run("split", "--manifest", manifest, "--out", str(out1),
               "--config", str(conf)) == 0
    got = load_manifest(out1)
    expected = split_dataset(recs, seed=9, train_fraction=0.25)
    assert [(r.sample_id, r.split) for r in got] == \
           [(r.sample_id, r.split) for r in expected]

    out2 = tmp_path / "flag_wins.jsonl"
    assert run("split", "--manifest", manifest, "--out", str(out2),
               "--seed", "3", "--train-fraction", "0.5",
               "--config", str(conf)) == 0
    got2 = load_manifest(out2)
    expected2 = split_dataset(recs, seed=3, train_fraction=0.5)
    assert [(r.sample_id, r.split) for r in got2] == \
           [(r.sample_id, r.split) for r in expected2]


# ---- synth ----

def test_synth_generate_record_arithmetic(tmp_path):
    out = tmp_path / "corpus"
    assert run("synth", "generate", "--out", str(out), "--subjects", "2",
               "--seed", "11", "--manifest-only", "--image-size", "320",
               "--iris-radius", "52", "64", "--prefix", "t") == 0
    records = load_manifest(out / "manifest.jsonl")
    assert len(records) == 2 * 990
    assert {r.subject_id for r in records} == {"t001", "t002"}
    # manifest-only: no image files materialized
    assert not list(out.glob("**/*.png"))


# ---- quality / clean / split wiring ----

def test_quality_clean_split_stage_wiring(tmp_path):
    out = tmp_path / "corpus"
    assert run("synth", "generate", "--out", str(out), "--subjects", "2",
               "--seed", "4", "--manifest-only", "--image-size", "320",
               "--iris-radius", "52", "64") == 0
    scored = tmp_path / "scored.jsonl"
    assert run("quality", "score", "--manifest", str(out / "manifest.jsonl"),
               "--out", str(scored)) == 0
    records = load_manifest(scored)
    annotated = [r for r in records if r.annotation is not None]
    assert all(r.quality is not None and r.category is not None
               for r in annotated)
    defective = len(records) - len(annotated)
    assert defective > 0          # degradations leave unannotated records

    cleaned = tmp_path / "cleaned.jsonl"
    assert run("clean", "--manifest", str(scored), "--out", str(cleaned)) == 0
    kept = load_manifest(cleaned)
    assert len(kept) == len(annotated)

    split = tmp_path / "split.jsonl"
    assert run("split", "--manifest", str(cleaned), "--out", str(split),
               "--seed", "2", "--train-fraction", "0.5") == 0
    out_records = load_manifest(split)
    assert {r.split for r in out_records} == {"train", "test"}


# ---- protocol / match / eval ----

def test_protocol_build_and_match_round_trip(tmp_path):
    recs = [r for r in _corpus(3)]
    for r in recs:
        assert r.split is None
    manifest = _write_manifest(tmp_path / "m.jsonl", recs)
    pairs_path = tmp_path / "pairs.csv"
    assert run("protocol", "build", "--manifest", manifest, "--out",
               str(pairs_path), "--name", "control", "--seed", "5",
               "--split", "all") == 0
    text = pairs_path.read_text()
    assert text.startswith("# protocol-spec: ")

    rng = np.random.default_rng(0)
    store = {r.sample_id: _random_code(rng) for r in recs}
    tpl = tmp_path / "codes.tpl"
    save_templates(store, tpl)
    scores = tmp_path / "scores.csv"
    assert run("match", "--pairs", str(pairs_path), "--templates", str(tpl),
               "--out", str(scores), "--max-shift", "2") == 0
    table = load_scores(scores)
    assert len(table) == 3 + 12       # 1 genuine per subject, C(6,2)-3 imp
    assert set(np.unique(table.labels)) == {0, 1}


def test_match_missing_template_exits_1(tmp_path):
    pl = PairList(spec=ProtocolSpec(name="control", seed=1),
                  pairs=[("known", "unknown", 0)])
    pairs_path = tmp_path / "p.csv"
    save_pairs(pl, pairs_path)
    store = {"known": _random_code(np.random.default_rng(1))}
    tpl = tmp_path / "t.tpl"
    save_templates(store, tpl)
    assert run("match", "--pairs", str(pairs_path), "--templates", str(tpl),
               "--out", str(tmp_path / "s.csv")) == 1


def _write_scores(tmp_path, n_gen=20, n_imp=200, spec=None, seed=0):
    rng = np.random.default_rng(seed)
    n = n_gen + n_imp
    labels = np.array([1] * n_gen + [0] * n_imp, np.int8)
    sim = np.concatenate([rng.uniform(0.7, 1.0, n_gen),
                          rng.uniform(0.0, 0.6, n_imp)]).reshape(n, 1)
    table = ScoreTable(probe_ids=[(f"p{i}",) for i in range(n)],
                       reference_ids=[(f"r{i}",) for i in range(n)],
                       labels=labels, similarity=sim,
                       best_shift=np.zeros((n, 1), np.int64),
                       valid_bits=np.full((n, 1), 64, np.int64))
    path = tmp_path / "scores.csv"
    save_scores(table, path, spec_json=spec)
    return path


def test_eval_verify_reads_spec_comment(tmp_path):
    spec = ProtocolSpec(name="occlusion", eye_mode="R", seed=3)
    path = _write_scores(tmp_path, spec=spec.to_json())
    report = tmp_path / "rep.json"
    assert run("eval", "verify", "--scores", str(path), "--out", str(report),
               "--far", "0.1", "0.01") == 0
    results = load_report(report)
    assert len(results) == 1
    res = results[0]
    assert res.protocol == "occlusion" and res.eye_mode == "R"
    assert [p.far_target for p in res.points] == [0.1, 0.01]
    assert res.n_genuine == 20 and res.n_impostor == 200
    assert all(p.frr == 0.0 for p in res.points)   # separated by design


def test_eval_verify_without_spec_needs_flags(tmp_path):
    path = _write_scores(tmp_path, spec=None)
    report = tmp_path / "rep.json"
    assert run("eval", "verify", "--scores", str(path), "--out", str(report),
               "--far", "0.1") == 2
    assert run("eval", "verify", "--scores", str(path), "--out", str(report),
               "--far", "0.1", "--protocol", "control", "--eye", "L") == 0


def test_eval_verify_insufficient_impostors_exits_1(tmp_path):
    path = _write_scores(tmp_path, n_imp=50,
                         spec=ProtocolSpec(name="control").to_json())
    # default targets include 1e-5, which 50 impostors cannot resolve
    assert run("eval", "verify", "--scores", str(path),
               "--out", str(tmp_path / "rep.json")) == 1


def test_eval_identify_end_to_end(tmp_path):
    rng = np.random.default_rng(2)
    codes = {f"g{s}": _random_code(rng, (2, 8, 2)) for s in "ab"}
    store = dict(codes)
    store["pa"] = codes["ga"]         # probes identical to enrollments
    store["pb"] = codes["gb"]
    tpl = tmp_path / "t.tpl"
    save_templates(store, tpl)
    idset = IdentificationSet(
        spec=ProtocolSpec(name="control", task="identification", seed=1),
        gallery=[("a/L", ("ga",)), ("b/L", ("gb",))],
        probes=[("a/L", ("pa",)), ("b/L", ("pb",))])
    tasklist = tmp_path / "ident.csv"
    save_identification(idset, tasklist)
    report = tmp_path / "rep.json"
    assert run("eval", "identify", "--tasklist", str(tasklist),
               "--templates", str(tpl), "--out", str(report)) == 0
    res = load_report(report)[0]
    assert res.task == "identification"
    assert res.rank1 == 1.0


def test_report_merges_and_prints_table(tmp_path, capsys):
    spec = ProtocolSpec(name="control", seed=3)
    s1 = _write_scores(tmp_path, spec=spec.to_json())
    r1 = tmp_path / "r1.json"
    assert run("eval", "verify", "--scores", str(s1), "--out", str(r1),
               "--far", "0.1") == 0
    sub = tmp_path / "sub"
    sub.mkdir()
    s2 = _write_scores(sub, spec=ProtocolSpec(name="any", seed=3).to_json())
    r2 = tmp_path / "r2.json"
    assert run("eval", "verify", "--scores", str(s2), "--out", str(r2),
               "--far", "0.1") == 0
    merged = tmp_path / "merged.json"
    capsys.readouterr()
    assert run("report", str(r1), str(r2), "--out", str(merged),
               "--table") == 0
    printed = capsys.readouterr().out
    assert "protocol" in printed and "control" in printed and "any" in printed
    results = load_report(merged)
    assert [r.protocol for r in results] == ["any", "control"]   # sorted
    obj = json.loads(merged.read_text())
    assert set(obj) == {"results"}
