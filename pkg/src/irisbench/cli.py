"""Command line driver for the full benchmark pipeline.

Stages are separate subcommands wired by files: a JSONL manifest for
sample records, CSV pair/identification lists, a binary template
store, a scores CSV, and JSON result reports.  Every stage that draws
anything takes an explicit seed, so reruns are bit-identical.

Exit codes: 0 success, 1 domain error (bad data, empty pools, broken
files, undefined protocol combinations), 2 usage error (unknown or
malformed flags and config values).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .datamodel import (load_manifest, load_templates, save_manifest,
                        save_templates)
from .encode import (GaborConfig, OrdinalConfig, gabor_encode, ordinal_encode,
                     reference_embed)
from .errors import IrisBenchError
from .imgio import read_image
from .match import MatcherConfig, load_scores, match_gallery, match_pairs, save_scores
from .metrics import (DEFAULT_FAR_TARGETS, ProtocolResult, dual_frr_at_far,
                      dual_rank1, frr_at_far, load_report, rank1, report_json,
                      report_table)
from .preprocess import CropConfig, RubberSheetConfig, bbox_crop, rubber_sheet
from .protocols import (ProtocolSpec, build_identification, build_verification,
                        load_identification, load_pairs, save_identification,
                        save_pairs, split_dataset)
from .quality import (QualityThresholds, challenging_fraction, clean,
                      score_records)
from .synthgen import (DEFAULT_DEGRADATIONS, DegradationProfile,
                       SimulatorConfig, generate_session, make_subject)

log = logging.getLogger("irisbench")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

SPEC_PREFIX = "# protocol-spec: "


class UsageError(Exception):
    """Malformed flag or config value; exits 2, unlike domain errors (1)."""


# ---- config file merging ----

def _load_config(path):
    """key=value lines; '#' comments; keys use flag names."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _coerce(action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw.lower() in ("1", "true", "yes", "on")
    cast = action.type or str
    if action.nargs in ("+", "*"):
        return [cast(tok) for tok in raw.replace(",", " ").split()]
    if action.__class__.__name__ == "_AppendAction":
        return [cast(tok) for tok in raw.split(",")]
    return cast(raw)


def _apply_config(parser: argparse.ArgumentParser, args, argv):
    if not getattr(args, "config", None):
        return
    conf = _load_config(args.config)
    seen = set(argv)
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "config"):
            continue
        explicit = any(tok in seen or any(a.startswith(tok + "=") for a in argv)
                       for tok in action.option_strings)
        if explicit:
            continue
        key = action.dest
        if key in conf:
            try:
                setattr(args, key, _coerce(action, conf[key]))
            except ValueError as e:
                raise UsageError(f"config key {key!r}: {e}") from None


def _parse_thresholds(pairs) -> QualityThresholds:
    overrides = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--threshold wants dim=value, got {item!r}")
        key, val = item.split("=", 1)
        try:
            overrides[key.strip()] = float(val)
        except ValueError:
            raise UsageError(f"--threshold {key.strip()}: not a number: "
                             f"{val!r}") from None
    try:
        return QualityThresholds().override(**overrides)
    except (TypeError, ValueError) as e:
        raise UsageError(f"--threshold: {e}") from None


def _require(args, parser, *names):
    for name in names:
        if getattr(args, name) is None:
            parser.error(f"--{name.replace('_', '-')} is required "
                         "(flag or config file)")


# ---- synth ----

def _synth_subject(job):
    sid, seed, out_dir, fmt, render_images, cfg, profile = job
    model = make_subject(sid, seed, cfg)
    return generate_session(model, seed, out_dir=out_dir, config=cfg,
                            profile=profile, image_format=fmt,
                            render_images=render_images)


def cmd_synth(args, parser):
    _require(args, parser, "seed", "out", "subjects")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SimulatorConfig(image_size=args.image_size,
                          iris_radius_range=tuple(args.iris_radius))
    if args.no_defects:
        profile = DegradationProfile()
    else:
        profile = DegradationProfile(
            closed_eye=args.defect_closed_eye,
            out_of_frame=args.defect_out_of_frame,
            motion_blur=args.defect_motion_blur)
    subject_ids = [f"{args.prefix}{i:03d}" for i in range(1, args.subjects + 1)]
    jobs = [(sid, args.seed, out_dir, args.format, not args.manifest_only,
             cfg, profile) for sid in subject_ids]
    records = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for recs in pool.map(_synth_subject, jobs):
                records.extend(recs)
    else:
        for job in jobs:
            records.extend(_synth_subject(job))
    manifest = out_dir / "manifest.jsonl"
    save_manifest(records, manifest)
    n_defective = sum(1 for r in records if r.annotation is None)
    log.info("synth: %d records (%d defective) for %d subjects -> %s",
             len(records), n_defective, len(subject_ids), manifest)
    return EXIT_OK


# ---- quality / clean / split ----

def cmd_quality(args, parser):
    thresholds = _parse_thresholds(args.threshold)
    records = load_manifest(args.manifest)
    scored = score_records(records, thresholds)
    save_manifest(scored, args.out)
    frac = challenging_fraction(scored)
    log.info("quality: %d records scored, challenging fraction %.3f -> %s",
             sum(1 for r in scored if r.quality is not None), frac, args.out)
    return EXIT_OK


def cmd_clean(args, parser):
    records = load_manifest(args.manifest)
    kept = clean(records)
    save_manifest(kept, args.out)
    log.info("clean: kept %d of %d records -> %s",
             len(kept), len(records), args.out)
    return EXIT_OK


def cmd_split(args, parser):
    _require(args, parser, "seed")
    records = load_manifest(args.manifest)
    out = split_dataset(records, args.seed, args.train_fraction)
    save_manifest(out, args.out)
    n_train = sum(1 for r in out if r.split == "train")
    log.info("split: %d train / %d test records -> %s",
             n_train, len(out) - n_train, args.out)
    return EXIT_OK


# ---- protocol ----

def _filter_split(records, which):
    if which == "all":
        return records
    return [r for r in records if r.split == which]


def cmd_protocol(args, parser):
    _require(args, parser, "seed")
    thresholds = _parse_thresholds(args.threshold)
    # spec validity (e.g. dilation identification) checked before any I/O
    spec = ProtocolSpec(name=args.name, task=args.task, eye_mode=args.eye,
                        seed=args.seed, genuine_cap=args.genuine_cap,
                        impostor_cap=args.impostor_cap,
                        max_probes_per_class=args.max_probes)
    records = _filter_split(load_manifest(args.manifest), args.split)
    if spec.task == "verification":
        pair_list = build_verification(records, spec, thresholds)
        save_pairs(pair_list, args.out)
        log.info("protocol %s/%s/%s: %d genuine + %d impostor pairs -> %s",
                 spec.name, spec.eye_mode, spec.task, pair_list.n_genuine,
                 pair_list.n_impostor, args.out)
    else:
        idset = build_identification(records, spec, thresholds)
        save_identification(idset, args.out)
        log.info("protocol %s/%s/%s: gallery %d, probes %d -> %s",
                 spec.name, spec.eye_mode, spec.task, len(idset.gallery),
                 len(idset.probes), args.out)
    return EXIT_OK


# ---- encode ----

def cmd_encode(args, parser):
    records = _filter_split(load_manifest(args.manifest), args.split)
    root = Path(args.images_root) if args.images_root else Path(args.manifest).parent
    annotated = [r for r in records if r.annotation is not None]
    skipped = len(records) - len(annotated)
    templates = {}
    if args.kind in ("gabor", "ordinal"):
        rs_cfg = RubberSheetConfig(rows=args.rows, cols=args.cols)
        encoder = gabor_encode if args.kind == "gabor" else ordinal_encode
        enc_cfg = GaborConfig() if args.kind == "gabor" else OrdinalConfig()
        for rec in annotated:
            img = read_image(root / rec.image_ref)
            norm = rubber_sheet(img, rec.annotation, rs_cfg)
            templates[rec.sample_id] = encoder(norm, enc_cfg)
    else:
        crop_cfg = CropConfig(expand_factor=args.expand_factor,
                              out_size=args.crop_size)
        for rec in annotated:
            img = read_image(root / rec.image_ref)
            crop = bbox_crop(img, rec.annotation, crop_cfg)
            templates[rec.sample_id] = reference_embed(crop)
    save_templates(templates, args.out)
    log.info("encode: %d %s templates (%d records skipped, no annotation) -> %s",
             len(templates), args.kind, skipped, args.out)
    return EXIT_OK


# ---- match ----

def cmd_match(args, parser):
    pair_list = load_pairs(args.pairs)
    templates = load_templates(args.templates)
    config = MatcherConfig(max_shift=args.max_shift,
                           min_valid_fraction=args.min_valid_fraction,
                           workers=args.workers)
    table = match_pairs(pair_list.pairs, templates, config)
    save_scores(table, args.out, spec_json=pair_list.spec.to_json())
    log.info("match: %d pairs scored -> %s", len(table), args.out)
    return EXIT_OK


# ---- eval ----

def _spec_from_comment(path):
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith(SPEC_PREFIX):
        return ProtocolSpec.from_json(json.loads(first[len(SPEC_PREFIX):]))
    return None


def cmd_eval_verify(args, parser):
    table = load_scores(args.scores)
    spec = _spec_from_comment(args.scores)
    protocol = args.protocol or (spec.name if spec else None)
    eye_mode = args.eye or (spec.eye_mode if spec else None)
    if protocol is None or eye_mode is None:
        parser.error("scores file carries no protocol-spec comment; "
                     "pass --protocol and --eye")
    labels = table.labels
    points = []
    if table.eyes == 1:
        gen, imp = table.genuine(0), table.impostor(0)
        for target in args.far:
            points.append(frr_at_far(gen, imp, target))
    else:
        gen_lr = table.similarity[labels == 1]
        imp_lr = table.similarity[labels == 0]
        for target in args.far:
            points.append(dual_frr_at_far(gen_lr, imp_lr, target))
    result = ProtocolResult(protocol=protocol, eye_mode=eye_mode,
                            task="verification",
                            n_genuine=int((labels == 1).sum()),
                            n_impostor=int((labels == 0).sum()),
                            points=points)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report_json([result]))
    for p in points:
        log.info("eval verify %s/%s: FAR<=%g -> achieved %.3g, FRR %.4f",
                 protocol, eye_mode, p.far_target, p.achieved_far, p.frr)
    return EXIT_OK


def cmd_eval_identify(args, parser):
    idset = load_identification(args.tasklist)
    templates = load_templates(args.templates)
    config = MatcherConfig(max_shift=args.max_shift,
                           min_valid_fraction=args.min_valid_fraction,
                           workers=args.workers)
    spec = idset.spec
    probe_classes = [cls for cls, _ in idset.probes]
    gallery_classes = [cls for cls, _ in idset.gallery]
    if spec.eye_mode == "dual":
        gal_l = [ids[0] for _, ids in idset.gallery]
        gal_r = [ids[1] for _, ids in idset.gallery]
        pro_l = [ids[0] for _, ids in idset.probes]
        pro_r = [ids[1] for _, ids in idset.probes]
        scores_l = match_gallery(pro_l, gal_l, templates, config)
        scores_r = match_gallery(pro_r, gal_r, templates, config)
        acc = dual_rank1(scores_l, scores_r, probe_classes, gallery_classes,
                         keys_l=gal_l, keys_r=gal_r)
    else:
        gallery_ids = [ids[0] for _, ids in idset.gallery]
        probe_ids = [ids[0] for _, ids in idset.probes]
        scores = match_gallery(probe_ids, gallery_ids, templates, config)
        acc = rank1(scores, probe_classes, gallery_classes,
                    tiebreak_keys=gallery_ids)
    result = ProtocolResult(protocol=spec.name, eye_mode=spec.eye_mode,
                            task="identification",
                            n_genuine=len(idset.probes),
                            n_impostor=len(idset.probes) * (len(idset.gallery) - 1),
                            points=[], rank1=acc)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report_json([result]))
    log.info("eval identify %s/%s: rank-1 %.4f over %d probes x %d gallery",
             spec.name, spec.eye_mode, acc, len(idset.probes),
             len(idset.gallery))
    return EXIT_OK


def cmd_report(args, parser):
    results = []
    for path in args.results:
        results.extend(load_report(path))
    text = report_json(results)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        log.info("report: %d results -> %s", len(results), args.out)
    if args.table or not args.out:
        print(report_table(results))
    return EXIT_OK


# ---- parser wiring ----

def _add_common(sp):
    sp.add_argument("--config", help="key=value defaults file; explicit "
                    "flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irisbench",
        description="synthetic iris recognition benchmark pipeline",
        allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    ps = sub.add_parser("synth", help="synthetic corpus commands",
                        allow_abbrev=False)
    ssub = ps.add_subparsers(dest="synth_command", required=True,
                             metavar="action")
    p = ssub.add_parser("generate", help="generate a synthetic corpus",
                        allow_abbrev=False)
    p.add_argument("--out", help="output directory")
    p.add_argument("--subjects", type=int, help="number of identities")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--prefix", default="subj", help="subject id prefix")
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    p.add_argument("--image-size", type=int, default=640)
    p.add_argument("--iris-radius", type=float, nargs=2, default=[110.0, 135.0],
                   metavar=("LO", "HI"), help="iris radius range in px")
    p.add_argument("--manifest-only", action="store_true",
                   help="write annotations but no image files")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel subjects (processes)")
    p.add_argument("--no-defects", action="store_true")
    p.add_argument("--defect-closed-eye", type=float,
                   default=DEFAULT_DEGRADATIONS.closed_eye)
    p.add_argument("--defect-out-of-frame", type=float,
                   default=DEFAULT_DEGRADATIONS.out_of_frame)
    p.add_argument("--defect-motion-blur", type=float,
                   default=DEFAULT_DEGRADATIONS.motion_blur)
    _add_common(p)
    p.set_defaults(func=cmd_synth, _parser=p)

    pq = sub.add_parser("quality", help="quality scoring commands",
                        allow_abbrev=False)
    qsub = pq.add_subparsers(dest="quality_command", required=True,
                             metavar="action")
    p = qsub.add_parser("score", help="score quality and categorize",
                        allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", action="append", metavar="DIM=VALUE",
                   help="override one quality threshold (repeatable)")
    _add_common(p)
    p.set_defaults(func=cmd_quality, _parser=p)

    p = sub.add_parser("clean", help="drop records without annotation",
                       allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_clean, _parser=p)

    p = sub.add_parser("split", help="subject-disjoint train/test split",
                       allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float, default=0.7)
    _add_common(p)
    p.set_defaults(func=cmd_split, _parser=p)

    pp = sub.add_parser("protocol", help="protocol materialization commands",
                        allow_abbrev=False)
    psub = pp.add_subparsers(dest="protocol_command", required=True,
                             metavar="action")
    p = psub.add_parser("build", help="build pair lists or an "
                        "identification task", allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--task", choices=("verification", "identification"),
                   default="verification")
    p.add_argument("--eye", choices=("L", "R", "dual"), default="L")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--genuine-cap", type=int, default=1_500_000)
    p.add_argument("--impostor-cap", type=int, default=None)
    p.add_argument("--max-probes", type=int, default=100)
    p.add_argument("--threshold", action="append", metavar="DIM=VALUE")
    _add_common(p)
    p.set_defaults(func=cmd_protocol, _parser=p)

    p = sub.add_parser("encode", help="template extraction",
                       allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("gabor", "ordinal", "embed"),
                   required=True)
    p.add_argument("--images-root", default=None,
                   help="defaults to the manifest directory")
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=512)
    p.add_argument("--crop-size", type=int, default=112)
    p.add_argument("--expand-factor", type=float, default=1.2)
    _add_common(p)
    p.set_defaults(func=cmd_encode, _parser=p)

    p = sub.add_parser("match", help="score a pair list", allow_abbrev=False)
    p.add_argument("--pairs", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-shift", type=int, default=8)
    p.add_argument("--min-valid-fraction", type=float, default=0.25)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_match, _parser=p)

    pe = sub.add_parser("eval", help="compute metrics", allow_abbrev=False)
    esub = pe.add_subparsers(dest="eval_command", required=True,
                             metavar="task")

    p = esub.add_parser("verify", help="FRR at FAR targets",
                        allow_abbrev=False)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--far", type=float, nargs="+",
                   default=list(DEFAULT_FAR_TARGETS))
    p.add_argument("--protocol", default=None,
                   help="override protocol name when the scores file "
                        "has no spec comment")
    p.add_argument("--eye", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval_verify, _parser=p)

    p = esub.add_parser("identify", help="closed-set rank-1",
                        allow_abbrev=False)
    p.add_argument("--tasklist", required=True,
                   help="identification CSV from 'protocol'")
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-shift", type=int, default=8)
    p.add_argument("--min-valid-fraction", type=float, default=0.25)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_eval_identify, _parser=p)

    p = sub.add_parser("report", help="merge results, render a table",
                       allow_abbrev=False)
    p.add_argument("results", nargs="+", help="result JSON files")
    p.add_argument("--out", default=None)
    p.add_argument("--table", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_report, _parser=p)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level=logging.WARNING if args.quiet else logging.INFO)
    sub = getattr(args, "_parser", parser)
    try:
        _apply_config(sub, args, argv)
        return args.func(args, sub)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except IrisBenchError as e:
        log.error("%s", e)
        return EXIT_ERROR
    except OSError as e:
        log.error("%s", e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
