"""Evaluation protocol construction: pools, pair lists, galleries.

Eight protocols, each a (sample pool, pairing relation) recipe:

* control    - standard-quality samples, same-gaze pairs
* occlusion  - samples challenging only through lid/lash cover, same gaze
* dilation   - samples challenging only through pupil dilation, same gaze
* light      - ordered pairs: dilated probe against standard reference,
               same gaze (verification and identification probes are
               always the dilated side)
* angle      - standard samples, pairs across different gaze points
* fix        - every annotated sample, same-gaze pairs
* select     - every annotated sample except temple-side gaze columns
               (gaze 3/6/9 for left eyes, 1/4/7 for right), any gaze
* any        - every annotated sample, unrestricted pairing

Each runs as verification (genuine/impostor pair lists) or closed-set
identification (unified gallery plus probe list), per eye or with both
eyes jointly (dual).  Two combinations are undefined and rejected:
dilation identification (the gallery is standard quality, so probe and
gallery conditions would not differ from light) and select dual (the
allowed gaze sets of the two eyes do not overlap).

Pair selection is deterministic in the spec seed.  When a candidate
space exceeds its cap, pairs are drawn by walking a seeded Feistel
permutation of the candidate indices, so the subset is uniform,
duplicate-free, and reproducible without materializing the space.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import EYES, SampleRecord
from .errors import EmptyGallery, EmptyPool, InvalidSpec, ParseError, TooFewSubjects
from .quality import QualityThresholds, exceeded_dims
from .rng import derive_seed, substream

PROTOCOLS = ("control", "occlusion", "dilation", "light", "angle", "fix",
             "select", "any")
TASKS = ("verification", "identification")
EYE_MODES = ("L", "R", "dual")

# covariate-factor protocols get the tighter impostor budget
FACTOR_PROTOCOLS = frozenset({"occlusion", "dilation", "light", "angle"})
SAME_GAZE = frozenset({"control", "occlusion", "dilation", "light", "fix"})
CROSS_GAZE = frozenset({"angle"})
SELECT_EXCLUDED = {"L": frozenset({3, 6, 9}), "R": frozenset({1, 4, 7})}
CENTER_GAZE = 5

GENUINE_CAP = 1_500_000
IMPOSTOR_CAP_FACTOR = 2_000_000
IMPOSTOR_CAP_GENERAL = 3_000_000
MAX_PROBES_PER_CLASS = 100


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    task: str = "verification"
    eye_mode: str = "L"
    seed: int = 0
    genuine_cap: int = GENUINE_CAP
    impostor_cap: int | None = None
    max_probes_per_class: int = MAX_PROBES_PER_CLASS

    def __post_init__(self):
        if self.name not in PROTOCOLS:
            raise InvalidSpec(f"unknown protocol {self.name!r}")
        if self.task not in TASKS:
            raise InvalidSpec(f"unknown task {self.task!r}")
        if self.eye_mode not in EYE_MODES:
            raise InvalidSpec(f"unknown eye mode {self.eye_mode!r}")
        if self.name == "dilation" and self.task == "identification":
            raise InvalidSpec("dilation has no identification form: the "
                              "standard-quality gallery would make it "
                              "indistinguishable from light")
        if self.name == "select" and self.eye_mode == "dual":
            raise InvalidSpec("select excludes disjoint gaze sets per eye, "
                              "leaving no shared captures for dual mode")
        if self.genuine_cap <= 0:
            raise InvalidSpec("genuine_cap must be positive")
        if self.impostor_cap is not None and self.impostor_cap <= 0:
            raise InvalidSpec("impostor_cap must be positive")
        if self.max_probes_per_class <= 0:
            raise InvalidSpec("max_probes_per_class must be positive")

    @property
    def resolved_impostor_cap(self) -> int:
        if self.impostor_cap is not None:
            return self.impostor_cap
        if self.name in FACTOR_PROTOCOLS:
            return IMPOSTOR_CAP_FACTOR
        return IMPOSTOR_CAP_GENERAL

    def to_json(self):
        return {"name": self.name, "task": self.task,
                "eye_mode": self.eye_mode, "seed": self.seed,
                "genuine_cap": self.genuine_cap,
                "impostor_cap": self.impostor_cap,
                "max_probes_per_class": self.max_probes_per_class}

    @classmethod
    def from_json(cls, obj) -> "ProtocolSpec":
        return cls(name=obj["name"], task=obj.get("task", "verification"),
                   eye_mode=obj.get("eye_mode", "L"),
                   seed=int(obj.get("seed", 0)),
                   genuine_cap=int(obj.get("genuine_cap", GENUINE_CAP)),
                   impostor_cap=(None if obj.get("impostor_cap") is None
                                 else int(obj["impostor_cap"])),
                   max_probes_per_class=int(obj.get("max_probes_per_class",
                                                    MAX_PROBES_PER_CLASS)))


# ---- dataset split ----

def split_dataset(records, seed: int, train_fraction: float = 0.7):
    """Assign subject-disjoint train/test splits (seeded, stable)."""
    import dataclasses as dc
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < 2:
        raise TooFewSubjects(f"need at least 2 subjects, got {len(subjects)}")
    order = substream(seed, "split").permutation(len(subjects))
    n_train = int(round(train_fraction * len(subjects)))
    n_train = min(max(n_train, 1), len(subjects) - 1)
    train = {subjects[i] for i in order[:n_train]}
    return [dc.replace(r, split="train" if r.subject_id in train else "test")
            for r in records]


def test_split(records):
    return [r for r in records if r.split == "test"]


# ---- pools ----

def in_pool(rec: SampleRecord, name: str,
            thresholds: QualityThresholds = QualityThresholds()) -> bool:
    """Single-sample pool membership for one protocol.

    For light this is the probe (dilated) side; the reference side is
    plain standard category.
    """
    if rec.annotation is None or rec.quality is None:
        return False
    if name in ("control", "angle"):
        return rec.category == "standard"
    if name == "occlusion":
        dims = exceeded_dims(rec.quality, thresholds)
        return bool(dims) and dims <= {"eyelid_occ", "eyelash_occ"}
    if name in ("dilation", "light"):
        dims = exceeded_dims(rec.quality, thresholds)
        return bool(dims) and dims <= {"pupil_ratio"}
    if name == "select":
        return rec.gaze_point not in SELECT_EXCLUDED[rec.eye]
    if name in ("fix", "any"):
        return True
    raise InvalidSpec(f"unknown protocol {name!r}")


def _is_standard(rec: SampleRecord) -> bool:
    return (rec.annotation is not None and rec.quality is not None
            and rec.category == "standard")


@dataclass(frozen=True)
class _Item:
    """One matchable unit: a sample (single eye) or an eye pair (dual)."""

    class_label: str
    gaze: int
    ids: tuple
    sort_key: str


def _single_items(records, eye, predicate):
    out = [_Item(r.class_label, r.gaze_point, (r.sample_id,), r.sample_id)
           for r in records
           if r.eye == eye and r.annotation is not None
           and r.quality is not None and predicate(r)]
    return sorted(out, key=lambda it: it.sort_key)


def _dual_items(records, predicate):
    """Groups of simultaneous L/R captures where both eyes qualify."""
    groups = {}
    for r in records:
        if r.annotation is None or r.quality is None:
            continue
        key = (r.subject_id, r.gaze_point, r.brightness_level, r.frame_idx)
        groups.setdefault(key, {})[r.eye] = r
    out = []
    for (subj, gaze, level, frame), eyes in groups.items():
        if set(eyes) != set(EYES):
            continue
        if not (predicate(eyes["L"]) and predicate(eyes["R"])):
            continue
        out.append(_Item(subj, gaze,
                         (eyes["L"].sample_id, eyes["R"].sample_id),
                         eyes["L"].sample_id))
    return sorted(out, key=lambda it: it.sort_key)


def _pool_items(records, spec: ProtocolSpec, thresholds: QualityThresholds):
    """(probe-side items, reference-side items, symmetric flag)."""
    if spec.name == "light":
        pred_a = lambda r: in_pool(r, "light", thresholds)
        pred_b = _is_standard
        if spec.eye_mode == "dual":
            return _dual_items(records, pred_a), _dual_items(records, pred_b), False
        return (_single_items(records, spec.eye_mode, pred_a),
                _single_items(records, spec.eye_mode, pred_b), False)
    pred = lambda r: in_pool(r, spec.name, thresholds)
    if spec.eye_mode == "dual":
        items = _dual_items(records, pred)
    else:
        items = _single_items(records, spec.eye_mode, pred)
    return items, items, True


# ---- seeded Feistel permutation over candidate indices ----

_SM1 = np.uint64(0x9E3779B97F4A7C15)
_SM2 = np.uint64(0xBF58476D1CE4E5B9)
_SM3 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    z = x + _SM1
    z = (z ^ (z >> np.uint64(30))) * _SM2
    z = (z ^ (z >> np.uint64(27))) * _SM3
    return z ^ (z >> np.uint64(31))


class _FeistelPerm:
    """Bijection on [0, n) via a 4-round balanced Feistel network with
    cycle walking.  Stable across runs and platforms for a given key."""

    ROUNDS = 4

    def __init__(self, n: int, seed: int, *scope):
        if n <= 0:
            raise ValueError("empty domain")
        self.n = n
        bits = max((n - 1).bit_length(), 2)
        self.half = (bits + 1) // 2
        self.mask = np.uint64((1 << self.half) - 1)
        self.shift = np.uint64(self.half)
        self.keys = [np.uint64(derive_seed(seed, "feistel", *scope, str(i)))
                     for i in range(self.ROUNDS)]

    def _round_trip(self, x: np.ndarray) -> np.ndarray:
        left = x >> self.shift
        right = x & self.mask
        for key in self.keys:
            f = _mix64(right ^ key) & self.mask
            left, right = right, left ^ f
        return (left << self.shift) | right

    def apply(self, idx: np.ndarray) -> np.ndarray:
        y = self._round_trip(idx.astype(np.uint64))
        bad = y >= self.n
        while bad.any():
            y[bad] = self._round_trip(y[bad])
            bad[bad] = y[bad] >= self.n
        return y


def _walk_chunks(total: int, seed: int, *scope, chunk: int = 1 << 16):
    """Yield uint64 chunks covering a seeded permutation of [0, total)."""
    perm = _FeistelPerm(total, seed, *scope)
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        yield perm.apply(np.arange(start, stop, dtype=np.uint64))


# ---- genuine pairs ----

def _unrank_comb(n: int, k: int):
    """k-th (i, j) pair, i < j, in i-major lexicographic order."""
    total = n * (n - 1) // 2
    rem = total - 1 - k
    b = (math.isqrt(8 * rem + 1) - 1) // 2
    i = n - 2 - b
    offset = i * (2 * n - i - 1) // 2
    return i, i + 1 + (k - offset)


class _Block:
    """A contiguous run of candidate genuine pairs with local unranking."""

    __slots__ = ("a", "b", "count", "kind")

    def __init__(self, kind, a, b=None):
        self.kind = kind
        self.a = a
        self.b = b
        if kind == "comb":
            self.count = len(a) * (len(a) - 1) // 2
        else:
            self.count = len(a) * len(b)

    def emit(self, k: int):
        if self.kind == "comb":
            i, j = _unrank_comb(len(self.a), k)
            return self.a[i], self.a[j]
        return self.a[k // len(self.b)], self.b[k % len(self.b)]

    def iter_pairs(self):
        if self.kind == "comb":
            yield from itertools.combinations(self.a, 2)
        else:
            yield from itertools.product(self.a, self.b)


def _group(items, key):
    out = {}
    for it in items:
        out.setdefault(key(it), []).append(it)
    return out


def _genuine_blocks(items_a, items_b, symmetric: bool, name: str):
    """Candidate blocks in class-major lexicographic order, plus a
    pair-level filter for relations that cannot be encoded blockwise."""
    if not symmetric:
        # ordered dilated x standard product per (class, gaze) cell
        by_a = _group(items_a, lambda it: (it.class_label, it.gaze))
        by_b = _group(items_b, lambda it: (it.class_label, it.gaze))
        blocks = [_Block("prod", by_a[k], by_b[k])
                  for k in sorted(by_a) if k in by_b]
        return blocks, None
    if name in SAME_GAZE:
        by_cell = _group(items_a, lambda it: (it.class_label, it.gaze))
        return [_Block("comb", by_cell[k]) for k in sorted(by_cell)], None
    by_class = _group(items_a, lambda it: it.class_label)
    blocks = [_Block("comb", by_class[c]) for c in sorted(by_class)]
    if name in CROSS_GAZE:
        return blocks, lambda a, b: a.gaze != b.gaze
    return blocks, None


def _genuine_pairs(items_a, items_b, symmetric, spec: ProtocolSpec):
    blocks, accept = _genuine_blocks(items_a, items_b, symmetric, spec.name)
    blocks = [blk for blk in blocks if blk.count > 0]
    total = sum(blk.count for blk in blocks)
    if total == 0:
        return []
    if total <= spec.genuine_cap:
        pairs = []
        for blk in blocks:
            for a, b in blk.iter_pairs():
                if accept is None or accept(a, b):
                    pairs.append((a, b))
        return pairs
    starts = np.cumsum([0] + [blk.count for blk in blocks])
    out = []
    for idx in _walk_chunks(total, spec.seed, "genuine", spec.name,
                            spec.eye_mode):
        which = np.searchsorted(starts, idx, side="right") - 1
        local = idx.astype(np.int64) - starts[which]
        for bi, off in zip(which, local):
            a, b = blocks[bi].emit(int(off))
            if accept is None or accept(a, b):
                out.append((a, b))
                if len(out) >= spec.genuine_cap:
                    return out
    return out


# ---- impostor pairs ----

def _impostor_pairs(items_a, items_b, symmetric, spec: ProtocolSpec):
    na, nb = len(items_a), len(items_b)
    cap = spec.resolved_impostor_cap
    cls_a = np.array([it.class_label for it in items_a])
    cls_b = cls_a if symmetric else np.array([it.class_label for it in items_b])
    gaze_a = np.array([it.gaze for it in items_a], dtype=np.int64)
    gaze_b = gaze_a if symmetric else np.array([it.gaze for it in items_b],
                                               dtype=np.int64)
    total = na * nb
    out = []
    nb_u = np.uint64(nb)
    for idx in _walk_chunks(total, spec.seed, "impostor", spec.name,
                            spec.eye_mode, chunk=1 << 17):
        ai = (idx // nb_u).astype(np.int64)
        bi = (idx % nb_u).astype(np.int64)
        ok = cls_a[ai] != cls_b[bi]
        if symmetric:
            ok &= ai < bi
        if spec.name in SAME_GAZE:
            ok &= gaze_a[ai] == gaze_b[bi]
        elif spec.name in CROSS_GAZE:
            ok &= gaze_a[ai] != gaze_b[bi]
        for a, b in zip(ai[ok], bi[ok]):
            out.append((items_a[a], items_b[b]))
            if len(out) >= cap:
                return out
    return out


# ---- verification ----

@dataclass
class PairList:
    """Labeled verification pairs ready for the matcher."""

    spec: ProtocolSpec
    pairs: list = field(default_factory=list)   # (probe, ref, label)

    @property
    def n_genuine(self):
        return sum(1 for _, _, lab in self.pairs if lab == 1)

    @property
    def n_impostor(self):
        return sum(1 for _, _, lab in self.pairs if lab == 0)


def _pair_side(item: _Item):
    return item.ids[0] if len(item.ids) == 1 else item.ids


def build_verification(records, spec: ProtocolSpec,
                       thresholds: QualityThresholds = QualityThresholds()) -> PairList:
    """Genuine and impostor pair lists for one protocol."""
    if spec.task != "verification":
        raise InvalidSpec(f"spec task is {spec.task}, not verification")
    items_a, items_b, symmetric = _pool_items(records, spec, thresholds)
    if not items_a or not items_b:
        raise EmptyPool(spec.name, "sample pool is empty")
    genuine = _genuine_pairs(items_a, items_b, symmetric, spec)
    if not genuine:
        raise EmptyPool(spec.name, "no genuine pairs satisfy the relation")
    impostor = _impostor_pairs(items_a, items_b, symmetric, spec)
    if not impostor:
        raise EmptyPool(spec.name, "no impostor pairs satisfy the relation")
    pairs = [(_pair_side(a), _pair_side(b), 1) for a, b in genuine]
    pairs += [(_pair_side(a), _pair_side(b), 0) for a, b in impostor]
    return PairList(spec=spec, pairs=pairs)


# ---- identification ----

@dataclass
class IdentificationSet:
    """Closed-set identification task: unified gallery plus probes."""

    spec: ProtocolSpec
    gallery: list = field(default_factory=list)   # (class_label, ids)
    probes: list = field(default_factory=list)


def _gallery_items(records, spec: ProtocolSpec):
    """One standard-quality center-gaze item per class, seeded choice.

    The gallery depends only on the records, eye mode, and seed, never
    on the protocol name, so every protocol built from one seed ranks
    probes against the same gallery.
    """
    if spec.eye_mode == "dual":
        cands = _dual_items(records, _is_standard)
    else:
        cands = _single_items(records, spec.eye_mode, _is_standard)
    cands = [it for it in cands if it.gaze == CENTER_GAZE]
    by_class = _group(cands, lambda it: it.class_label)
    gallery = []
    for cls in sorted(by_class):
        pool = by_class[cls]
        pick = int(substream(spec.seed, "gallery", cls).integers(len(pool)))
        gallery.append(pool[pick])
    return gallery


def _probe_relation(name: str):
    if name in SAME_GAZE:
        return lambda it: it.gaze == CENTER_GAZE
    if name in CROSS_GAZE:
        return lambda it: it.gaze != CENTER_GAZE
    return lambda it: True


def build_identification(records, spec: ProtocolSpec,
                         thresholds: QualityThresholds = QualityThresholds()) -> IdentificationSet:
    if spec.task != "identification":
        raise InvalidSpec(f"spec task is {spec.task}, not identification")
    gallery = _gallery_items(records, spec)
    if not gallery:
        raise EmptyGallery("no standard center-gaze samples for any class")
    enrolled = {it.class_label for it in gallery}
    gallery_ids = {it.ids for it in gallery}

    items_a, _, _ = _pool_items(records, spec, thresholds)
    relation = _probe_relation(spec.name)
    by_class = _group((it for it in items_a
                       if relation(it) and it.class_label in enrolled
                       and it.ids not in gallery_ids),
                      lambda it: it.class_label)
    probes = []
    for cls in sorted(by_class):
        pool = by_class[cls]
        if len(pool) > spec.max_probes_per_class:
            order = substream(spec.seed, "probes", cls).permutation(len(pool))
            pool = sorted((pool[i] for i in order[:spec.max_probes_per_class]),
                          key=lambda it: it.sort_key)
        probes.extend(pool)
    if not probes:
        raise EmptyPool(spec.name, "no probes satisfy the pool and relation")
    return IdentificationSet(
        spec=spec,
        gallery=[(it.class_label, it.ids) for it in gallery],
        probes=[(it.class_label, it.ids) for it in probes])


# ---- file formats ----

_SPEC_PREFIX = "# protocol-spec: "


def _write_spec_line(fh, spec: ProtocolSpec):
    fh.write(_SPEC_PREFIX + json.dumps(spec.to_json(), sort_keys=True) + "\n")


def _read_spec_line(fh, path) -> ProtocolSpec:
    line = fh.readline()
    if not line.startswith(_SPEC_PREFIX):
        raise ParseError(f"{path}: missing protocol-spec header line")
    try:
        return ProtocolSpec.from_json(json.loads(line[len(_SPEC_PREFIX):]))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ParseError(f"{path}: bad protocol-spec header: {e}") from None


def save_pairs(pair_list: PairList, path):
    dual = pair_list.spec.eye_mode == "dual"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_spec_line(fh, pair_list.spec)
        wr = csv.writer(fh)
        if dual:
            wr.writerow(["probe_id_l", "probe_id_r", "reference_id_l",
                         "reference_id_r", "label"])
            for probe, ref, lab in pair_list.pairs:
                wr.writerow([probe[0], probe[1], ref[0], ref[1], lab])
        else:
            wr.writerow(["probe_id", "reference_id", "label"])
            for probe, ref, lab in pair_list.pairs:
                wr.writerow([probe, ref, lab])


def load_pairs(path) -> PairList:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        spec = _read_spec_line(fh, path)
        rd = csv.reader(fh)
        header = next(rd, None)
        if header == ["probe_id", "reference_id", "label"]:
            pairs = [(p, r, int(lab)) for p, r, lab in rd]
        elif header == ["probe_id_l", "probe_id_r", "reference_id_l",
                        "reference_id_r", "label"]:
            pairs = [((pl, pr), (rl, rr), int(lab))
                     for pl, pr, rl, rr, lab in rd]
        else:
            raise ParseError(f"{path}: unrecognized pairs header {header}")
    return PairList(spec=spec, pairs=pairs)


def save_identification(idset: IdentificationSet, path):
    dual = idset.spec.eye_mode == "dual"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_spec_line(fh, idset.spec)
        wr = csv.writer(fh)
        if dual:
            wr.writerow(["role", "class_label", "sample_id_l", "sample_id_r"])
        else:
            wr.writerow(["role", "class_label", "sample_id"])
        for role, items in (("gallery", idset.gallery), ("probe", idset.probes)):
            for cls, ids in items:
                wr.writerow([role, cls, *ids])


def load_identification(path) -> IdentificationSet:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        spec = _read_spec_line(fh, path)
        rd = csv.reader(fh)
        header = next(rd, None)
        if header == ["role", "class_label", "sample_id"]:
            width = 1
        elif header == ["role", "class_label", "sample_id_l", "sample_id_r"]:
            width = 2
        else:
            raise ParseError(f"{path}: unrecognized identification header {header}")
        gallery, probes = [], []
        for row in rd:
            if not row:
                continue
            role, cls, *ids = row
            if len(ids) != width:
                raise ParseError(f"{path}: row width mismatch: {row}")
            entry = (cls, tuple(ids))
            if role == "gallery":
                gallery.append(entry)
            elif role == "probe":
                probes.append(entry)
            else:
                raise ParseError(f"{path}: unknown role {role!r}")
    return IdentificationSet(spec=spec, gallery=gallery, probes=probes)
