"""Template comparison.

Binary codes are compared with a masked fractional Hamming distance
under a bounded circular shift search: for each candidate shift s the
reference code is rotated by s grid columns and the distance is taken
over the jointly valid bits.  Similarity is 1 - min_s HD(s).  Shifts
whose joint valid count falls below min_valid_fraction of the code
length are skipped; if every shift is skipped the pair scores the
sentinel similarity 0 (the global minimum).

Ties between shifts resolve to the smallest |s|, negative before
positive, which the search realizes by visiting shifts in that
priority order and only accepting strict improvements.

The batch path packs codes into 64-bit words and runs an XOR/AND/
popcount kernel; rotations are precomputed once per distinct reference
template, so throughput is dominated by the word loop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from llvmlite import ir
from numba import njit, types, uint64
from numba.extending import intrinsic

from .datamodel import Embedding, IrisCode
from .errors import (DimMismatch, InsufficientOverlap, LayoutMismatch,
                     MissingTemplate, MixedKinds, ParseError)

SENTINEL_SIMILARITY = 0.0

SINGLE_HEADER = ("probe_id", "reference_id", "label", "similarity",
                 "best_shift", "valid_bits")
DUAL_HEADER = ("probe_id_l", "probe_id_r", "reference_id_l", "reference_id_r",
               "label", "similarity_l", "similarity_r", "best_shift_l",
               "best_shift_r", "valid_bits_l", "valid_bits_r")


@dataclass(frozen=True)
class MatcherConfig:
    max_shift: int = 8
    min_valid_fraction: float = 0.25
    workers: int = 1

    def __post_init__(self):
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")
        if not (0.0 <= self.min_valid_fraction <= 1.0):
            raise ValueError("min_valid_fraction outside [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class MatchScore:
    similarity: float
    best_shift: int
    valid_bits: int


def shift_priority(max_shift: int) -> np.ndarray:
    """Shift values in tie-break priority order: 0, -1, +1, -2, +2, ..."""
    order = [0]
    for s in range(1, max_shift + 1):
        order.extend([-s, s])
    return np.asarray(order, dtype=np.int64)


# ---- packing ----

def _pack_words(flat_bits: np.ndarray) -> np.ndarray:
    """Bool array (..., n_bits) -> uint64 words (..., ceil(n/64))."""
    packed = np.packbits(flat_bits, axis=-1)
    pad = (-packed.shape[-1]) % 8
    if pad:
        packed = np.concatenate(
            [packed, np.zeros(packed.shape[:-1] + (pad,), dtype=np.uint8)],
            axis=-1)
    return packed.view(np.uint64)


def _code_words(code: IrisCode):
    bits, mask = code.unpacked()
    n = code.n_bits
    return (_pack_words(bits.reshape(n)), _pack_words(mask.reshape(n)))


def _rotated_words(code: IrisCode, shifts: np.ndarray):
    """(bits, mask) uint64 arrays of shape (n_shifts, words)."""
    bits, mask = code.unpacked()
    n = code.n_bits
    b = np.stack([np.roll(bits, int(s), axis=1).reshape(n) for s in shifts])
    m = np.stack([np.roll(mask, int(s), axis=1).reshape(n) for s in shifts])
    return _pack_words(b), _pack_words(m)


def _check_codes(a: IrisCode, b: IrisCode):
    if a.kind != b.kind or a.layout != b.layout:
        raise LayoutMismatch(
            f"cannot match {a.kind}{a.layout} against {b.kind}{b.layout}")


# ---- single pair ----

def hamming_match(a: IrisCode, b: IrisCode,
                  config: MatcherConfig = MatcherConfig()) -> MatchScore:
    """Best-shift masked Hamming similarity for one code pair."""
    _check_codes(a, b)
    shifts = shift_priority(config.max_shift)
    a_bits, a_mask = _code_words(a)
    b_bits, b_mask = _rotated_words(b, shifts)
    joint = a_mask[None, :] & b_mask
    diff = (a_bits[None, :] ^ b_bits) & joint
    den = np.bitwise_count(joint).sum(axis=1).astype(np.int64)
    num = np.bitwise_count(diff).sum(axis=1).astype(np.int64)
    min_valid = config.min_valid_fraction * a.n_bits
    best = None
    for i in range(shifts.size):
        # den == 0 must skip even at min_valid 0: no evidence, no HD
        if den[i] == 0 or den[i] < min_valid:
            continue
        hd = num[i] / den[i]
        if best is None or hd < best[0]:
            best = (hd, int(shifts[i]), int(den[i]))
    if best is None:
        raise InsufficientOverlap(
            f"no shift reaches {config.min_valid_fraction:.2f} of {a.n_bits} bits")
    return MatchScore(similarity=1.0 - best[0], best_shift=best[1],
                      valid_bits=best[2])


def cosine_match(a: Embedding, b: Embedding) -> MatchScore:
    if a.dims != b.dims:
        raise DimMismatch(f"embedding dims {a.dims} != {b.dims}")
    sim = float(a.values @ b.values)
    return MatchScore(similarity=sim, best_shift=0, valid_bits=a.dims)


# ---- batch kernel ----

@intrinsic
def _popcount64(typingctx, x):
    """Hardware population count; the software fallback halves throughput."""
    if x != types.uint64:
        return None
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        fn = builder.module.declare_intrinsic("llvm.ctpop", [ir.IntType(64)])
        return builder.call(fn, args)

    return sig, codegen


@njit(cache=True, nogil=True)
def _hamming_kernel(a_bits, a_mask, b_bits, b_mask, pa, pb, shifts,
                    min_valid, out_sim, out_shift, out_valid):
    # shifts come pre-ordered by tie-break priority; strict < keeps
    # the earliest (highest-priority) minimum
    n = pa.shape[0]
    ns = shifts.shape[0]
    w = a_bits.shape[1]
    for i in range(n):
        ia = pa[i]
        ib = pb[i]
        best_hd = 2.0
        best_s = 0
        best_v = 0
        found = False
        for si in range(ns):
            num = uint64(0)
            den = uint64(0)
            for k in range(w):
                m = a_mask[ia, k] & b_mask[ib, si, k]
                x = (a_bits[ia, k] ^ b_bits[ib, si, k]) & m
                den += _popcount64(m)
                num += _popcount64(x)
            if den == uint64(0) or den < min_valid:
                continue
            hd = num / den
            if hd < best_hd:
                best_hd = hd
                best_s = shifts[si]
                best_v = den
                found = True
        if found:
            out_sim[i] = 1.0 - best_hd
            out_shift[i] = best_s
            out_valid[i] = best_v
        else:
            out_sim[i] = SENTINEL_SIMILARITY
            out_shift[i] = 0
            out_valid[i] = 0


class CodeMatcher:
    """Reusable batch matcher over a template map of binary codes."""

    def __init__(self, templates: dict, config: MatcherConfig = MatcherConfig()):
        kinds = {t.kind for t in templates.values()}
        layouts = {t.layout for t in templates.values()}
        if len(kinds) > 1 or len(layouts) > 1:
            raise LayoutMismatch(f"mixed code kinds/layouts: {kinds} {layouts}")
        self.config = config
        self.shifts = shift_priority(config.max_shift)
        self.ids = sorted(templates)
        self.index = {sid: i for i, sid in enumerate(self.ids)}
        first = templates[self.ids[0]]
        self.n_bits = first.n_bits
        self.min_valid = config.min_valid_fraction * self.n_bits

        plain_b, plain_m, rot_b, rot_m = [], [], [], []
        for sid in self.ids:
            code = templates[sid]
            pb_, pm_ = _code_words(code)
            rb, rm = _rotated_words(code, self.shifts)
            plain_b.append(pb_)
            plain_m.append(pm_)
            rot_b.append(rb)
            rot_m.append(rm)
        self.a_bits = np.ascontiguousarray(np.stack(plain_b))
        self.a_mask = np.ascontiguousarray(np.stack(plain_m))
        self.b_bits = np.ascontiguousarray(np.stack(rot_b))
        self.b_mask = np.ascontiguousarray(np.stack(rot_m))

    def score(self, probe_ids, ref_ids, workers: int | None = None):
        """Similarity/shift/valid arrays for aligned id sequences."""
        try:
            pa = np.asarray([self.index[s] for s in probe_ids], dtype=np.int64)
            pb = np.asarray([self.index[s] for s in ref_ids], dtype=np.int64)
        except KeyError as e:
            raise MissingTemplate(e.args[0]) from None
        n = pa.size
        sim = np.empty(n, dtype=np.float64)
        shf = np.empty(n, dtype=np.int64)
        val = np.empty(n, dtype=np.int64)
        workers = self.config.workers if workers is None else workers
        if n == 0:
            return sim, shf, val
        if workers <= 1 or n < 4096:
            _hamming_kernel(self.a_bits, self.a_mask, self.b_bits, self.b_mask,
                            pa, pb, self.shifts, float(self.min_valid),
                            sim, shf, val)
        else:
            bounds = np.linspace(0, n, workers + 1).astype(np.int64)
            def run(lo, hi):
                _hamming_kernel(self.a_bits, self.a_mask, self.b_bits,
                                self.b_mask, pa[lo:hi], pb[lo:hi], self.shifts,
                                float(self.min_valid), sim[lo:hi], shf[lo:hi],
                                val[lo:hi])
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(run, int(bounds[i]), int(bounds[i + 1]))
                        for i in range(workers)]
                for f in futs:
                    f.result()
        return sim, shf, val


# ---- batch over pair lists ----

@dataclass
class ScoreTable:
    """Per-pair match results; k = 1 (single eye) or 2 (left, right)."""

    probe_ids: list
    reference_ids: list
    labels: np.ndarray
    similarity: np.ndarray
    best_shift: np.ndarray
    valid_bits: np.ndarray

    @property
    def eyes(self) -> int:
        return self.similarity.shape[1]

    def __len__(self):
        return self.labels.size

    def fused_similarity(self) -> np.ndarray:
        """Single conservative score per pair (min over eyes)."""
        return self.similarity.min(axis=1)

    def genuine(self, eye=0) -> np.ndarray:
        return self.similarity[self.labels == 1, eye]

    def impostor(self, eye=0) -> np.ndarray:
        return self.similarity[self.labels == 0, eye]


def _pair_columns(pairs):
    probes, refs, labels = [], [], []
    for probe, ref, label in pairs:
        probe = (probe,) if isinstance(probe, str) else tuple(probe)
        ref = (ref,) if isinstance(ref, str) else tuple(ref)
        if len(probe) != len(ref) or len(probe) not in (1, 2):
            raise ValueError(f"pair arity mismatch: {probe} vs {ref}")
        probes.append(probe)
        refs.append(ref)
        labels.append(int(label))
    return probes, refs, np.asarray(labels, dtype=np.int8)


def match_pairs(pairs, templates: dict, config: MatcherConfig = MatcherConfig()) -> ScoreTable:
    """Score a labeled pair list against a template map.

    Accepts (probe, reference, label) triples where probe/reference are
    sample ids (single eye) or (left, right) id tuples (dual).  Results
    are independent of worker count and pair order.
    """
    probes, refs, labels = _pair_columns(pairs)
    n = labels.size
    k = len(probes[0]) if n else 1
    sim = np.zeros((n, k), dtype=np.float64)
    shf = np.zeros((n, k), dtype=np.int64)
    val = np.zeros((n, k), dtype=np.int64)
    if n == 0:
        return ScoreTable(probes, refs, labels, sim, shf, val)

    used = {s for p in probes for s in p} | {s for r in refs for s in r}
    missing = used - set(templates)
    if missing:
        raise MissingTemplate(sorted(missing)[0])
    sample = templates[next(iter(used))]

    if isinstance(sample, Embedding):
        dims = {templates[s].dims for s in used}
        if len(dims) > 1:
            raise DimMismatch(f"mixed embedding dims {sorted(dims)}")
        for eye in range(k):
            a = np.stack([templates[p[eye]].values for p in probes])
            b = np.stack([templates[r[eye]].values for r in refs])
            sim[:, eye] = np.einsum("ij,ij->i", a, b)
            val[:, eye] = a.shape[1]
        return ScoreTable(probes, refs, labels, sim, shf, val)

    if not isinstance(sample, IrisCode):
        raise MixedKinds(f"unsupported template type {type(sample)!r}")
    matcher = CodeMatcher({s: templates[s] for s in used}, config)
    for eye in range(k):
        s, h, v = matcher.score([p[eye] for p in probes],
                                [r[eye] for r in refs])
        sim[:, eye] = s
        shf[:, eye] = h
        val[:, eye] = v
    return ScoreTable(probes, refs, labels, sim, shf, val)


def match_gallery(probe_ids, gallery_ids, templates: dict,
                  config: MatcherConfig = MatcherConfig()) -> np.ndarray:
    """Full probe x gallery similarity matrix (single-eye ids)."""
    if not probe_ids or not gallery_ids:
        return np.zeros((len(probe_ids), len(gallery_ids)))
    sample = templates.get(gallery_ids[0])
    if sample is None:
        raise MissingTemplate(gallery_ids[0])
    if isinstance(sample, Embedding):
        try:
            a = np.stack([templates[p].values for p in probe_ids])
            g = np.stack([templates[s].values for s in gallery_ids])
        except KeyError as e:
            raise MissingTemplate(e.args[0]) from None
        except AttributeError:
            raise MixedKinds("gallery mixes embeddings and codes") from None
        return a @ g.T
    used = set(probe_ids) | set(gallery_ids)
    missing = used - set(templates)
    if missing:
        raise MissingTemplate(sorted(missing)[0])
    matcher = CodeMatcher({s: templates[s] for s in used}, config)
    np_, ng = len(probe_ids), len(gallery_ids)
    pa = np.repeat(np.arange(np_), ng)
    pb = np.tile(np.arange(ng), np_)
    sim, _, _ = matcher.score([probe_ids[i] for i in pa],
                              [gallery_ids[i] for i in pb])
    return sim.reshape(np_, ng)


# ---- scores CSV ----

def save_scores(table: ScoreTable, path, spec_json: dict | None = None):
    """Write per-pair results as CSV.

    ``spec_json`` (typically the protocol spec the pairs came from) is
    kept as a leading comment line so evaluation can recover the run's
    provenance from the scores file alone.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if spec_json is not None:
            fh.write("# protocol-spec: " + json.dumps(spec_json, sort_keys=True)
                     + "\n")
        wr = csv.writer(fh)
        if table.eyes == 1:
            wr.writerow(SINGLE_HEADER)
            for i in range(len(table)):
                wr.writerow([table.probe_ids[i][0], table.reference_ids[i][0],
                             int(table.labels[i]),
                             repr(float(table.similarity[i, 0])),
                             int(table.best_shift[i, 0]), int(table.valid_bits[i, 0])])
        else:
            wr.writerow(DUAL_HEADER)
            for i in range(len(table)):
                wr.writerow([table.probe_ids[i][0], table.probe_ids[i][1],
                             table.reference_ids[i][0], table.reference_ids[i][1],
                             int(table.labels[i]),
                             repr(float(table.similarity[i, 0])),
                             repr(float(table.similarity[i, 1])),
                             int(table.best_shift[i, 0]), int(table.best_shift[i, 1]),
                             int(table.valid_bits[i, 0]), int(table.valid_bits[i, 1])])


def load_scores(path) -> ScoreTable:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = None
        for row in rd:
            if row and not row[0].startswith("#"):
                header = tuple(row)
                break
        if header is None:
            raise ParseError(f"{path}: empty scores file") from None
        if header == SINGLE_HEADER:
            k = 1
        elif header == DUAL_HEADER:
            k = 2
        else:
            raise ParseError(f"{path}: unrecognized scores header {header}")
        probes, refs, labels, sims, shfs, vals = [], [], [], [], [], []
        for row in rd:
            if not row:
                continue
            if k == 1:
                p, r, lab, s, h, v = row
                probes.append((p,))
                refs.append((r,))
                labels.append(int(lab))
                sims.append([float(s)])
                shfs.append([int(h)])
                vals.append([int(v)])
            else:
                pl, pr, rl, rr, lab, sl, sr, hl, hr, vl, vr = row
                probes.append((pl, pr))
                refs.append((rl, rr))
                labels.append(int(lab))
                sims.append([float(sl), float(sr)])
                shfs.append([int(hl), int(hr)])
                vals.append([int(vl), int(vr)])
    n = len(labels)
    return ScoreTable(probes, refs, np.asarray(labels, dtype=np.int8),
                      np.asarray(sims, dtype=np.float64).reshape(n, k),
                      np.asarray(shfs, dtype=np.int64).reshape(n, k),
                      np.asarray(vals, dtype=np.int64).reshape(n, k))
