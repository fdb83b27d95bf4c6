"""Evaluation metrics and report assembly.

Verification sweeps are threshold-exact: the candidate threshold set
is the observed impostor scores plus +infinity, the operating
threshold for a FAR target is the smallest candidate whose false
accept rate does not exceed the target, and a comparison is accepted
iff similarity >= threshold.  No interpolation anywhere, so every
reported operating point is achievable by the system as measured.

Dual-eye decisions fuse with logical AND: each eye applies its own
threshold (verification) or its own top-1 vote (identification).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGallery, EmptyGenuine, InsufficientImpostors

DEFAULT_FAR_TARGETS = (1e-1, 1e-3, 1e-5)


@dataclass(frozen=True)
class ScoreSet:
    """Similarity score pools for one verification run."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "genuine",
                           np.asarray(self.genuine, dtype=np.float64).ravel())
        object.__setattr__(self, "impostor",
                           np.asarray(self.impostor, dtype=np.float64).ravel())


@dataclass(frozen=True)
class DetPoint:
    far_target: float
    achieved_far: float
    frr: float
    threshold: object   # float, or (left, right) floats for dual runs

    def to_json(self):
        thr = self.threshold
        if isinstance(thr, tuple):
            thr = list(thr)
        return {"far_target": self.far_target, "achieved_far": self.achieved_far,
                "frr": self.frr, "threshold": thr}


def _threshold_for_far(impostor: np.ndarray, far_target: float):
    """(threshold, achieved_far) by exact sweep over observed scores."""
    n = impostor.size
    u = np.unique(impostor)                    # ascending
    far = (n - np.searchsorted(impostor, u, side="left")) / n
    # far is strictly decreasing along u; find the first candidate at
    # or under the target, else fall back to +inf (accept nothing)
    ok = np.nonzero(far <= far_target)[0]
    if ok.size == 0:
        return np.inf, 0.0
    i = ok[0]
    return float(u[i]), float(far[i])


def frr_at_far(genuine, impostor, far_target: float) -> DetPoint:
    """False reject rate at the tightest threshold meeting a FAR target.

    Requires at least 1/far_target impostor scores so the target is
    meaningfully measurable; raises InsufficientImpostors otherwise and
    EmptyGenuine without genuine scores.
    """
    if not (0.0 < far_target <= 1.0):
        raise ValueError(f"far_target {far_target} outside (0, 1]")
    gen = np.asarray(genuine, dtype=np.float64).ravel()
    imp = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    if gen.size == 0:
        raise EmptyGenuine("no genuine scores")
    if imp.size < 1.0 / far_target:
        raise InsufficientImpostors(
            f"{imp.size} impostor scores cannot resolve FAR {far_target}")
    thr, achieved = _threshold_for_far(imp, far_target)
    frr = float(np.mean(gen < thr))
    return DetPoint(far_target=float(far_target), achieved_far=achieved,
                    frr=frr, threshold=thr)


def dual_frr_at_far(genuine_lr, impostor_lr, far_target: float) -> DetPoint:
    """AND-fused verification point from per-eye score pairs.

    genuine_lr / impostor_lr are (n, 2) arrays of (left, right)
    similarities for the same comparison.  Each eye gets its own
    threshold from its own impostor pool at the shared FAR target; a
    pair is accepted only if both eyes accept.
    """
    if not (0.0 < far_target <= 1.0):
        raise ValueError(f"far_target {far_target} outside (0, 1]")
    gen = np.asarray(genuine_lr, dtype=np.float64).reshape(-1, 2)
    imp = np.asarray(impostor_lr, dtype=np.float64).reshape(-1, 2)
    if gen.shape[0] == 0:
        raise EmptyGenuine("no genuine scores")
    if imp.shape[0] < 1.0 / far_target:
        raise InsufficientImpostors(
            f"{imp.shape[0]} impostor pairs cannot resolve FAR {far_target}")
    thr_l, _ = _threshold_for_far(np.sort(imp[:, 0]), far_target)
    thr_r, _ = _threshold_for_far(np.sort(imp[:, 1]), far_target)
    acc_imp = (imp[:, 0] >= thr_l) & (imp[:, 1] >= thr_r)
    acc_gen = (gen[:, 0] >= thr_l) & (gen[:, 1] >= thr_r)
    return DetPoint(far_target=float(far_target),
                    achieved_far=float(np.mean(acc_imp)),
                    frr=float(np.mean(~acc_gen)),
                    threshold=(float(thr_l), float(thr_r)))


def dual_fuse_verification(left_accept, right_accept):
    """Fused accept decision: both eyes must accept."""
    return np.logical_and(left_accept, right_accept)


# ---- identification ----

def top1_indices(scores: np.ndarray, tiebreak_keys) -> np.ndarray:
    """Per-probe argmax over gallery columns.

    Exact score ties resolve to the entry with the lexicographically
    smallest tie-break key (its gallery id).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise EmptyGallery("empty gallery score matrix")
    keys = list(tiebreak_keys)
    if len(keys) != scores.shape[1]:
        raise ValueError("tie-break keys must align with gallery columns")
    out = np.empty(scores.shape[0], dtype=np.int64)
    best = scores.max(axis=1)
    for i in range(scores.shape[0]):
        cand = np.nonzero(scores[i] == best[i])[0]
        out[i] = min(cand, key=lambda j: keys[j])
    return out


def rank1(scores: np.ndarray, probe_classes, gallery_classes,
          tiebreak_keys=None) -> float:
    """Rank-1 identification accuracy for a probe x gallery score matrix."""
    gallery_classes = list(gallery_classes)
    keys = gallery_classes if tiebreak_keys is None else list(tiebreak_keys)
    top = top1_indices(scores, keys)
    probe_classes = np.asarray(list(probe_classes))
    picked = np.asarray([gallery_classes[j] for j in top])
    return float(np.mean(picked == probe_classes))


def dual_rank1(scores_l, scores_r, probe_classes, gallery_classes,
               keys_l=None, keys_r=None) -> float:
    """Both-eye conjunction rank-1: correct iff each eye ranks the true
    class first on its own."""
    gallery_classes = list(gallery_classes)
    kl = gallery_classes if keys_l is None else list(keys_l)
    kr = gallery_classes if keys_r is None else list(keys_r)
    top_l = top1_indices(scores_l, kl)
    top_r = top1_indices(scores_r, kr)
    probe_classes = np.asarray(list(probe_classes))
    pick_l = np.asarray([gallery_classes[j] for j in top_l])
    pick_r = np.asarray([gallery_classes[j] for j in top_r])
    return float(np.mean((pick_l == probe_classes) & (pick_r == probe_classes)))


# ---- report ----

@dataclass
class ProtocolResult:
    protocol: str
    eye_mode: str
    task: str
    n_genuine: int
    n_impostor: int
    points: list = field(default_factory=list)
    rank1: float | None = None

    def to_json(self):
        obj = {"protocol": self.protocol, "eye_mode": self.eye_mode,
               "task": self.task, "n_genuine": self.n_genuine,
               "n_impostor": self.n_impostor,
               "points": [p.to_json() for p in self.points]}
        if self.rank1 is not None:
            obj["rank1"] = self.rank1
        return obj

    @classmethod
    def from_json(cls, obj):
        points = [DetPoint(far_target=p["far_target"],
                           achieved_far=p["achieved_far"], frr=p["frr"],
                           threshold=tuple(p["threshold"])
                           if isinstance(p["threshold"], list) else p["threshold"])
                  for p in obj["points"]]
        return cls(protocol=obj["protocol"], eye_mode=obj["eye_mode"],
                   task=obj["task"], n_genuine=obj["n_genuine"],
                   n_impostor=obj["n_impostor"], points=points,
                   rank1=obj.get("rank1"))


def report_json(results) -> str:
    """Canonical serialization: stable key order, sorted result order."""
    ordered = sorted(results, key=lambda r: (r.protocol, r.eye_mode, r.task))
    obj = {"results": [r.to_json() for r in ordered]}
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def load_report(path):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return [ProtocolResult.from_json(r) for r in obj["results"]]


def report_table(results) -> str:
    """Human-readable summary, one row per protocol/eye/operating point."""
    rows = [("protocol", "eyes", "task", "genuine", "impostor",
             "far_target", "far", "frr", "rank1")]
    for r in sorted(results, key=lambda x: (x.protocol, x.eye_mode, x.task)):
        r1 = "" if r.rank1 is None else f"{r.rank1:.4f}"
        if not r.points:
            rows.append((r.protocol, r.eye_mode, r.task, str(r.n_genuine),
                         str(r.n_impostor), "", "", "", r1))
        for p in r.points:
            rows.append((r.protocol, r.eye_mode, r.task, str(r.n_genuine),
                         str(r.n_impostor), f"{p.far_target:g}",
                         f"{p.achieved_far:.2e}", f"{p.frr:.4f}", r1))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(widths))))
    return "\n".join(lines) + "\n"
