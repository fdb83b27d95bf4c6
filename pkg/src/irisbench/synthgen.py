"""Synthetic ocular acquisition simulator.

Renders 8-bit near-infrared-style eye crops with exact ground truth.
The model is deliberately compact but covariate-faithful:

* Geometry.  A frontal circular iris of per-subject radius is viewed
  off axis.  The camera sits at a fixed tilt below the visual axis and
  the subject fixates one of nine gaze targets on a 3x3 grid (yaw
  steps +-15 deg, pitch steps +-10 deg).  Gaze deviation always moves
  the view further off axis, so the total off-axis angle is the tilt
  plus the angular distance of the gaze offset; the projected iris is
  an ellipse with axis ratio b/a = cos(total angle), squashed along
  the projected view direction.
* Pupil.  The pupil-to-iris diameter ratio tracks display brightness
  linearly from 0.65 at level 0 (darkest) down to 0.30 at level 10.
* Texture.  Each identity freezes a band-limited harmonic field over
  normalized annulus coordinates (2..8 angular cycles per quadrant),
  so dilation stretches but never destroys the pattern.
* Clutter.  Eyelid arcs, eyelash strokes, specular blobs, global
  brightness gain, and per-frame sensor noise come from seeded
  sub-streams; occasional heavy-tailed draws (droopy lid, bushy
  lashes, big flare) supply the challenging fraction of the corpus.

Rendering is a pure function of (subject, capture params, config):
identical inputs give byte-identical images and annotations.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import Annotation, Ellipse, Mask, SampleRecord
from .imgio import write_image
from .rng import derive_seed, substream

# pupil-to-iris diameter ratio by brightness level, 0.65 dark .. 0.30 bright
PUPIL_RATIO_DARK = 0.65
PUPIL_RATIO_STEP = 0.035

GAZE_GRID = 3
N_GAZE = 9
N_LEVELS = 11
N_FRAMES = 5

# gray levels before gain
SKIN_GRAY = 178.0
SCLERA_GRAY = 208.0
IRIS_BASE_GRAY = 62.0
IRIS_SPAN_GRAY = 128.0
PUPIL_GRAY = 22.0
LID_GRAY = 172.0
LASH_GRAY = 35.0

# heavy-tail event rates for the challenging fraction.  Lid droop and
# lash density are anatomical, so they are subject-level propensities
# (both eyes of an affected subject misbehave often); glare is purely
# environmental and stays per capture.
SUBJ_DROOPY_RATE = 0.08
DROOP_P_HIGH = 0.45
DROOP_P_LOW = 0.015
SUBJ_BUSHY_RATE = 0.06
BUSHY_P_HIGH = 0.30
BUSHY_P_LOW = 0.006
P_LOW_LOWER = 0.030
P_BIG_FLARE = 0.015

DEFECTS = ("closed_eye", "out_of_frame", "motion_blur")


def pupil_diameter_ratio(level: int) -> float:
    return PUPIL_RATIO_DARK - PUPIL_RATIO_STEP * level


def brightness_gain(level: int) -> float:
    return 0.60 + 0.04 * level


@dataclass(frozen=True)
class SimulatorConfig:
    image_size: int = 640
    camera_tilt_deg: float = 20.0
    yaw_step_deg: float = 15.0
    pitch_step_deg: float = 10.0
    gaze_shift_px_per_deg: float = 1.3
    iris_radius_range: tuple = (110.0, 135.0)
    ocular_radius_factor: float = 1.9
    noise_sigma: float = 2.5
    texture_components: int = 10


@dataclass(frozen=True)
class SubjectModel:
    """Frozen per-identity state: anatomy plus texture harmonics."""

    subject_id: str
    identity_seed: int
    base_iris_radius: float
    lid_droop_p: float      # per-capture droopy upper lid probability
    lash_bushy_p: float     # per-capture dense lash probability
    tex_ang: np.ndarray     # angular harmonic per component (cycles/rev)
    tex_rad: np.ndarray     # radial half-wave count per component
    tex_amp: np.ndarray
    tex_phase: np.ndarray
    upper_open_base: float  # characteristic palpebral aperture, radius units
    lower_open_base: float
    iris_shade: float       # pigmentation offset on the iris base gray


def make_subject(subject_id: str, seed: int,
                 config: SimulatorConfig = SimulatorConfig()) -> SubjectModel:
    """Draw a subject's frozen identity state from the seed."""
    rng = substream(seed, "subject", subject_id)
    lo, hi = config.iris_radius_range
    radius = float(rng.uniform(lo, hi))
    droop_p = DROOP_P_HIGH if rng.random() < SUBJ_DROOPY_RATE else DROOP_P_LOW
    bushy_p = BUSHY_P_HIGH if rng.random() < SUBJ_BUSHY_RATE else BUSHY_P_LOW
    k = config.texture_components
    return SubjectModel(
        subject_id=subject_id,
        identity_seed=derive_seed(seed, "identity", subject_id),
        base_iris_radius=radius,
        lid_droop_p=droop_p,
        lash_bushy_p=bushy_p,
        tex_ang=rng.integers(8, 33, size=k).astype(np.float64),
        tex_rad=rng.integers(0, 5, size=k).astype(np.float64),
        tex_amp=rng.uniform(0.5, 1.0, size=k),
        tex_phase=rng.uniform(0.0, 2.0 * np.pi, size=k),
        upper_open_base=float(rng.uniform(0.85, 1.30)),
        lower_open_base=float(rng.uniform(0.95, 1.35)),
        iris_shade=float(rng.uniform(-25.0, 25.0)),
    )


@dataclass(frozen=True)
class CaptureParams:
    eye: str
    gaze_point: int
    brightness_level: int
    frame_idx: int
    noise_seed: int


@dataclass(frozen=True)
class DegradationProfile:
    """Per-defect probabilities for annotation-breaking captures."""

    closed_eye: float = 0.0
    out_of_frame: float = 0.0
    motion_blur: float = 0.0

    def __post_init__(self):
        probs = [self.closed_eye, self.out_of_frame, self.motion_blur]
        if any(p < 0 for p in probs) or sum(probs) > 1.0:
            raise ValueError("defect probabilities must be >= 0 and sum <= 1")

    @property
    def total(self) -> float:
        return self.closed_eye + self.out_of_frame + self.motion_blur


DEFAULT_DEGRADATIONS = DegradationProfile(closed_eye=0.030, out_of_frame=0.015,
                                          motion_blur=0.023)


def gaze_offsets(gaze_point: int, config: SimulatorConfig = SimulatorConfig()):
    """(yaw, pitch) offset in degrees for grid points 1..9 (row major)."""
    col = (gaze_point - 1) % GAZE_GRID
    row = (gaze_point - 1) // GAZE_GRID
    return (col - 1) * config.yaw_step_deg, (row - 1) * config.pitch_step_deg


# ---- per-capture state ----

@dataclass
class _Capture:
    cx: float
    cy: float
    radius: float           # iris semi-major in image px
    squash: float           # b/a
    phi: float              # major-axis angle
    ux: float               # squash (minor axis) direction, unit
    uy: float
    pupil_ratio: float
    upper_open: float       # lid opening in units of radius
    lower_open: float
    lashes: list            # (x0, y0, angle, length) tuples
    blobs: list             # (bx, by, brad) tuples
    gain: float
    defect: str | None


def _capture_state(subject: SubjectModel, params: CaptureParams,
                   config: SimulatorConfig, defect: str | None) -> _Capture:
    yaw, pitch = gaze_offsets(params.gaze_point, config)
    total = config.camera_tilt_deg + math.hypot(yaw, pitch)
    squash = math.cos(math.radians(total))
    # squash along the projected view direction; x follows yaw, y
    # follows tilt plus pitch (image y grows downward)
    dx, dy = yaw, config.camera_tilt_deg + pitch
    norm = math.hypot(dx, dy)
    ux, uy = dx / norm, dy / norm
    phi = math.atan2(uy, ux) + 0.5 * math.pi

    geo = substream(params.noise_seed, "geo")
    half = config.image_size / 2.0
    shift = config.gaze_shift_px_per_deg
    jx, jy = np.clip(geo.normal(0.0, 2.5, size=2), -6.0, 6.0)
    cx = half + yaw * shift + float(jx)
    cy = half + pitch * shift + float(jy)
    radius = subject.base_iris_radius * float(geo.uniform(0.97, 1.03))

    # apertures vary around the subject's characteristic opening, so lid
    # geometry carries identity across captures the way real eyes do
    lid = substream(params.noise_seed, "lid")
    if lid.random() < subject.lid_droop_p:
        upper = float(lid.uniform(0.28, 0.55))
    else:
        upper = float(np.clip(lid.normal(subject.upper_open_base, 0.03),
                              0.80, 1.45))
    if lid.random() < P_LOW_LOWER:
        lower = float(lid.uniform(0.50, 0.75))
    else:
        lower = float(np.clip(lid.normal(subject.lower_open_base, 0.03),
                              0.90, 1.50))

    # the lash pattern is anatomy: frozen per subject and regime, with
    # only small per-capture jitter; the regime draw itself stays
    # per-capture (squint / makeup state)
    lash = substream(params.noise_seed, "lash")
    bushy = lash.random() < subject.lash_bushy_p
    base = substream(subject.identity_seed, "lash-base", int(bushy))
    if bushy:
        count = 24 + int(base.poisson(10.0))
        lengths = base.uniform(30.0, 70.0, size=count)
    else:
        count = 2 + int(base.poisson(2.0))
        lengths = base.uniform(18.0, 42.0, size=count)
    xs = base.uniform(-1.1, 1.1, size=count) * radius
    angles = 0.5 * math.pi + base.normal(0.0, math.radians(18.0), size=count)
    xs = xs + lash.normal(0.0, 1.5, size=count)
    angles = angles + lash.normal(0.0, math.radians(2.0), size=count)
    lengths = lengths * lash.uniform(0.94, 1.06, size=count)
    lashes = [(float(x), float(a), float(l))
              for x, a, l in zip(xs, angles, lengths)]

    refl = substream(params.noise_seed, "refl")
    blobs = []
    # pupil glint
    g_ang = refl.uniform(0.0, 2.0 * np.pi)
    g_off = refl.uniform(0.3, 0.7) * pupil_diameter_ratio(params.brightness_level) * radius
    blobs.append((g_off * math.cos(g_ang), g_off * math.sin(g_ang),
                  float(refl.uniform(2.5, 4.5))))
    if refl.random() < P_BIG_FLARE:
        f_ang = refl.uniform(0.0, 2.0 * np.pi)
        f_off = refl.uniform(0.0, 0.8) * radius
        blobs.append((f_off * math.cos(f_ang), f_off * math.sin(f_ang),
                      float(refl.uniform(30.0, 50.0))))
    n_env = int(refl.poisson(0.25 + 0.06 * params.brightness_level))
    for _ in range(n_env):
        e_ang = refl.uniform(0.0, 2.0 * np.pi)
        e_off = refl.uniform(0.0, 1.2) * radius
        blobs.append((e_off * math.cos(e_ang), e_off * math.sin(e_ang),
                      float(refl.uniform(3.0, 9.0))))

    cap = _Capture(cx=cx, cy=cy, radius=radius, squash=squash, phi=phi,
                   ux=ux, uy=uy,
                   pupil_ratio=pupil_diameter_ratio(params.brightness_level),
                   upper_open=upper, lower_open=lower, lashes=lashes,
                   blobs=blobs, gain=brightness_gain(params.brightness_level),
                   defect=defect)
    if defect == "closed_eye":
        cap.upper_open = 0.04
        cap.lower_open = 0.04
        cap.lashes = []
    elif defect == "out_of_frame":
        d_ang = geo.uniform(0.0, 2.0 * np.pi)
        d_len = geo.uniform(300.0, 450.0)
        cap.cx += d_len * math.cos(d_ang)
        cap.cy += d_len * math.sin(d_ang)
    return cap


def _apply_affine(cap: _Capture, vx, vy):
    """Canonical eye frame -> image offsets (squash along u)."""
    d = cap.ux * vx + cap.uy * vy
    s = (1.0 - cap.squash) * d
    return vx - s * cap.ux, vy - s * cap.uy


def _annotation_geometry(cap: _Capture, config: SimulatorConfig):
    a_i = cap.radius
    b_i = cap.squash * cap.radius
    phi = cap.phi
    iris = Ellipse(cap.cx, cap.cy, a_i, b_i, phi)
    pupil = Ellipse(cap.cx, cap.cy, cap.pupil_ratio * a_i,
                    cap.pupil_ratio * b_i, phi)
    r_oc = config.ocular_radius_factor * cap.radius
    ocular = Ellipse(cap.cx, cap.cy, r_oc, cap.squash * r_oc, phi)
    return iris, pupil, ocular


def _lid_curves(cap: _Capture, xs: np.ndarray):
    """Upper/lower lid boundary y per image column."""
    w_lid = 1.9 * cap.radius
    arg = 1.0 - ((xs - cap.cx) / w_lid) ** 2
    arc = np.sqrt(np.maximum(arg, 0.0))
    y_upper = cap.cy - cap.upper_open * cap.radius * arc
    y_lower = cap.cy + cap.lower_open * cap.radius * arc
    return y_upper, y_lower


def _lash_pixels(cap: _Capture, xs: np.ndarray, size: int):
    """Row/col indices of all eyelash stroke pixels."""
    if not cap.lashes:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    y_upper, _ = _lid_curves(cap, xs)
    rows, cols = [], []
    for x_off, angle, length in cap.lashes:
        x0 = cap.cx + x_off
        xi = int(np.clip(round(x0), 0, size - 1))
        y0 = float(y_upper[xi]) + 4.0
        t = np.arange(0.0, length, 0.7)
        px = np.rint(x0 + t * math.cos(angle)).astype(np.int64)
        py = np.rint(y0 + t * math.sin(angle)).astype(np.int64)
        # 2 px thick strokes
        px = np.concatenate([px, px + 1])
        py = np.concatenate([py, py])
        ok = (px >= 0) & (px < size) & (py >= 0) & (py < size)
        cols.append(px[ok])
        rows.append(py[ok])
    return np.concatenate(rows), np.concatenate(cols)


def _blob_pixels(cap: _Capture, size: int):
    rows, cols = [], []
    for vx, vy, rad in cap.blobs:
        ox, oy = _apply_affine(cap, vx, vy)
        bx, by = cap.cx + ox, cap.cy + oy
        x0 = int(max(0, math.floor(bx - rad)))
        x1 = int(min(size, math.ceil(bx + rad) + 1))
        y0 = int(max(0, math.floor(by - rad)))
        y1 = int(min(size, math.ceil(by + rad) + 1))
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        hit = (xx - bx) ** 2 + (yy - by) ** 2 <= rad * rad
        rows.append(yy[hit].ravel())
        cols.append(xx[hit].ravel())
    if not rows:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return np.concatenate(rows), np.concatenate(cols)


def _subrect(cap: _Capture, config: SimulatorConfig):
    ext = config.ocular_radius_factor * cap.radius + 12.0
    size = config.image_size
    x0 = int(np.clip(math.floor(cap.cx - ext), 0, size))
    x1 = int(np.clip(math.ceil(cap.cx + ext) + 1, 0, size))
    y0 = int(np.clip(math.floor(cap.cy - ext), 0, size))
    y1 = int(np.clip(math.ceil(cap.cy + ext) + 1, 0, size))
    return x0, x1, y0, y1


def _region_fields(cap: _Capture, config: SimulatorConfig, x0, x1, y0, y1):
    """Canonical-frame coordinates and radius^2 on the subrect."""
    xs = np.arange(x0, x1, dtype=np.float32)
    ys = np.arange(y0, y1, dtype=np.float32)
    dx = (xs - np.float32(cap.cx))[None, :]
    dy = (ys - np.float32(cap.cy))[:, None]
    # inverse squash: unit along u scaled back by 1/squash
    g = np.float32((1.0 - cap.squash) / cap.squash)
    d = np.float32(cap.ux) * dx + np.float32(cap.uy) * dy
    qx = dx + g * d * np.float32(cap.ux)
    qy = dy + g * d * np.float32(cap.uy)
    return qx, qy, qx * qx + qy * qy


def _masks(cap: _Capture, config: SimulatorConfig):
    """Full-frame occlusion and reflection masks."""
    size = config.image_size
    occ = np.zeros((size, size), dtype=np.uint8)
    refl = np.zeros((size, size), dtype=np.uint8)
    x0, x1, y0, y1 = _subrect(cap, config)
    if x1 > x0 and y1 > y0:
        _, _, r2 = _region_fields(cap, config, x0, x1, y0, y1)
        r_oc = config.ocular_radius_factor * cap.radius
        ocular = r2 < np.float32(r_oc * r_oc)
        xs = np.arange(x0, x1, dtype=np.float64)
        y_upper, y_lower = _lid_curves(cap, xs)
        yy = np.arange(y0, y1, dtype=np.float64)[:, None]
        covered = (yy < y_upper[None, :]) | (yy > y_lower[None, :])
        occ[y0:y1, x0:x1] = (covered & ocular).astype(np.uint8)
    xs_full = np.arange(size, dtype=np.float64)
    lr, lc = _lash_pixels(cap, xs_full, size)
    occ[lr, lc] = 1
    br, bc = _blob_pixels(cap, size)
    refl[br, bc] = 1
    return occ, refl


def render_annotation(subject: SubjectModel, params: CaptureParams,
                      config: SimulatorConfig = SimulatorConfig()) -> Annotation:
    """Ground-truth annotation without rasterizing the gray image."""
    cap = _capture_state(subject, params, config, None)
    return _annotation_from(cap, config)


def _annotation_from(cap: _Capture, config: SimulatorConfig) -> Annotation:
    iris, pupil, ocular = _annotation_geometry(cap, config)
    occ, refl = _masks(cap, config)
    return Annotation(
        ocular_bbox=ocular.bbox(),
        iris_bbox=iris.bbox(),
        iris_ellipse=iris,
        pupil_ellipse=pupil,
        occlusion_mask=Mask.from_array(occ),
        reflection_mask=Mask.from_array(refl),
    )


def _texture_values(subject: SubjectModel, rho, theta):
    t = np.zeros_like(rho)
    for m, nrad, amp, ph in zip(subject.tex_ang, subject.tex_rad,
                                subject.tex_amp, subject.tex_phase):
        t += np.float32(amp) * np.cos(np.float32(m) * theta
                                      + np.float32(nrad * np.pi) * rho
                                      + np.float32(ph))
    t /= np.float32(np.sum(subject.tex_amp))
    return 0.5 + 0.5 * t


def render_ocular(subject: SubjectModel, params: CaptureParams,
                  config: SimulatorConfig = SimulatorConfig(),
                  defect: str | None = None):
    """Render one capture; returns (uint8 image, Annotation).

    ``defect`` forces an annotation-breaking failure mode (used by the
    degradation injector); the returned annotation then describes the
    underlying geometry, and callers are expected to drop it.
    """
    if defect is not None and defect not in DEFECTS:
        raise ValueError(f"unknown defect {defect!r}")
    cap = _capture_state(subject, params, config, defect)
    size = config.image_size
    img = np.full((size, size), np.float32(SKIN_GRAY))

    x0, x1, y0, y1 = _subrect(cap, config)
    if x1 > x0 and y1 > y0:
        qx, qy, r2 = _region_fields(cap, config, x0, x1, y0, y1)
        view = img[y0:y1, x0:x1]
        r_oc = config.ocular_radius_factor * cap.radius
        r_i = cap.radius
        r_p = cap.pupil_ratio * cap.radius
        ocular = r2 < np.float32(r_oc * r_oc)
        iris = r2 < np.float32(r_i * r_i)
        pupil = r2 < np.float32(r_p * r_p)
        view[ocular] = np.float32(SCLERA_GRAY)
        ann_mask = iris & ~pupil
        r = np.sqrt(r2[ann_mask])
        theta = np.arctan2(qy[ann_mask], qx[ann_mask])
        rho = (r - np.float32(r_p)) / np.float32(r_i - r_p)
        tex = _texture_values(subject, rho, theta)
        # pigmentation is a flat offset: the zero-sum iriscode filters
        # cannot see it, appearance-level templates can
        view[ann_mask] = (np.float32(IRIS_BASE_GRAY + subject.iris_shade)
                          + np.float32(IRIS_SPAN_GRAY) * tex)
        view[pupil] = np.float32(PUPIL_GRAY)

        xs = np.arange(x0, x1, dtype=np.float64)
        y_upper, y_lower = _lid_curves(cap, xs)
        yy = np.arange(y0, y1, dtype=np.float64)[:, None]
        covered = ((yy < y_upper[None, :]) | (yy > y_lower[None, :])) & ocular
        view[covered] = np.float32(LID_GRAY)

    xs_full = np.arange(size, dtype=np.float64)
    lr, lc = _lash_pixels(cap, xs_full, size)
    img[lr, lc] = np.float32(LASH_GRAY)

    img *= np.float32(cap.gain)
    br, bc = _blob_pixels(cap, size)
    img[br, bc] = np.float32(255.0)

    if cap.defect == "motion_blur":
        blur = substream(params.noise_seed, "blur")
        b_ang = float(blur.uniform(0.0, np.pi))
        acc = np.zeros_like(img)
        offs = np.arange(-8, 9, 2)
        for o in offs:
            sx = int(round(o * math.cos(b_ang)))
            sy = int(round(o * math.sin(b_ang)))
            acc += np.roll(np.roll(img, sy, axis=0), sx, axis=1)
        img = acc / np.float32(offs.size)

    sensor = substream(params.noise_seed, "sensor")
    img += np.float32(config.noise_sigma) * sensor.standard_normal(
        (size, size), dtype=np.float32)
    out = np.clip(np.rint(img), 0.0, 255.0).astype(np.uint8)
    return out, _annotation_from(cap, config)


# ---- sessions ----

def session_params(subject: SubjectModel, seed: int):
    """The fixed capture grid: 2 eyes x 9 gaze x 11 levels x 5 frames."""
    out = []
    for eye in ("L", "R"):
        for gaze in range(1, N_GAZE + 1):
            for level in range(N_LEVELS):
                for frame in range(N_FRAMES):
                    noise_seed = derive_seed(seed, "noise", subject.subject_id,
                                             eye, gaze, level, frame)
                    out.append(CaptureParams(eye=eye, gaze_point=gaze,
                                             brightness_level=level,
                                             frame_idx=frame,
                                             noise_seed=noise_seed))
    return out


def sample_id_for(subject_id: str, p: CaptureParams) -> str:
    return f"{subject_id}_{p.eye}_g{p.gaze_point}_b{p.brightness_level:02d}_f{p.frame_idx}"


def _defect_draw(seed: int, sample_id: str, profile: DegradationProfile):
    if profile is None or profile.total == 0.0:
        return None
    u = float(substream(seed, "defect", sample_id).random())
    edge = 0.0
    for name in DEFECTS:
        edge += getattr(profile, name)
        if u < edge:
            return name
    return None


def generate_session(subject: SubjectModel, seed: int, out_dir=None,
                     config: SimulatorConfig = SimulatorConfig(),
                     profile: DegradationProfile | None = None,
                     image_format: str = "png",
                     render_images: bool = True):
    """All 990 capture records for one subject.

    With ``out_dir`` set and ``render_images`` true, images land under
    out_dir/images/<subject>/ and image_ref holds the relative path.
    Defective captures render their failure mode and carry no
    annotation.  With render_images false only annotations are
    computed, which is much faster and enough for every stage that
    never reads pixels.
    """
    records = []
    if out_dir is not None:
        img_dir = Path(out_dir) / "images" / subject.subject_id
        if render_images:
            img_dir.mkdir(parents=True, exist_ok=True)
    for p in session_params(subject, seed):
        sid = sample_id_for(subject.subject_id, p)
        defect = _defect_draw(seed, sid, profile)
        image_ref = f"images/{subject.subject_id}/{sid}.{image_format}"
        if render_images and out_dir is not None:
            img, ann = render_ocular(subject, p, config, defect=defect)
            write_image(img, Path(out_dir) / image_ref)
        elif defect is None:
            ann = render_annotation(subject, p, config)
        else:
            ann = None
        records.append(SampleRecord(
            sample_id=sid, subject_id=subject.subject_id, eye=p.eye,
            gaze_point=p.gaze_point, brightness_level=p.brightness_level,
            frame_idx=p.frame_idx, image_ref=image_ref,
            annotation=None if defect is not None else ann))
    return records


def inject_degradations(records, profile: DegradationProfile, seed: int):
    """Flag a seeded subset of records as annotation-less failures.

    Pure manifest transformation: each record draws independently, so
    the affected count is binomial in profile.total.  Rendering-level
    defects are applied by generate_session when it draws the same
    decisions.
    """
    out = []
    for rec in records:
        if _defect_draw(seed, rec.sample_id, profile) is not None:
            out.append(dataclasses.replace(rec, annotation=None, quality=None,
                                           category=None))
        else:
            out.append(rec)
    return out
