"""Template encoders.

Binary codes are computed on a coarse grid over the normalized polar
texture: the rows collapse into radial bands, and oriented 1-D filters
slide circularly along the angular axis.  Filters see the angular
signal modulo the full circle, so rotating the input by one grid
column rotates the code by exactly one grid column.

* Gabor codes quantize the phase of a complex carrier under a Gaussian
  envelope: one bit each for Re >= 0 and Im >= 0, per wavelength.
* Ordinal codes binarize the sign of zero-sum multi-lobe differential
  filters (di-lobe and tri-lobe), which makes them exactly invariant
  to additive brightness offsets and positive gain.

The reference embedding is a deliberately small pixel-statistics
baseline for the crop-based pipeline: block-averaged, mean-removed,
unit-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Embedding, IrisCode, load_templates
from .errors import MixedKinds, ShapeMismatch
from .preprocess import NormalizedIris

# responses this close to zero count as zero for the sign rule, so
# zero-sum filters on degenerate inputs binarize reproducibly
RESPONSE_EPS = 1e-9


@dataclass(frozen=True)
class GaborConfig:
    wavelengths: tuple = (18, 36)
    n_bands: int = 8
    n_cols: int = 128
    min_support: float = 0.7

    @property
    def layout(self):
        return (self.n_bands, self.n_cols, 2 * len(self.wavelengths))


@dataclass(frozen=True)
class OrdinalConfig:
    lobe_spacing: int = 12
    lobe_sigma: float = 4.0
    n_bands: int = 8
    n_cols: int = 128
    min_support: float = 0.7

    @property
    def layout(self):
        return (self.n_bands, self.n_cols, 2)


def _band_signals(norm: NormalizedIris, n_bands: int):
    """Collapse rows into band-mean signals and strict band validity."""
    rows, cols = norm.texture.shape
    if rows % n_bands != 0:
        raise ShapeMismatch(f"{rows} rows not divisible into {n_bands} bands")
    per = rows // n_bands
    tex = norm.texture.astype(np.float64).reshape(n_bands, per, cols)
    val = norm.validity.reshape(n_bands, per, cols)
    return tex.mean(axis=1), val.all(axis=1)


def _circular_responses(signal, col_valid, centers, weights):
    """Dot each filter against the signal around each center column.

    Returns (responses, valid_fraction) where valid_fraction is the
    share of support columns whose band validity holds.
    """
    cols = signal.shape[-1]
    ext = (weights.shape[0] - 1) // 2
    offsets = np.arange(-ext, ext + 1)
    idx = (centers[:, None] + offsets[None, :]) % cols
    resp = signal[idx] @ weights
    frac = col_valid[idx].mean(axis=1)
    return resp, frac


def gabor_encode(norm: NormalizedIris, config: GaborConfig = GaborConfig()) -> IrisCode:
    """Quadrature phase code over the band/column grid.

    Per grid position and wavelength w: carrier exp(2j*pi*x/w) under a
    Gaussian envelope of sigma w/2 truncated at two sigma, slid
    circularly along the band signal.  Bits are Re >= 0 and Im >= 0;
    the matching mask keeps a bit only when at least ``min_support`` of
    the filter support lies on valid columns.
    """
    rows, cols = norm.texture.shape
    n_bands, n_cols, bpp = config.layout
    if cols % n_cols != 0:
        raise ShapeMismatch(f"{cols} columns not divisible by {n_cols} grid columns")
    stride = cols // n_cols
    centers = np.arange(n_cols) * stride
    band_sig, band_val = _band_signals(norm, n_bands)

    bits = np.empty((n_bands, n_cols, bpp), dtype=bool)
    mask = np.empty((n_bands, n_cols, bpp), dtype=bool)
    for wi, wavelength in enumerate(config.wavelengths):
        sigma = wavelength / 2.0
        ext = int(np.ceil(2.0 * sigma))
        x = np.arange(-ext, ext + 1, dtype=np.float64)
        envelope = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
        w_re = envelope * np.cos(2.0 * np.pi * x / wavelength)
        # truncation leaves a DC residue in the even part; remove it so
        # a constant brightness shift cannot move the real response
        w_re -= envelope * (w_re.sum() / envelope.sum())
        w_im = envelope * np.sin(2.0 * np.pi * x / wavelength)
        for b in range(n_bands):
            re, frac = _circular_responses(band_sig[b], band_val[b], centers, w_re)
            im, _ = _circular_responses(band_sig[b], band_val[b], centers, w_im)
            ok = frac >= config.min_support
            bits[b, :, 2 * wi] = re >= 0.0
            bits[b, :, 2 * wi + 1] = im >= 0.0
            mask[b, :, 2 * wi] = ok
            mask[b, :, 2 * wi + 1] = ok
    return IrisCode.from_bools("gabor", bits, mask, config.layout)


def _gaussian_lobe(x, mu, sigma):
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma ** 2))


def ordinal_encode(norm: NormalizedIris, config: OrdinalConfig = OrdinalConfig()) -> IrisCode:
    """Sign code of di-lobe and tri-lobe differential filters.

    Both filters have coefficients summing to zero, so any constant
    intensity shift cancels in the response and the code depends only
    on local ordinal contrast.
    """
    rows, cols = norm.texture.shape
    n_bands, n_cols, _ = config.layout
    if cols % n_cols != 0:
        raise ShapeMismatch(f"{cols} columns not divisible by {n_cols} grid columns")
    stride = cols // n_cols
    centers = np.arange(n_cols) * stride
    band_sig, band_val = _band_signals(norm, n_bands)

    half = config.lobe_spacing / 2.0
    reach = int(np.ceil(2.0 * config.lobe_sigma))
    ext_di = int(np.ceil(half)) + reach
    x = np.arange(-ext_di, ext_di + 1, dtype=np.float64)
    w_di = (_gaussian_lobe(x, -half, config.lobe_sigma)
            - _gaussian_lobe(x, half, config.lobe_sigma))
    ext_tri = config.lobe_spacing + reach
    x = np.arange(-ext_tri, ext_tri + 1, dtype=np.float64)
    # the outer lobes lose tail mass at the truncation boundary, so the
    # nominal -2 center weight is rebalanced to keep the sum at zero
    outer = (_gaussian_lobe(x, -config.lobe_spacing, config.lobe_sigma)
             + _gaussian_lobe(x, config.lobe_spacing, config.lobe_sigma))
    center = _gaussian_lobe(x, 0.0, config.lobe_sigma)
    w_tri = outer - (outer.sum() / center.sum()) * center

    bits = np.empty((n_bands, n_cols, 2), dtype=bool)
    mask = np.empty((n_bands, n_cols, 2), dtype=bool)
    for b in range(n_bands):
        for fi, w in enumerate((w_di, w_tri)):
            resp, frac = _circular_responses(band_sig[b], band_val[b], centers, w)
            bits[b, :, fi] = resp > RESPONSE_EPS
            mask[b, :, fi] = frac >= config.min_support
    return IrisCode.from_bools("ordinal", bits, mask, config.layout)


# ---- embeddings ----

EMBED_GRID = 16


def reference_embed(crop: np.ndarray, grid: int = EMBED_GRID) -> Embedding:
    """Block-average embedding of a square crop.

    The crop is pooled to grid x grid cells, mean-removed, and scaled
    to unit norm.  A constant crop has no direction to normalize, so it
    maps to the first standard basis vector.
    """
    crop = np.asarray(crop, dtype=np.float64)
    if crop.ndim != 2 or crop.shape[0] != crop.shape[1]:
        raise ShapeMismatch(f"expected a square crop, got {crop.shape}")
    if crop.shape[0] % grid != 0:
        raise ShapeMismatch(f"crop side {crop.shape[0]} not divisible by {grid}")
    block = crop.shape[0] // grid
    pooled = crop.reshape(grid, block, grid, block).mean(axis=(1, 3)).ravel()
    pooled -= pooled.mean()
    n = np.linalg.norm(pooled)
    if n < 1e-12:
        vec = np.zeros(grid * grid)
        vec[0] = 1.0
        return Embedding(vec)
    return Embedding(pooled / n)


def import_embeddings(path) -> dict:
    """Load an embedding template store.

    Vectors whose stored norm drifted beyond the unit-norm tolerance
    are renormalized on load.  Raises MixedKinds if the store holds
    binary codes instead.
    """
    templates = load_templates(path)
    for sid, t in templates.items():
        if not isinstance(t, Embedding):
            raise MixedKinds(f"store {path} holds {t.kind} codes, not embeddings")
    return templates
