"""Handcrafted texture descriptors: HOG, LBP, Gabor bank statistics, Haar DWT statistics.

All extractors take a unit-domain :class:`~radiohybrid.imgio.Image` (or a bare
2-D array) and return a 1-D float64 vector whose length depends only on the
configuration and image size.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft

from ._backend import kernels
from .errors import EmptyComponent, ImageTooSmall, InvalidLevels, InvalidParam

__all__ = [
    "HogConfig",
    "LbpConfig",
    "GaborBank",
    "RadiomicsConfig",
    "RadiomicTensor",
    "SEGMENT_ORDER",
    "hog_features",
    "lbp_features",
    "lbp_offsets",
    "gabor_kernel",
    "gabor_features",
    "haar_dwt2",
    "haar_idwt2",
    "haar_wavedec2",
    "haar_waverec2",
    "dwt_features",
    "concat_radiomic",
    "extract_radiomics",
]

SEGMENT_ORDER = ("HOG", "LBP", "Gabor", "Wavelet")


def _pixels(img) -> np.ndarray:
    arr = getattr(img, "pixels", img)
    return np.ascontiguousarray(arr, dtype=np.float64)


def _shifted_std(a: np.ndarray) -> float:
    # shifting by one sample keeps exactly-constant inputs at exactly 0
    return float(np.std(a - a.flat[0]))


# ---------------------------------------------------------------------
# HOG
# ---------------------------------------------------------------------
@dataclass
class HogConfig:
    cell_size: int = 8
    block_size: int = 2
    block_stride: int = 1
    bins: int = 9
    l2_eps: float = 1e-6

    def __post_init__(self):
        if self.cell_size < 2 or self.bins < 2 or self.block_size < 1 or self.block_stride < 1:
            raise InvalidParam(f"invalid HOG configuration {self}")

    def n_features(self, height: int, width: int) -> int:
        cy, cx = height // self.cell_size, width // self.cell_size
        by = (cy - self.block_size) // self.block_stride + 1
        bx = (cx - self.block_size) // self.block_stride + 1
        return by * bx * self.block_size**2 * self.bins


def gradients(px: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences ``I(x+1) - I(x-1)`` with replicated borders."""
    p = np.pad(px, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def hog_features(img, cfg: HogConfig | None = None) -> np.ndarray:
    """Dalal-Triggs style HOG.

    Unsigned orientations in [0, 180) are split linearly between the two
    nearest bin centres (centres at ``k * 180 / bins``, wrapping), summed per
    cell, and each block of cells is L2-normalised as ``v / sqrt(|v|^2 + eps^2)``.
    """
    cfg = cfg or HogConfig()
    px = _pixels(img)
    cs, bs = cfg.cell_size, cfg.block_size
    cy, cx = px.shape[0] // cs, px.shape[1] // cs
    if cy < bs or cx < bs:
        raise ImageTooSmall(f"{px.shape} image holds {cy}x{cx} cells, block needs {bs}x{bs}")

    gx, gy = gradients(px)
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    ang[ang >= 180.0] -= 180.0
    pos = ang * (cfg.bins / 180.0)
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % cfg.bins

    cells = kernels.hog_cell_histograms(
        np.ascontiguousarray(mag), np.ascontiguousarray(lo), np.ascontiguousarray(frac), cs, cfg.bins
    )
    win = np.lib.stride_tricks.sliding_window_view(cells, (bs, bs), axis=(0, 1))
    win = win[:: cfg.block_stride, :: cfg.block_stride]
    # (by, bx, bins, bs, bs) -> (by, bx, bs, bs, bins)
    blocks = np.moveaxis(win, 2, -1).reshape(win.shape[0], win.shape[1], -1)
    norm = np.sqrt(np.sum(blocks * blocks, axis=-1, keepdims=True) + cfg.l2_eps**2)
    return (blocks / norm).ravel()


# ---------------------------------------------------------------------
# LBP
# ---------------------------------------------------------------------
@dataclass
class LbpConfig:
    neighbors: int = 8
    radius: float = 1.0

    def __post_init__(self):
        if self.neighbors < 1 or self.neighbors > 30 or self.radius <= 0:
            raise InvalidParam(f"invalid LBP configuration {self}")

    @property
    def histogram_bins(self) -> int:
        return 2**self.neighbors


def lbp_offsets(cfg: LbpConfig) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour offsets ``(dy, dx)`` on the radius-R circle, p = 0 pointing right."""
    a = 2.0 * np.pi * np.arange(cfg.neighbors) / cfg.neighbors
    dy = -cfg.radius * np.sin(a)
    dx = cfg.radius * np.cos(a)
    # grid-aligned neighbours must have exactly integral offsets
    dy = np.where(np.abs(dy - np.rint(dy)) < 1e-12, np.rint(dy), dy)
    dx = np.where(np.abs(dx - np.rint(dx)) < 1e-12, np.rint(dx), dx)
    return dy + 0.0, dx + 0.0


def lbp_code_map(img, cfg: LbpConfig | None = None) -> np.ndarray:
    cfg = cfg or LbpConfig()
    px = _pixels(img)
    r = math.ceil(cfg.radius)
    if px.shape[0] <= 2 * r or px.shape[1] <= 2 * r:
        raise ImageTooSmall(f"LBP radius {cfg.radius} needs an image larger than {2 * r}px")
    dy, dx = lbp_offsets(cfg)
    return kernels.lbp_codes(px, dy, dx, r)


def lbp_features(img, cfg: LbpConfig | None = None) -> np.ndarray:
    """L1-normalised histogram of LBP codes over interior pixels.

    A neighbour counts as 1 when ``g_p - g_c >= 0``; off-grid neighbours are
    bilinearly interpolated.
    """
    cfg = cfg or LbpConfig()
    codes = lbp_code_map(img, cfg)
    hist = np.bincount(codes.ravel(), minlength=cfg.histogram_bins).astype(np.float64)
    return hist / codes.size


# ---------------------------------------------------------------------
# Gabor
# ---------------------------------------------------------------------
def _snap_trig(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < 1e-12 else v


def gabor_kernel(
    theta: float, lam: float, psi: float = 0.0, sigma: float | None = None, gamma: float = 0.5
) -> np.ndarray:
    """Real Gabor kernel sampled on the integer grid ``[-r, r]^2``, r = ceil(3 sigma).

    ``theta`` is in degrees; ``sigma`` defaults to ``0.56 * lam``. The result
    is indexed ``kernel[y + r, x + r]``.
    """
    if sigma is None:
        sigma = 0.56 * lam
    if not (lam > 0 and sigma > 0 and gamma > 0):
        raise InvalidParam(f"Gabor parameters must be positive (lambda={lam}, sigma={sigma}, gamma={gamma})")
    r = math.ceil(3.0 * sigma)
    t = math.radians(theta)
    c, s = _snap_trig(math.cos(t)), _snap_trig(math.sin(t))
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    xr = x * c + y * s
    yr = -x * s + y * c
    envelope = np.exp(-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma))
    return envelope * np.cos(2.0 * np.pi * xr / lam + psi)


@dataclass
class GaborBank:
    orientations: tuple[float, ...] = (0.0, 45.0, 90.0, 135.0)
    wavelengths: tuple[float, ...] = (4.0, 8.0)
    psi: float = 0.0
    sigma_ratio: float = 0.56
    gamma: float = 0.5
    _spectra: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.orientations = tuple(float(v) for v in self.orientations)
        self.wavelengths = tuple(float(v) for v in self.wavelengths)
        if not self.orientations or not self.wavelengths:
            raise InvalidParam("Gabor bank needs at least one orientation and one wavelength")

    @property
    def n_features(self) -> int:
        return len(self.orientations) * len(self.wavelengths) * 2

    def kernels(self) -> list[np.ndarray]:
        """Kernels in output order: orientation-major, wavelength-minor."""
        return [
            gabor_kernel(th, lam, self.psi, self.sigma_ratio * lam, self.gamma)
            for th in self.orientations
            for lam in self.wavelengths
        ]

    @property
    def max_radius(self) -> int:
        return max(math.ceil(3.0 * self.sigma_ratio * lam) for lam in self.wavelengths)

    def spectra(self, shape: tuple[int, int]) -> list[tuple[np.ndarray, float]]:
        """Cached ``(rfft2 of the origin-centred kernel, kernel sum)`` for a padded shape."""
        if shape not in self._spectra:
            out = []
            for k in self.kernels():
                r = k.shape[0] // 2
                canvas = np.zeros(shape)
                canvas[: k.shape[0], : k.shape[1]] = k
                canvas = np.roll(canvas, (-r, -r), axis=(0, 1))
                out.append((scipy.fft.rfft2(canvas), float(k.sum())))
            self._spectra[shape] = out
        return self._spectra[shape]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_spectra", None)
        d["orientations"] = list(self.orientations)
        d["wavelengths"] = list(self.wavelengths)
        return d


def gabor_responses(img, bank: GaborBank | None = None) -> list[np.ndarray]:
    """Filter responses (symmetric padding) for every kernel in ``bank``.

    Computed in the Fourier domain on the image minus its first pixel; the
    offset is added back through the kernel sum, so a constant image yields
    an exactly constant response.
    """
    bank = bank or GaborBank()
    px = _pixels(img)
    h, w = px.shape
    R = bank.max_radius
    base = px.flat[0]
    padded = np.pad(px - base, R, mode="symmetric")
    spec = scipy.fft.rfft2(padded)
    out = []
    for kspec, ksum in bank.spectra(padded.shape):
        resp = scipy.fft.irfft2(spec * kspec, s=padded.shape)[R : R + h, R : R + w]
        out.append(resp + base * ksum)
    return out


def gabor_features(img, bank: GaborBank | None = None) -> np.ndarray:
    """``[mean |r|, std |r|]`` for every response ``r`` of the bank."""
    feats = []
    for resp in gabor_responses(img, bank):
        a = np.abs(resp)
        feats.extend((float(a.mean()), _shifted_std(a)))
    return np.array(feats)


# ---------------------------------------------------------------------
# Haar DWT
# ---------------------------------------------------------------------
def _pad_even(x: np.ndarray) -> np.ndarray:
    ph, pw = x.shape[0] % 2, x.shape[1] % 2
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw)), mode="edge")
    return x


def haar_dwt2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One orthonormal 2-D Haar level; returns ``(LL, LH, HL, HH)``.

    On a 2x2 block ``[[a, b], [c, d]]``: LL = (a+b+c+d)/2, LH = (a+b-c-d)/2
    (top row minus bottom row), HL = (a-b+c-d)/2, HH = (a-b-c+d)/2.
    Odd dimensions are edge-replicated to even first.
    """
    x = _pad_even(np.asarray(x, dtype=np.float64))
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    return (
        (a + b + c + d) / 2.0,
        (a + b - c - d) / 2.0,
        (a - b + c - d) / 2.0,
        (a - b - c + d) / 2.0,
    )


def haar_idwt2(ll, lh, hl, hh) -> np.ndarray:
    out = np.empty((ll.shape[0] * 2, ll.shape[1] * 2))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def haar_wavedec2(x, levels: int = 2) -> list:
    """Multi-level decomposition ``[LL_L, (LH_1, HL_1, HH_1), ..., (LH_L, HL_L, HH_L)]``.

    Level 1 is the finest.
    """
    if levels < 1:
        raise InvalidLevels(f"levels must be >= 1, got {levels}")
    cur = _pixels(x)
    details = []
    for _ in range(levels):
        if min(cur.shape) < 1:
            raise InvalidLevels(f"image too small for {levels} levels")
        ll, lh, hl, hh = haar_dwt2(cur)
        details.append((lh, hl, hh))
        cur = ll
    return [cur, *details]


def haar_waverec2(coeffs: list, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Invert :func:`haar_wavedec2`; ``shape`` crops away any even-padding."""
    cur = coeffs[0]
    for lh, hl, hh in reversed(coeffs[1:]):
        cur = cur[: lh.shape[0], : lh.shape[1]]
        cur = haar_idwt2(cur, lh, hl, hh)
    if shape is not None:
        cur = cur[: shape[0], : shape[1]]
    return cur


def dwt_features(img, levels: int = 2) -> np.ndarray:
    """``[mean, std, energy]`` for LL_final then LH/HL/HH of each level, finest first."""
    coeffs = haar_wavedec2(img, levels)
    bands = [coeffs[0]] + [b for trio in coeffs[1:] for b in trio]
    feats = []
    for band in bands:
        feats.extend((float(band.mean()), _shifted_std(band), float(np.mean(band * band))))
    return np.array(feats)


# ---------------------------------------------------------------------
# Radiomic tensor
# ---------------------------------------------------------------------
@dataclass
class RadiomicTensor:
    vector: np.ndarray
    segments: dict[str, tuple[int, int]]

    def segment(self, name: str) -> np.ndarray:
        off, n = self.segments[name]
        return self.vector[off : off + n]


def concat_radiomic(hog, lbp, gabor, wavelet) -> RadiomicTensor:
    parts = [np.asarray(v, dtype=np.float64).ravel() for v in (hog, lbp, gabor, wavelet)]
    segments = {}
    off = 0
    for name, part in zip(SEGMENT_ORDER, parts):
        if part.size == 0:
            raise EmptyComponent(f"{name} feature vector is empty")
        segments[name] = (off, part.size)
        off += part.size
    return RadiomicTensor(np.concatenate(parts), segments)


@dataclass
class RadiomicsConfig:
    hog: HogConfig = field(default_factory=HogConfig)
    lbp: LbpConfig = field(default_factory=LbpConfig)
    gabor: GaborBank = field(default_factory=GaborBank)
    wavelet_levels: int = 2

    def to_dict(self) -> dict:
        return {
            "hog": asdict(self.hog),
            "lbp": asdict(self.lbp),
            "gabor": self.gabor.to_dict(),
            "wavelet_levels": self.wavelet_levels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadiomicsConfig":
        return cls(
            HogConfig(**d.get("hog", {})),
            LbpConfig(**d.get("lbp", {})),
            GaborBank(**d.get("gabor", {})),
            int(d.get("wavelet_levels", 2)),
        )


def extract_radiomics(img, cfg: RadiomicsConfig | None = None) -> RadiomicTensor:
    cfg = cfg or RadiomicsConfig()
    return concat_radiomic(
        hog_features(img, cfg.hog),
        lbp_features(img, cfg.lbp),
        gabor_features(img, cfg.gabor),
        dwt_features(img, cfg.wavelet_levels),
    )
