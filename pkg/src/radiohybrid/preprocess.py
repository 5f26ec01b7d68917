"""Resizing, intensity normalisation and seeded augmentation.

The augmentation chain applies, innermost first: brightness/contrast, Gaussian
blur, vertical flip, horizontal flip, rotation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from ._backend import kernels
from .errors import EmptyImage, InvalidParam, InvalidSigma
from .imgio import Image

__all__ = [
    "AugmentConfig",
    "AugmentParams",
    "resize_bilinear",
    "normalize_minmax",
    "rotate",
    "flip",
    "gaussian_blur",
    "gaussian_kernel1d",
    "brightness_contrast",
    "draw_augment_params",
    "apply_augment_params",
    "augment",
    "preprocess_image",
]

ImageLike = Union[Image, np.ndarray]


def _unwrap(img: ImageLike) -> tuple[np.ndarray, str]:
    if isinstance(img, Image):
        return img.pixels, img.domain
    return np.asarray(img, dtype=np.float64), "unit"


def resize_bilinear(img: ImageLike, out_w: int = 224, out_h: int = 224) -> Image:
    """Bilinear resize with half-pixel centres and edge clamping.

    Output pixel ``(i, j)`` samples source ``((i + .5) * H/out_h - .5,
    (j + .5) * W/out_w - .5)``. Results are clipped to the input range so
    rounding can never step outside the convex hull of the source values.
    """
    src, domain = _unwrap(img)
    if src.size == 0:
        raise EmptyImage("cannot resize an empty image")
    if out_w < 1 or out_h < 1:
        raise InvalidParam(f"target size must be positive, got {out_w}x{out_h}")
    h, w = src.shape
    if (h, w) == (out_h, out_w):
        return Image(src.copy(), domain)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy, sx = np.meshgrid(ys, xs, indexing="ij")
    out = kernels.bilinear_sample(np.ascontiguousarray(src), sy, sx, False)
    np.clip(out, src.min(), src.max(), out=out)
    return Image(out, domain)


def normalize_minmax(img: ImageLike) -> Image:
    """Map the image range onto [0, 1]. A constant image maps to all zeros."""
    src, _ = _unwrap(img)
    lo, hi = src.min(), src.max()
    if hi == lo:
        return Image(np.zeros_like(src), "unit")
    out = (src - lo) / (hi - lo)
    # exact endpoints regardless of rounding in the division
    out[src == lo] = 0.0
    out[src == hi] = 1.0
    return Image(out, "unit")


def _snap(v: float) -> float:
    for target in (-1.0, 0.0, 1.0):
        if abs(v - target) < 1e-12:
            return target
    return v


def rotate(img: ImageLike, theta: float) -> Image:
    """Rotate counter-clockwise (as displayed) by ``theta`` degrees about the centre.

    Bilinear resampling; samples falling outside the source are 0.
    """
    src, domain = _unwrap(img)
    if not math.isfinite(theta):
        raise InvalidParam(f"rotation angle must be finite, got {theta}")
    if theta == 0.0:
        return Image(src.copy(), domain)
    h, w = src.shape
    rad = math.radians(theta)
    c, s = _snap(math.cos(rad)), _snap(math.sin(rad))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy, dx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    out = kernels.bilinear_sample(np.ascontiguousarray(src), sy, sx, True)
    return Image(out, domain)


def flip(img: ImageLike, axis: str) -> Image:
    """Mirror along ``"horizontal"`` (left-right) or ``"vertical"`` (top-bottom)."""
    src, domain = _unwrap(img)
    if axis == "horizontal":
        out = src[:, ::-1]
    elif axis == "vertical":
        out = src[::-1, :]
    else:
        raise InvalidParam(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")
    return Image(out.copy(), domain)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalised sampled Gaussian of radius ``ceil(3 sigma)``."""
    if not sigma > 0:
        raise InvalidSigma(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="symmetric")
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    for i, wgt in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + n)
        out += wgt * padded[tuple(sl)]
    return out


def gaussian_blur(img: ImageLike, sigma: float) -> Image:
    """Separable Gaussian blur with half-sample symmetric padding.

    This padding makes the blur preserve the image mean.
    """
    src, domain = _unwrap(img)
    k = gaussian_kernel1d(sigma)
    out = _convolve_axis(_convolve_axis(src, k, 1), k, 0)
    return Image(out, domain)


def brightness_contrast(img: ImageLike, gain: float, bias: float) -> Image:
    src, domain = _unwrap(img)
    return Image(np.clip(gain * src + bias, 0.0, 1.0), domain)


@dataclass
class AugmentConfig:
    """Ranges for the random augmentation chain.

    ``blur_sigma_range = (0, 0)`` (or ``None``) disables the blur stage.
    """

    rotation_max_deg: float = 15.0
    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    blur_sigma_range: tuple[float, float] | None = (0.5, 1.0)
    brightness_range: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma_range is not None:
            self.blur_sigma_range = tuple(float(v) for v in self.blur_sigma_range)
            lo, hi = self.blur_sigma_range
            if not (lo == hi == 0.0) and not (0.0 < lo <= hi):
                raise InvalidSigma(f"blur sigma range must lie in (0, inf), got {self.blur_sigma_range}")
        self.contrast_range = tuple(float(v) for v in self.contrast_range)
        for name in ("p_flip_h", "p_flip_v"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParam(f"{name} must be a probability")
        if self.rotation_max_deg < 0 or self.brightness_range < 0:
            raise InvalidParam("rotation and brightness ranges must be non-negative")

    @property
    def blur_enabled(self) -> bool:
        return self.blur_sigma_range is not None and self.blur_sigma_range[1] > 0.0

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, (0.0, 0.0), 0.0, (1.0, 1.0), seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blur_sigma_range"] = list(self.blur_sigma_range) if self.blur_sigma_range else None
        d["contrast_range"] = list(self.contrast_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**d)


@dataclass(frozen=True)
class AugmentParams:
    gain: float
    bias: float
    sigma: float | None
    flip_v: bool
    flip_h: bool
    theta: float


def draw_augment_params(cfg: AugmentConfig, sample_index: int) -> AugmentParams:
    """Draw one parameter set from a Philox stream keyed by ``(seed, sample_index)``."""
    key = (int(cfg.seed) & (2**64 - 1)) | ((int(sample_index) & (2**64 - 1)) << 64)
    u = np.random.Generator(np.random.Philox(key=key)).random(6)
    c_lo, c_hi = cfg.contrast_range
    gain = c_lo + u[0] * (c_hi - c_lo)
    bias = -cfg.brightness_range + u[1] * 2.0 * cfg.brightness_range
    sigma = None
    if cfg.blur_enabled:
        s_lo, s_hi = cfg.blur_sigma_range
        sigma = s_lo + u[2] * (s_hi - s_lo)
    flip_v = bool(u[3] < cfg.p_flip_v)
    flip_h = bool(u[4] < cfg.p_flip_h)
    theta = -cfg.rotation_max_deg + u[5] * 2.0 * cfg.rotation_max_deg
    return AugmentParams(float(gain), float(bias), sigma, flip_v, flip_h, float(theta))


def apply_augment_params(img: ImageLike, p: AugmentParams) -> Image:
    out = brightness_contrast(img, p.gain, p.bias)
    if p.sigma is not None:
        out = gaussian_blur(out, p.sigma)
    if p.flip_v:
        out = flip(out, "vertical")
    if p.flip_h:
        out = flip(out, "horizontal")
    return rotate(out, p.theta)


def augment(img: ImageLike, cfg: AugmentConfig, sample_index: int = 0) -> Image:
    return apply_augment_params(img, draw_augment_params(cfg, sample_index))


def preprocess_image(img: ImageLike, size: int = 224) -> Image:
    """Resize to ``size x size`` then min-max normalise."""
    return normalize_minmax(resize_bilinear(img, size, size))
