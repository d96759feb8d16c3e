"""Two-view stochastic augmentation pipeline.

Images are H x W x 3 float arrays in [0, 1]. The pipeline applies, in order:
random resized crop, horizontal flip, color jitter, random grayscale,
Gaussian blur, solarization. Each op draws from its own RNG stream derived
from (stream key, view index, op name), so disabling or re-parameterizing one
op never perturbs the draws of another, and a sample's views depend only on
its stream key, never on batch composition or worker layout.

Default parameters follow the BYOL recipe: the two views share crop / flip /
jitter / grayscale settings but differ in blur and solarize probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DataError
from .seeding import rng_for

LUMA = np.array([0.299, 0.587, 0.114])


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DataError(f"image must be HxWx3, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError("image values must lie in [0, 1]")
    return img


@dataclass
class AugmentationConfig:
    output_size: int = 32
    # random resized crop
    crop: bool = True
    crop_scale: tuple[float, float] = (0.08, 1.0)
    crop_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)
    # horizontal flip
    flip: bool = True
    flip_prob: float = 0.5
    # color jitter (brightness, contrast, saturation, hue), random-applied
    color_jitter: bool = True
    jitter_prob: float = 0.8
    jitter_brightness: float = 0.4
    jitter_contrast: float = 0.4
    jitter_saturation: float = 0.2
    jitter_hue: float = 0.1
    # random grayscale
    grayscale: bool = True
    grayscale_prob: float = 0.2
    # Gaussian blur, per view
    blur: bool = True
    blur_prob: tuple[float, float] = (1.0, 0.1)
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    # solarization, per view
    solarize: bool = True
    solarize_prob: tuple[float, float] = (0.0, 0.2)
    solarize_threshold: float = 0.5
    # how per-sample streams are derived; recorded for provenance
    seed_policy: str = "sha256(run_seed/phase/epoch/sample_id/view/op)"

    def validate(self) -> None:
        probs = [self.flip_prob, self.jitter_prob, self.grayscale_prob,
                 *self.blur_prob, *self.solarize_prob]
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise DataError("augmentation probabilities must lie in [0, 1]")
        if self.output_size < 1:
            raise DataError("output_size must be >= 1")
        if not (0.0 <= self.solarize_threshold <= 1.0):
            raise DataError("solarize threshold must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ViewPair:
    view_i: np.ndarray
    view_j: np.ndarray


# -- deterministic primitive ops ------------------------------------------------

def grayscale(img: np.ndarray) -> np.ndarray:
    """Replicate the luminance (0.299 R + 0.587 G + 0.114 B) on all channels."""
    img = check_image(img)
    lum = img @ LUMA
    return np.clip(np.repeat(lum[:, :, None], 3, axis=2), 0.0, 1.0)


def solarize(img: np.ndarray, threshold: float) -> np.ndarray:
    """Invert every pixel value at or above the threshold."""
    img = check_image(img)
    if not (0.0 <= threshold <= 1.0):
        raise DataError(f"solarize threshold must lie in [0, 1], got {threshold}")
    return np.where(img >= threshold, 1.0 - img, img)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1, :].copy()


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers."""
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return np.clip(top * (1 - wy) + bot * wy, 0.0, 1.0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur; kernel side ~10% of the image side, odd, >= 3."""
    side = min(img.shape[0], img.shape[1])
    ksize = max(3, int(side * 0.1) // 2 * 2 + 1)
    half = ksize // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    out = convolve1d(img, kernel, axis=0, mode="reflect")
    out = convolve1d(out, kernel, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * factor, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = (img @ LUMA).mean()
    return np.clip(img * factor + mean * (1.0 - factor), 0.0, 1.0)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    lum = (img @ LUMA)[:, :, None]
    return np.clip(img * factor + lum * (1.0 - factor), 0.0, 1.0)


def _rgb_to_hsv(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=2)
    minc = img.min(axis=2)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(span, 1e-12)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ]
    cond = i[..., None] if np.ndim(i) else i
    out = np.select([cond == j for j in range(6)], choices)
    return np.clip(out, 0.0, 1.0)


def adjust_hue(img: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by `shift` of a full turn (shift in [-0.5, 0.5])."""
    h, s, v = _rgb_to_hsv(img)
    return _hsv_to_rgb((h + shift) % 1.0, s, v)


# -- stochastic pipeline --------------------------------------------------------

def random_resized_crop(
    img: np.ndarray,
    rng: np.random.Generator,
    output_size: int,
    scale: tuple[float, float],
    ratio: tuple[float, float],
) -> np.ndarray:
    """Area/aspect sampled crop, resized to output_size (torchvision semantics)."""
    h, w = img.shape[:2]
    area = h * w
    log_ratio = (np.log(ratio[0]), np.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(scale[0], scale[1])
        aspect = np.exp(rng.uniform(*log_ratio))
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = img[top : top + ch, left : left + cw]
            return resize_bilinear(crop, output_size, output_size)
    # fallback: center crop at the clamped aspect ratio
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw, ch = w, min(h, int(round(w / ratio[0])))
    elif in_ratio > ratio[1]:
        cw, ch = min(w, int(round(h * ratio[1]))), h
    else:
        cw, ch = w, h
    top = (h - ch) // 2
    left = (w - cw) // 2
    return resize_bilinear(img[top : top + ch, left : left + cw],
                           output_size, output_size)


def augment_view(
    img: np.ndarray, cfg: AugmentationConfig, stream_key, view: int
) -> np.ndarray:
    """One stochastic view; `view` is 0 or 1 and selects per-view parameters."""
    cfg.validate()
    out = check_image(img)

    if cfg.crop:
        rng = rng_for(stream_key, view, "crop")
        out = random_resized_crop(out, rng, cfg.output_size,
                                  cfg.crop_scale, cfg.crop_ratio)
    elif out.shape[0] != cfg.output_size or out.shape[1] != cfg.output_size:
        out = resize_bilinear(out, cfg.output_size, cfg.output_size)

    if cfg.flip:
        rng = rng_for(stream_key, view, "flip")
        if rng.uniform() < cfg.flip_prob:
            out = hflip(out)

    if cfg.color_jitter:
        rng = rng_for(stream_key, view, "jitter")
        apply = rng.uniform() < cfg.jitter_prob
        # draw all factors regardless, so the stream shape is stable
        fb = rng.uniform(max(0.0, 1 - cfg.jitter_brightness), 1 + cfg.jitter_brightness)
        fc = rng.uniform(max(0.0, 1 - cfg.jitter_contrast), 1 + cfg.jitter_contrast)
        fs = rng.uniform(max(0.0, 1 - cfg.jitter_saturation), 1 + cfg.jitter_saturation)
        fh = rng.uniform(-cfg.jitter_hue, cfg.jitter_hue)
        if apply:
            out = adjust_brightness(out, fb)
            out = adjust_contrast(out, fc)
            out = adjust_saturation(out, fs)
            if cfg.jitter_hue > 0:
                out = adjust_hue(out, fh)

    if cfg.grayscale:
        rng = rng_for(stream_key, view, "grayscale")
        if rng.uniform() < cfg.grayscale_prob:
            out = grayscale(out)

    if cfg.blur:
        rng = rng_for(stream_key, view, "blur")
        apply = rng.uniform() < cfg.blur_prob[view]
        sigma = rng.uniform(*cfg.blur_sigma)
        if apply:
            out = gaussian_blur(out, sigma)

    if cfg.solarize:
        rng = rng_for(stream_key, view, "solarize")
        if rng.uniform() < cfg.solarize_prob[view]:
            out = solarize(out, cfg.solarize_threshold)

    return out


def augment_pair(img: np.ndarray, cfg: AugmentationConfig, stream_key) -> ViewPair:
    """The two training views of one image; pure function of (img, cfg, key)."""
    return ViewPair(
        view_i=augment_view(img, cfg, stream_key, 0),
        view_j=augment_view(img, cfg, stream_key, 1),
    )
