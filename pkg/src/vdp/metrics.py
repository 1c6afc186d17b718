"""PSNR, SSIM and region IoU (the J score)."""

from __future__ import annotations

import numpy as np
from scipy.signal import correlate

from vdp.video import Frame, VideoSequence

PSNR_CAP = 99.0


def _array(a) -> np.ndarray:
    if isinstance(a, (Frame, VideoSequence)):
        return a.pixels
    return np.asarray(a, dtype=np.float64)


def _frames(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) over all channels, averaged over frames; identical frames give 99 dB."""
    a, b = _frames(a, b)
    vals = []
    for fa, fb in zip(a, b):
        mse = float(np.mean((fa - fb) ** 2))
        vals.append(PSNR_CAP if mse == 0 else min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))
    return float(np.mean(vals))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_gray(x: np.ndarray, y: np.ndarray, win: np.ndarray, c1: float, c2: float) -> float:
    f = lambda img: correlate(img, win, mode="valid")
    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s.mean())


def ssim(a, b, window: int = 11, C1: float = 0.01 ** 2, C2: float = 0.03 ** 2, sigma: float = 1.5) -> float:
    """Mean local SSIM on the channel-mean grayscale image over valid window positions."""
    a, b = _frames(a, b)
    if a.shape[1] < window or a.shape[2] < window:
        raise ValueError(f"frame {a.shape[1]}x{a.shape[2]} is smaller than the {window}x{window} window")
    win = gaussian_window(window, sigma)
    ga = a.mean(axis=-1) if a.ndim == 4 else a
    gb = b.mean(axis=-1) if b.ndim == 4 else b
    return float(np.mean([_ssim_gray(x, y, win, C1, C2) for x, y in zip(ga, gb)]))


def _binary(m) -> np.ndarray:
    m = np.asarray(m)
    if m.dtype != bool:
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("iou expects binary masks")
        m = m.astype(bool)
    return m


def iou(pred, gt) -> float:
    """Mean over frames of |pred & gt| / |pred | gt|; a frame where both are empty scores 1."""
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.ndim == 2:
        p, g = p[None], g[None]
    vals = []
    for fp, fg in zip(p, g):
        union = np.logical_or(fp, fg).sum()
        vals.append(1.0 if union == 0 else np.logical_and(fp, fg).sum() / union)
    return float(np.mean(vals))
