"""PSNR and SSIM evaluation measures.

Both clamp inputs to [0, peak] first: scores are computed on the
displayable image, matching how 8-bit outputs are ranked in the
denoising literature, even though training tensors are unclamped.
SSIM uses the universal defaults (11x11 Gaussian window sigma=1.5,
K1=0.01, K2=0.03); color images are scored per channel and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["psnr", "ssim", "MetricReport", "evaluate_pairs", "format_psnr_ssim"]


def _as_image64(data) -> np.ndarray:
    # same shape rules as imaging.as_image but without the float32 cast,
    # so closed-form metric values stay exact
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected HxW or HxWx{{1,3}} array, got shape {arr.shape}")
    return arr


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; math.inf for identical inputs."""
    a = np.clip(_as_image64(a), 0.0, peak)
    b = np.clip(_as_image64(b), 0.0, peak)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means over the first two axes."""
    size = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(x, (size, size))
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity (peak 1); 1.0 iff identical."""
    a = np.clip(_as_image64(a), 0.0, 1.0)
    b = np.clip(_as_image64(b), 0.0, 1.0)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < 11:
        raise ValueError("SSIM needs min dimension >= 11")
    window = _gaussian_window()
    c1 = 0.01**2
    c2 = 0.03**2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = _windowed_mean(x, window)
        my = _windowed_mean(y, window)
        mxx = _windowed_mean(x * x, window)
        myy = _windowed_mean(y * y, window)
        mxy = _windowed_mean(x * y, window)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2)
        )
        scores.append(float(np.mean(s)))
    return float(np.mean(scores))


@dataclass
class MetricReport:
    """Mean PSNR/SSIM with a per-image breakdown of (name, psnr, ssim)."""

    psnr_db: float
    ssim: float
    per_image: list[tuple[str, float, float]] = field(default_factory=list)


def evaluate_pairs(pairs: list[tuple[str, np.ndarray, np.ndarray]]) -> MetricReport:
    """Score (name, reference, test) triples and aggregate means."""
    rows = [(name, psnr(ref, test), ssim(ref, test)) for name, ref, test in pairs]
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    return MetricReport(mean_psnr, mean_ssim, rows)


def format_psnr_ssim(psnr_db: float, ssim_val: float) -> str:
    """Table cell in the conventional '%.2f/%.3f' layout."""
    p = "inf" if math.isinf(psnr_db) else f"{psnr_db:.2f}"
    return f"{p}/{ssim_val:.3f}"
