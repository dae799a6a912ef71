"""Image- and projection-domain quality metrics and CSV reporting.

Images are compared as magnitudes after each is divided by its own 90th
percentile (linear interpolation between closest ranks).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import correlate2d

PERCENTILE = 90.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricsRecord:
    method: str
    subject: int
    slice: int
    nmse: float
    psnr: float
    ssim: float
    proj_nmse: float | None = None


def normalize_pair(x, ref):
    x, ref = np.abs(np.asarray(x)), np.abs(np.asarray(ref))
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    px = np.percentile(x, PERCENTILE)
    pr = np.percentile(ref, PERCENTILE)
    if px == 0 or pr == 0:
        raise ValueError("90th percentile is zero; cannot normalize")
    return x / px, ref / pr


def nmse(x, ref) -> float:
    x, ref = np.asarray(x), np.asarray(ref)
    den = np.sum(np.abs(ref) ** 2)
    if den == 0:
        raise ValueError("reference has zero norm")
    return float(np.sum(np.abs(x - ref) ** 2) / den)


def psnr(x, ref) -> float:
    """PSNR in dB with the reference maximum as peak; ``inf`` for identical images."""
    mse = np.mean((np.asarray(x) - np.asarray(ref)) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(np.max(ref) ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    c = np.arange(size) - (size - 1) / 2
    g = np.exp(-(c**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_terms(x, ref) -> tuple[np.ndarray, np.ndarray]:
    """Luminance and contrast-structure factors over every fully contained 11x11 Gaussian window."""
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    L = ref.max() - ref.min()
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    w = gaussian_window()

    def filt(a):
        return correlate2d(a, w, mode="valid")

    mx, mr = filt(x), filt(ref)
    vx = filt(x * x) - mx**2
    vr = filt(ref * ref) - mr**2
    cov = filt(x * ref) - mx * mr
    return (2 * mx * mr + c1) / (mx**2 + mr**2 + c1), (2 * cov + c2) / (vx + vr + c2)


def ssim_map(x, ref) -> np.ndarray:
    lum, cs = ssim_terms(x, ref)
    return lum * cs


def ssim(x, ref) -> float:
    return float(np.mean(ssim_map(x, ref)))


def proj_nmse(pred, truth) -> float:
    """NMSE between token matrices (same formula as the image NMSE)."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return nmse(pred, truth)


def evaluate_image(x, ref, method: str, subject: int = 0, slice_: int = 0, proj=None) -> MetricsRecord:
    xn, rn = normalize_pair(x, ref)
    return MetricsRecord(method, subject, slice_, nmse(xn, rn), psnr(xn, rn), ssim(xn, rn), proj)


FIELDS = ["method", "subject", "slice", "nmse", "psnr_db", "ssim", "proj_nmse"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def summarize(records: list[MetricsRecord]) -> dict:
    """Per-method mean and population std of every metric."""
    out = {}
    for method in sorted({r.method for r in records}):
        rows = [r for r in records if r.method == method]
        stats = {}
        for key in ("nmse", "psnr", "ssim", "proj_nmse"):
            vals = np.array([getattr(r, key) for r in rows if getattr(r, key) is not None], dtype=float)
            if vals.size:
                stats[key] = (float(vals.mean()), float(vals.std()))
        out[method] = stats
    return out


def format_report(records: list[MetricsRecord]) -> str:
    """CSV text: one row per record in input order, then one ``summary`` row per method.

    Summary cells hold ``mean±std`` (population std).
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in records:
        w.writerow([r.method, r.subject, r.slice, _fmt(r.nmse), _fmt(r.psnr), _fmt(r.ssim), _fmt(r.proj_nmse)])
    for method, stats in summarize(records).items():
        cells = [f"{_fmt(stats[k][0])}±{_fmt(stats[k][1])}" if k in stats else ""
                 for k in ("nmse", "psnr", "ssim", "proj_nmse")]
        w.writerow([method, "summary", "", *cells])
    return buf.getvalue()


def emit_report(records: list[MetricsRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(records), encoding="utf-8")
    return path


def read_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def parse_summary(cell: str) -> tuple[float, float]:
    mean, std = cell.split("±")
    return float(mean), float(std)
