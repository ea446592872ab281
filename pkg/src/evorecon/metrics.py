"""Image quality metrics: MSE, NMSE, SSIM, PSNR, and mean/std aggregation."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

K1 = 0.01
K2 = 0.03
SSIM_WINDOW = 7


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return y, y_hat


def mse(y, y_hat) -> float:
    """Mean of squared pixel differences (averaged over any batch axis too)."""
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def nmse(y, y_hat) -> float:
    """||y - y_hat||^2 / ||y||^2."""
    y, y_hat = _pair(y, y_hat)
    ref = float(np.sum(y * y))
    if ref == 0.0:
        raise ValueError("NMSE is undefined for an all-zero reference")
    return float(np.sum((y - y_hat) ** 2)) / ref


def ssim(y, y_hat, dynamic_range: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``window x window`` uniform windows.

    Uses the standard form with additive denominators
    ``(mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2)``; variances and the
    covariance are population (1/n) moments within each window.
    """
    y, y_hat = _pair(y, y_hat)
    if y.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if min(y.shape) < window:
        raise ValueError(f"images smaller than the {window}x{window} window")
    c1 = (K1 * dynamic_range) ** 2
    c2 = (K2 * dynamic_range) ** 2
    wx = sliding_window_view(y, (window, window))
    wy = sliding_window_view(y_hat, (window, window))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    vx = (dx * dx).mean(axis=(-2, -1))
    vy = (dy * dy).mean(axis=(-2, -1))
    cxy = (dx * dy).mean(axis=(-2, -1))
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def psnr(y, y_hat, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; ``inf`` for a perfect match."""
    return psnr_from_mse(mse(y, y_hat), peak)


def psnr_from_mse(value: float, peak: float = 1.0) -> float:
    if value == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / value)


def aggregate(values) -> tuple[float, float]:
    """Sample mean and sample (n-1) standard deviation."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty list")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


METRICS = ("mse", "nmse", "ssim", "psnr")


def evaluate_pairs(targets, predictions) -> dict[str, tuple[float, float]]:
    """Per-image metrics over matching lists, aggregated to (mean, std)."""
    per = {name: [] for name in METRICS}
    for y, y_hat in zip(targets, predictions):
        y = np.squeeze(y)
        y_hat = np.squeeze(y_hat)
        per["mse"].append(mse(y, y_hat))
        per["nmse"].append(nmse(y, y_hat))
        per["ssim"].append(ssim(y, y_hat))
        per["psnr"].append(psnr(y, y_hat))
    return {name: aggregate(vals) for name, vals in per.items()}


def report_csv(results: dict[str, tuple[float, float]]) -> str:
    """``name,mean,std`` rows."""
    lines = ["name,mean,std"]
    lines += [f"{name},{mean!r},{std!r}" for name, (mean, std) in results.items()]
    return "\n".join(lines) + "\n"


def format_table(rows: dict[str, dict[str, tuple[float, float]]]) -> str:
    """Result-table layout: one row per model, ``mean +- std`` per metric."""
    scales = {"mse": (1e-3, "MSE (1e-3)"), "nmse": (1e-2, "NMSE (1e-2)"),
              "ssim": (1e-2, "SSIM (1e-2)"), "psnr": (1.0, "PSNR (dB)")}
    header = ["Model"] + [scales[m][1] for m in METRICS]
    body = []
    for model, res in rows.items():
        cells = [model]
        for m in METRICS:
            mean, std = res[m]
            s = scales[m][0]
            cells.append(f"{mean / s:.2f} +- {std / s:.2f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    return "\n".join(fmt.format(*r) for r in [header] + body) + "\n"
