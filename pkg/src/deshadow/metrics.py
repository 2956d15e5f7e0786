"""Region-partitioned evaluation: RMSE in LAB, PSNR, and SSIM over the whole
image, the shadow region, and the non-shadow region.

All functions are pure and never mutate their inputs.  PSNR is capped at
100 dB so that identical images produce a finite report.  The "RMSE"
convention is literal root-mean-square in LAB by default; the
``convention="mae"`` switch emits mean absolute error in LAB instead, since
part of the shadow-removal literature reports that quantity under the same
name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EmptyRegionError
from .imaging import gaussian_taps, luma, rgb_to_lab, separable_filter2d

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0

RMSE_CONVENTIONS = ("rmse", "mae")


@dataclass
class RegionMetrics:
    rmse_lab: float
    psnr: float
    ssim: float


@dataclass
class RegionReport:
    all: RegionMetrics
    shadow: RegionMetrics
    non_shadow: RegionMetrics


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"metric inputs differ in shape: {pred.shape} vs {gt.shape}")
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ContractError(f"metric inputs must be (H, W, 3), got {pred.shape}")
    return pred, gt


def _region_selector(shape: tuple, region: np.ndarray | None, what: str) -> np.ndarray:
    if region is None:
        return np.ones(shape, dtype=bool)
    region = np.asarray(region)
    if region.shape != shape:
        raise ContractError(f"{what}: region shape {region.shape} != image {shape}")
    sel = region > 0.5
    if not sel.any():
        raise EmptyRegionError(f"{what}: region contains no pixels")
    return sel


def rmse_lab(pred: np.ndarray, gt: np.ndarray, region: np.ndarray | None = None,
             convention: str = "rmse") -> float:
    """Root-mean-square (or mean-absolute) LAB error over a pixel region.

    The mean runs over the region's pixels and all three LAB channels.
    """
    if convention not in RMSE_CONVENTIONS:
        raise ContractError(f"unknown rmse convention {convention!r}")
    pred, gt = _check_pair(pred, gt)
    sel = _region_selector(pred.shape[:2], region, "rmse_lab")
    diff = rgb_to_lab(pred)[sel] - rgb_to_lab(gt)[sel]
    if convention == "mae":
        return float(np.abs(diff).mean())
    return float(math.sqrt((diff**2).mean()))


def psnr(pred: np.ndarray, gt: np.ndarray, region: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB over RGB, peak 1.0, capped at 100 dB."""
    pred, gt = _check_pair(pred, gt)
    sel = _region_selector(pred.shape[:2], region, "psnr")
    diff = pred[sel].astype(np.float64) - gt[sel].astype(np.float64)
    mse = float((diff**2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _local_stats(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return separable_filter2d(plane, taps)


def ssim_map(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Dense single-scale SSIM map on luma.

    11x11 gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.
    Windows near the border straddle a mirror-padded (symmetric) boundary so
    the map covers every pixel.
    """
    pred, gt = _check_pair(pred, gt)
    h, w = pred.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ContractError(
            f"ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    taps = gaussian_taps(SSIM_SIGMA, radius=SSIM_WINDOW // 2)
    x = luma(pred)
    y = luma(gt)
    mu_x = _local_stats(x, taps)
    mu_y = _local_stats(y, taps)
    xx = _local_stats(x * x, taps)
    yy = _local_stats(y * y, taps)
    xy = _local_stats(x * y, taps)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )


def ssim(pred: np.ndarray, gt: np.ndarray, region: np.ndarray | None = None) -> float:
    """SSIM map averaged over the region's pixels.

    The region's bounding box must be at least the window size in both
    dimensions.
    """
    pred, gt = _check_pair(pred, gt)
    sel = _region_selector(pred.shape[:2], region, "ssim")
    ys, xs = np.nonzero(sel)
    if (ys.max() - ys.min() + 1) < SSIM_WINDOW or (xs.max() - xs.min() + 1) < SSIM_WINDOW:
        raise ContractError(
            f"ssim: region bounding box smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return float(ssim_map(pred, gt)[sel].mean())


def evaluate(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray,
             convention: str = "rmse") -> RegionReport:
    """All three metrics over all / shadow (mask==1) / non-shadow (mask==0)."""
    pred, gt = _check_pair(pred, gt)
    mask = np.asarray(mask)
    if mask.shape != pred.shape[:2]:
        raise ContractError(f"evaluate: mask shape {mask.shape} != image {pred.shape[:2]}")
    values = np.unique(mask)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ContractError("evaluate: mask must be binary {0, 1}")
    shadow_sel = mask
    non_shadow_sel = 1.0 - mask

    def region_metrics(region):
        return RegionMetrics(
            rmse_lab=rmse_lab(pred, gt, region, convention),
            psnr=psnr(pred, gt, region),
            ssim=ssim(pred, gt, region),
        )

    return RegionReport(
        all=region_metrics(None),
        shadow=region_metrics(shadow_sel),
        non_shadow=region_metrics(non_shadow_sel),
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

REPORT_FIELDS = (
    "all_rmse_lab", "all_psnr", "all_ssim",
    "shadow_rmse_lab", "shadow_psnr", "shadow_ssim",
    "nonshadow_rmse_lab", "nonshadow_psnr", "nonshadow_ssim",
)


def report_values(report: RegionReport) -> list[float]:
    return [
        report.all.rmse_lab, report.all.psnr, report.all.ssim,
        report.shadow.rmse_lab, report.shadow.psnr, report.shadow.ssim,
        report.non_shadow.rmse_lab, report.non_shadow.psnr, report.non_shadow.ssim,
    ]


def report_header(resolution: tuple[int, int], convention: str = "rmse") -> str:
    """Header lines for a line-delimited report file (field order is fixed)."""
    return (
        f"# deshadow region report v1 resolution={resolution[0]}x{resolution[1]} "
        f"convention={convention}-lab\n"
        "# id " + " ".join(REPORT_FIELDS)
    )


def report_record(image_id: str, report: RegionReport) -> str:
    return image_id + " " + " ".join(f"{v:.6f}" for v in report_values(report))


def parse_report_record(line: str) -> tuple[str, dict[str, float]]:
    parts = line.split()
    if len(parts) != 1 + len(REPORT_FIELDS):
        raise ContractError(f"malformed report record: {line!r}")
    return parts[0], {k: float(v) for k, v in zip(REPORT_FIELDS, parts[1:])}


def format_report_table(rows: list[tuple[str, RegionReport]]) -> str:
    """Human-readable table: one row per image plus a macro-average row."""
    header = (
        f"{'image':<20} {'all':>21} {'shadow':>21} {'non-shadow':>21}\n"
        f"{'':<20} {'rmse  psnr  ssim':>21} {'rmse  psnr  ssim':>21} {'rmse  psnr  ssim':>21}"
    )
    lines = [header]

    def fmt(vals):
        return " ".join(
            f"{vals[i]:5.3f} {vals[i + 1]:5.2f} {vals[i + 2]:5.4f}" for i in (0, 3, 6)
        )

    acc = np.zeros(len(REPORT_FIELDS))
    for image_id, rep in rows:
        vals = report_values(rep)
        acc += np.asarray(vals)
        lines.append(f"{image_id:<20} {fmt(vals)}")
    if rows:
        mean = acc / len(rows)
        lines.append(f"{'mean':<20} {fmt(list(mean))}")
    return "\n".join(lines)
