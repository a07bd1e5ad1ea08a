"""Figure rendering and image export for run directories.

Matplotlib (Agg backend) draws the training curves and metric charts that
sit next to the CSV output; Pillow writes exact 8-bit grayscale PNGs of the
image panels. Signed residual maps are encoded around mid-gray: pixel value
128 means residual 0.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from PIL import Image  # noqa: E402

from .metrics import MetricsReport  # noqa: E402
from .train import EpochLog  # noqa: E402

__all__ = [
    "save_grayscale_png",
    "save_residual_png",
    "save_error_png",
    "render_training_curves",
    "render_metrics_chart",
    "render_ablation_chart",
    "render_inference_panel",
]


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def save_grayscale_png(path, image: np.ndarray, lo: float = 0.0,
                       hi: float = 1.0) -> None:
    """Window [lo, hi] to 8-bit grayscale and write a PNG."""
    if hi <= lo:
        raise ValueError(f"window must satisfy hi > lo, got [{lo}, {hi}]")
    scaled = (np.asarray(image, dtype=np.float64) - lo) / (hi - lo) * 255.0
    Image.fromarray(_to_u8(scaled), mode="L").save(Path(path))


def save_residual_png(path, residual: np.ndarray, half_range: float = 1.0) -> None:
    """Signed map around mid-gray: 0 -> 128, +-half_range -> 255 / 1."""
    if half_range <= 0:
        raise ValueError(f"half_range must be positive, got {half_range}")
    scaled = 128.0 + np.asarray(residual, dtype=np.float64) / half_range * 127.0
    Image.fromarray(_to_u8(scaled), mode="L").save(Path(path))


def save_error_png(path, error: np.ndarray, full_range: float = 1.0) -> None:
    """Magnitude map: 0 -> black, full_range -> white."""
    if full_range <= 0:
        raise ValueError(f"full_range must be positive, got {full_range}")
    scaled = np.abs(np.asarray(error, dtype=np.float64)) / full_range * 255.0
    Image.fromarray(_to_u8(scaled), mode="L").save(Path(path))


def render_training_curves(logs: list[EpochLog], path) -> None:
    """Loss-per-epoch figure; draws whichever loss terms the phase logged."""
    epochs = [log.epoch for log in logs]
    fig, ax = plt.subplots(figsize=(6, 4))
    series = [("total", [log.total for log in logs]),
              ("mse", [log.mse for log in logs]),
              ("ce", [log.ce for log in logs]),
              ("l1 coarse", [log.l_cpnet for log in logs]),
              ("l1 residual", [log.l_refinenet for log in logs])]
    for label, values in series:
        if any(v is not None for v in values):
            ax.plot(epochs, [float("nan") if v is None else v for v in values],
                    label=label)
    if any(log.lam is not None for log in logs):
        ax2 = ax.twinx()
        ax2.plot(epochs, [log.lam for log in logs], color="gray",
                 linestyle="--", label="lambda")
        ax2.set_ylabel("lambda")
        ax2.set_ylim(-0.05, 1.05)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics_chart(reports: list[MetricsReport], path) -> None:
    """Grouped bar chart of mean PSNR per DRF, one group color per model."""
    drfs = sorted({row.drf for rep in reports for row in rep.rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(reports))
    xs = np.arange(len(drfs))
    for i, rep in enumerate(reports):
        by_drf = {row.drf: row for row in rep.rows}
        means = [by_drf[d].psnr_mean if d in by_drf else 0.0 for d in drfs]
        stds = [by_drf[d].psnr_std if d in by_drf else 0.0 for d in drfs]
        ax.bar(xs + i * width, means, width, yerr=stds, capsize=3, label=rep.model)
    ax.set_xticks(xs + width * (len(reports) - 1) / 2)
    ax.set_xticklabels([f"DRF={d}" for d in drfs])
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_chart(variant_reports: dict[str, MetricsReport], path) -> None:
    """Mean PSNR per DRF for each ablation variant, as grouped bars."""
    render_metrics_chart(list(variant_reports.values()), path)


def render_inference_panel(panels: dict[str, np.ndarray], path,
                           lo: float = 0.0, hi: float = 1.0) -> None:
    """Side-by-side panel figure; residual-named panels use a signed scale."""
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 3))
    if n == 1:
        axes = [axes]
    for ax, (title, image) in zip(axes, panels.items()):
        if "residual" in title:
            half = hi - lo
            ax.imshow(image, cmap="gray", vmin=-half, vmax=half)
        else:
            ax.imshow(image, cmap="gray", vmin=lo, vmax=hi)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
