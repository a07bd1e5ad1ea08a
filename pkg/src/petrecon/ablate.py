"""Four-variant ablation over identical data and seeds.

  (a) coarse network alone, trained from scratch
  (b) coarse network warm-started from a reconstruction-only pretraining
      (classification weight forced to zero by fixing lambda at 1)
  (c) coarse network warm-started from the full two-task pretraining
  (d) variant (c) trained jointly with the refinement network

All variants share each seed's batch order and coarse-network
initialization, so differences isolate the pretraining and refinement
contributions. Results aggregate across the seed list (mean over seeds of
each per-DRF metric mean; std across seeds).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import (DrfRow, MetricsReport, evaluate_prediction,
                      render_report_csv, render_report_table)
from .models import predict_rpet
from .phantom import load_manifest, load_samples
from .train import (TrainConfig, evaluate_classifier, run_prediction_phase,
                    run_pretrain, write_epoch_logs)

__all__ = ["VARIANT_LABELS", "AblationOutcome", "run_ablation"]

VARIANT_LABELS = {
    "a": "(a) coarse only",
    "b": "(b) + recon-only pretrain",
    "c": "(c) + two-task pretrain",
    "d": "(d) + refinement",
}


@dataclass
class AblationOutcome:
    variants: dict[str, MetricsReport] = field(default_factory=dict)
    per_seed: dict[str, list[MetricsReport]] = field(default_factory=dict)
    classifier_accuracy: float = 0.0
    mean_psnr_over_drfs: dict[str, float] = field(default_factory=dict)


def _aggregate(label: str, reports: list[MetricsReport]) -> MetricsReport:
    """Mean across seeds of each per-DRF metric mean; std across seeds."""
    agg = MetricsReport(model=label)
    drfs = sorted({row.drf for rep in reports for row in rep.rows})
    for drf in drfs:
        rows = [row for rep in reports for row in rep.rows if row.drf == drf]
        def stat(attr):
            vals = np.array([getattr(r, attr) for r in rows], dtype=np.float64)
            return float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        psnr_m, psnr_s = stat("psnr_mean")
        ssim_m, ssim_s = stat("ssim_mean")
        nmse_m, nmse_s = stat("nmse_mean")
        agg.rows.append(DrfRow(
            drf=drf, n_slices=rows[0].n_slices,
            psnr_mean=psnr_m, psnr_std=psnr_s,
            ssim_mean=ssim_m, ssim_std=ssim_s,
            nmse_mean=nmse_m, nmse_std=nmse_s,
            psnr_inf_count=sum(r.psnr_inf_count for r in rows)))
    return agg


def run_ablation(dataset_dir, seeds: list[int], pretrain_epochs: int,
                 epochs: int, lr: float = 2e-4, batch_size: int = 8,
                 base_channels: int = 16, beta: float = 1.0,
                 out_dir=None, progress=None) -> AblationOutcome:
    """Run the full four-variant comparison; optionally write artifacts."""
    if not seeds:
        raise ValueError("need at least one seed")
    manifest = load_manifest(dataset_dir)
    train_samples = load_samples(dataset_dir, "train", manifest)
    test_samples = load_samples(dataset_dir, "test", manifest)
    out_root = Path(out_dir) if out_dir is not None else None
    if out_root is not None:
        out_root.mkdir(parents=True, exist_ok=True)

    per_seed: dict[str, list[MetricsReport]] = {v: [] for v in VARIANT_LABELS}
    accuracies = []

    def note(msg):
        if progress is not None:
            progress(msg)

    for seed in seeds:
        note(f"seed {seed}: pretraining (two-task)")
        pre_cfg = TrainConfig(epochs=pretrain_epochs, lr=lr,
                              batch_size=batch_size, seed=seed)
        pre_full, logs_full = run_pretrain(train_samples, pre_cfg,
                                           base_channels=base_channels)
        accuracies.append(evaluate_classifier(pre_full, test_samples))

        note(f"seed {seed}: pretraining (reconstruction only)")
        pre_cfg_b = TrainConfig(epochs=pretrain_epochs, lr=lr,
                                batch_size=batch_size, seed=seed,
                                lambda_fixed=1.0)
        pre_recon, logs_recon = run_pretrain(train_samples, pre_cfg_b,
                                             base_channels=base_channels)
        if out_root is not None:
            write_epoch_logs(logs_full, out_root / f"seed{seed}_pretrain_two_task_log.csv")
            write_epoch_logs(logs_recon, out_root / f"seed{seed}_pretrain_recon_only_log.csv")

        plans = {
            "a": (None, False),
            "b": (pre_recon, False),
            "c": (pre_full, False),
            "d": (pre_full, True),
        }
        for variant, (warm_start, with_refine) in plans.items():
            note(f"seed {seed}: training variant {variant}")
            cfg = TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size,
                              seed=seed, beta=beta)
            coarse_net, refine_net, logs = run_prediction_phase(
                train_samples, cfg, pretrain_state=warm_start,
                base_channels=base_channels, use_refinenet=with_refine)
            report, _ = evaluate_prediction(
                lambda lpet: predict_rpet(coarse_net, refine_net, lpet),
                test_samples, model=VARIANT_LABELS[variant])
            per_seed[variant].append(report)
            if out_root is not None:
                write_epoch_logs(logs, out_root / f"seed{seed}_variant_{variant}_log.csv")

    outcome = AblationOutcome(per_seed=per_seed,
                              classifier_accuracy=float(np.mean(accuracies)))
    for variant, label in VARIANT_LABELS.items():
        agg = _aggregate(label, per_seed[variant])
        outcome.variants[variant] = agg
        outcome.mean_psnr_over_drfs[variant] = float(
            np.mean([row.psnr_mean for row in agg.rows]))

    if out_root is not None:
        reports = list(outcome.variants.values())
        table = render_report_table(reports)
        table += (f"pretraining dose-classification accuracy, variant (c), "
                  f"test split: {outcome.classifier_accuracy:.3f}\n")
        (out_root / "ablation.txt").write_text(table, encoding="utf-8")
        (out_root / "ablation.csv").write_text(render_report_csv(reports),
                                               encoding="utf-8")
        from .report import render_ablation_chart
        render_ablation_chart(outcome.variants, out_root / "ablation.png")
    return outcome
