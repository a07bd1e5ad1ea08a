"""Command-line entry point.

Subcommands cover the whole workflow:

  generate   build a synthetic multi-dose dataset
  pretrain   phase 1: reconstruction + dose classification
  train      phase 2: coarse + refinement networks, then evaluation
  evaluate   metric report of saved checkpoints on the test split
  infer      reconstruct one LPET slice, exporting f32 and PNG panels
  ablate     the four-variant comparison on shared data and seeds

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import phantom
from .ablate import run_ablation
from .config import ConfigError, RunConfig, read_config_file, write_config_file
from .metrics import (evaluate_prediction, read_per_slice_csv,
                      render_report_csv, render_report_table,
                      write_per_slice_csv)
from .models import load_net, predict_rpet, save_net
from .nn.checkpoint import CheckpointError
from .phantom import ManifestError
from .train import (TrainConfig, evaluate_classifier, run_prediction_phase,
                    run_pretrain, write_epoch_logs)

__all__ = ["main"]


def _effective_config(args) -> RunConfig:
    base = read_config_file(args.config) if getattr(args, "config", None) else RunConfig()
    return base.merged_with_flags(args)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size,
                       beta=cfg.beta, seed=cfg.seed, shuffle=cfg.shuffle,
                       detach_residual_target=cfg.detach_residual_target,
                       lambda_fixed=cfg.lambda_fixed,
                       freeze_encoder=cfg.freeze_encoder)


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"missing required option {flag}")
    return value


def _echo_progress(log):
    parts = [f"epoch {log.epoch:3d}", f"total {log.total:.5f}"]
    if log.lam is not None:
        parts.append(f"lambda {log.lam:.3f}")
    if log.acc is not None:
        parts.append(f"acc {log.acc:.3f}")
    print("  " + "  ".join(parts))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    manifest = phantom.build_dataset(
        seed=args.seed, n_subjects_train=args.train_subjects,
        n_subjects_test=args.test_subjects,
        slices_per_subject=args.slices, size=args.size,
        total_counts=args.counts, out_dir=args.out)
    n_files = len(manifest.files)
    print(f"wrote {n_files} tensor files for {len(manifest.subjects)} subjects")
    print(f"manifest: {Path(args.out) / phantom.MANIFEST_NAME}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _effective_config(args)
    _require(cfg.data, "--data")
    _require(cfg.out, "--out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(cfg, out / "config.txt")

    manifest = phantom.load_manifest(cfg.data)
    train_samples = phantom.load_samples(cfg.data, "train", manifest)
    test_samples = phantom.load_samples(cfg.data, "test", manifest)
    print(f"pretraining on {len(train_samples)} slices "
          f"({manifest.image_size}x{manifest.image_size})")
    net, logs = run_pretrain(train_samples, _train_config(cfg),
                             base_channels=cfg.base_channels,
                             num_classes=cfg.num_classes,
                             progress=_echo_progress if args.verbose else None)
    save_net(net, out / "pretrain.ckpt")
    write_epoch_logs(logs, out / "pretrain_log.csv")
    from .report import render_training_curves
    render_training_curves(logs, out / "pretrain_curves.png")

    train_acc = evaluate_classifier(net, train_samples)
    test_acc = evaluate_classifier(net, test_samples)
    report = ("dose classification accuracy\n"
              f"train = {train_acc!r}\n"
              f"test = {test_acc!r}\n")
    (out / "pretrain_report.txt").write_text(report, encoding="utf-8")
    print(report.strip())
    print(f"artifacts in {out}: pretrain.ckpt.f32/.idx, pretrain_log.csv, "
          "pretrain_curves.png, pretrain_report.txt, config.txt")
    return 0


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if args.no_pretrain:
        cfg.pretrained = None
    elif cfg.pretrained is None:
        raise ConfigError("pass --pretrained <checkpoint stem> or --no-pretrain")
    _require(cfg.data, "--data")
    _require(cfg.out, "--out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(cfg, out / "config.txt")

    manifest = phantom.load_manifest(cfg.data)
    train_samples = phantom.load_samples(cfg.data, "train", manifest)
    test_samples = phantom.load_samples(cfg.data, "test", manifest)
    pretrain_state = None
    if cfg.pretrained is not None:
        pretrain_state = load_net(cfg.pretrained).state_dict()
    print(f"training coarse+refinement on {len(train_samples)} slices")
    coarse_net, refine_net, logs = run_prediction_phase(
        train_samples, _train_config(cfg), pretrain_state=pretrain_state,
        base_channels=cfg.base_channels,
        progress=_echo_progress if args.verbose else None)
    save_net(coarse_net, out / "cpnet.ckpt")
    save_net(refine_net, out / "refinenet.ckpt")
    write_epoch_logs(logs, out / "train_log.csv")
    from .report import render_metrics_chart, render_training_curves
    render_training_curves(logs, out / "train_curves.png")

    rpet_report, per_slice = evaluate_prediction(
        lambda lpet: predict_rpet(coarse_net, refine_net, lpet),
        test_samples, model="rpet")
    lpet_report, _ = evaluate_prediction(lambda lpet: lpet, test_samples,
                                         model="lpet")
    reports = [lpet_report, rpet_report]
    (out / "report.txt").write_text(render_report_table(reports), encoding="utf-8")
    (out / "report.csv").write_text(render_report_csv(reports), encoding="utf-8")
    write_per_slice_csv(per_slice, out / "per_slice.csv")
    render_metrics_chart(reports, out / "metrics_by_drf.png")
    print(render_report_table(reports))
    print(f"artifacts in {out}: cpnet.ckpt.*, refinenet.ckpt.*, train_log.csv, "
          "train_curves.png, report.txt, report.csv, per_slice.csv, "
          "metrics_by_drf.png, config.txt")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = phantom.load_manifest(args.data)
    samples = phantom.load_samples(args.data, args.split, manifest)
    coarse_net = load_net(args.cpnet)
    refine_net = load_net(args.refinenet) if args.refinenet else None

    baseline_slices = baseline_name = None
    if args.baseline:
        baseline_slices = read_per_slice_csv(args.baseline)
        baseline_name = Path(args.baseline).stem
    rpet_report, per_slice = evaluate_prediction(
        lambda lpet: predict_rpet(coarse_net, refine_net, lpet),
        samples, model="rpet", baseline_slices=baseline_slices,
        baseline_name=baseline_name)
    lpet_report, _ = evaluate_prediction(lambda lpet: lpet, samples, model="lpet")
    reports = [lpet_report, rpet_report]
    (out / "report.txt").write_text(render_report_table(reports), encoding="utf-8")
    (out / "report.csv").write_text(render_report_csv(reports), encoding="utf-8")
    write_per_slice_csv(per_slice, out / "per_slice.csv")
    from .report import render_metrics_chart
    render_metrics_chart(reports, out / "metrics_by_drf.png")
    print(render_report_table(reports))
    print(f"artifacts in {out}: report.txt, report.csv, per_slice.csv, "
          "metrics_by_drf.png")
    return 0


def _read_square_f32(path: str, size: int | None) -> np.ndarray:
    fpath = Path(path)
    if not fpath.exists():
        raise ManifestError(f"input file not found: {fpath}")
    flat = np.fromfile(fpath, dtype="<f4")
    if size is None:
        side = math.isqrt(flat.size)
        if side * side != flat.size:
            raise ValueError(f"{fpath}: {flat.size} values is not a square "
                             "image, pass --size")
        size = side
    if flat.size != size * size:
        raise ValueError(f"{fpath}: {flat.size} values, expected {size}x{size}")
    return flat.reshape(size, size)


def cmd_infer(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coarse_net = load_net(args.cpnet)
    refine_net = load_net(args.refinenet) if args.refinenet else None
    lpet = _read_square_f32(args.lpet, args.size)
    spet = _read_square_f32(args.spet, lpet.shape[0]) if args.spet else None

    batch = lpet[None, None].astype(np.float32)
    coarse = coarse_net.forward(batch, training=False)
    if refine_net is not None:
        paired = np.concatenate([coarse, batch], axis=1)
        residual = refine_net.forward(paired, training=False)
    else:
        residual = np.zeros_like(coarse)
    from .models import compose_rpet
    rpet = compose_rpet(coarse, residual)[0, 0]
    coarse2d, residual2d = coarse[0, 0], residual[0, 0]

    (out / "rpet.f32").write_bytes(np.ascontiguousarray(rpet, dtype="<f4").tobytes())
    lo, hi = (float(spet.min()), float(spet.max())) if spet is not None else (0.0, 1.0)
    if hi <= lo:
        lo, hi = 0.0, 1.0
    from .report import (render_inference_panel, save_error_png,
                         save_grayscale_png, save_residual_png)
    save_grayscale_png(out / "lpet.png", lpet, lo, hi)
    save_grayscale_png(out / "coarse.png", coarse2d, lo, hi)
    save_residual_png(out / "residual.png", residual2d, half_range=hi - lo)
    save_grayscale_png(out / "rpet.png", rpet, lo, hi)
    panels = {"lpet": lpet, "coarse": coarse2d, "residual": residual2d,
              "rpet": rpet}
    if spet is not None:
        save_error_png(out / "error.png", rpet - spet, full_range=hi - lo)
        panels["spet"] = spet
        panels["|rpet-spet|"] = np.abs(rpet - spet)
    render_inference_panel(panels, out / "panel.png", lo, hi)
    names = sorted(p.name for p in out.iterdir())
    print(f"artifacts in {out}: " + ", ".join(names))
    return 0


def cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    outcome = run_ablation(
        args.data, seeds=seeds, pretrain_epochs=args.pretrain_epochs,
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
        base_channels=args.base_channels, beta=args.beta, out_dir=args.out,
        progress=print if args.verbose else None)
    print((Path(args.out) / "ablation.txt").read_text(encoding="utf-8"))
    print(f"artifacts in {args.out}: ablation.txt, ablation.csv, ablation.png, "
          "per-seed epoch logs")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config file; flags override its values")
    p.add_argument("--data", help="dataset directory (with manifest.txt)")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--no-shuffle", dest="shuffle", action="store_const", const=False)
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="petrecon",
        description="Multi-dose low-dose PET reconstruction workflows.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a synthetic multi-dose dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-subjects", type=int, default=4)
    p.add_argument("--test-subjects", type=int, default=2)
    p.add_argument("--slices", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--counts", type=float, default=phantom.DEFAULT_TOTAL_COUNTS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="phase 1: reconstruction + classification")
    _add_run_config_flags(p)
    p.add_argument("--lambda-fixed", dest="lambda_fixed", type=float,
                   help="fix the ramp weight instead of scheduling it")
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="phase 2: coarse + refinement networks")
    _add_run_config_flags(p)
    p.add_argument("--pretrained", help="pretraining checkpoint stem")
    p.add_argument("--no-pretrain", action="store_true",
                   help="train the coarse network from scratch")
    p.add_argument("--beta", type=float)
    p.add_argument("--no-detach-residual-target", dest="detach_residual_target",
                   action="store_const", const=False)
    p.add_argument("--freeze-encoder", dest="freeze_encoder",
                   action="store_const", const=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metric report for saved checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--cpnet", required=True, help="coarse checkpoint stem")
    p.add_argument("--refinenet", help="refinement checkpoint stem")
    p.add_argument("--baseline", help="per-slice CSV for paired t-tests")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="reconstruct one LPET slice")
    p.add_argument("--cpnet", required=True)
    p.add_argument("--refinenet")
    p.add_argument("--lpet", required=True, help="raw little-endian f32 file")
    p.add_argument("--spet", help="optional ground truth for the error map")
    p.add_argument("--size", type=int, help="image side length (default: "
                   "inferred from the file size when square)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="four-variant ablation study")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seed list")
    p.add_argument("--pretrain-epochs", type=int, default=20)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, CheckpointError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
