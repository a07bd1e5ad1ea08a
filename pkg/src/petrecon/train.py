"""Two-phase training loops.

Phase 1 trains the self-reconstruction + dose-classification network on a
ramped multi-task objective: total = lam * mse + (1 - lam) * ce, where lam
rises linearly from 0 at the first epoch to 1 at the last, so classification
dominates early and reconstruction late.

Phase 2 trains the coarse network (optionally warm-started from the phase-1
encoder) end to end with the refinement network on the composite L1
objective: total = l1(coarse, spet) + beta * l1(residual_hat, r) with
r = spet - coarse. One Adam instance spans both networks, and the gradient
of the refinement term reaches the coarse network through the coarse input
of the refinement network. By default r is treated as a constant target
(no gradient flows into the coarse network through r itself); that keeps the
coarse objective from being gamed by inflating the residual.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .models import (EncoderDecoderNet, build_coarse_net, build_pretrain_net,
                     build_refine_net, transfer_encoder)
from .nn.adam import Adam
from .nn.losses import (l1_loss, l1_loss_grad, mse_loss, mse_loss_grad,
                        one_hot, softmax_cross_entropy,
                        softmax_cross_entropy_grad)
from .phantom import SliceSample

__all__ = [
    "TrainConfig",
    "EpochLog",
    "lambda_schedule",
    "pretrain_loss",
    "prediction_losses",
    "run_pretrain",
    "run_prediction_phase",
    "evaluate_classifier",
    "write_epoch_logs",
    "EPOCH_LOG_HEADER",
]

EPOCH_LOG_HEADER = "epoch,lambda,mse,ce,acc,l_cp,l_refine,total,seconds"


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 2e-4
    batch_size: int = 16
    beta: float = 1.0
    seed: int = 0
    shuffle: bool = True
    detach_residual_target: bool = True
    lambda_fixed: float | None = None
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.lambda_fixed is not None and not 0.0 <= self.lambda_fixed <= 1.0:
            raise ValueError(f"lambda_fixed must be in [0, 1], got {self.lambda_fixed}")


@dataclass
class EpochLog:
    epoch: int
    lam: float | None = None
    mse: float | None = None
    ce: float | None = None
    acc: float | None = None
    l_cpnet: float | None = None
    l_refinenet: float | None = None
    total: float = 0.0
    seconds: float = 0.0


def lambda_schedule(epoch: int, total_epochs: int) -> float:
    """Linear ramp from 0 at the first epoch to 1 at the last."""
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return 1.0
    return epoch / (total_epochs - 1)


def pretrain_loss(recon: np.ndarray, lpet: np.ndarray, logits: np.ndarray,
                  labels: np.ndarray, lam: float):
    """Ramped multi-task objective; returns (total, mse_term, ce_term)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    mse_term = mse_loss(lpet, recon)
    ce_term = softmax_cross_entropy(logits, labels)
    return lam * mse_term + (1.0 - lam) * ce_term, mse_term, ce_term


def prediction_losses(coarse: np.ndarray, spet_target: np.ndarray,
                      residual_hat: np.ndarray, beta: float,
                      detach_residual_target: bool = True):
    """Composite phase-2 objective; returns (total, l_cpnet, l_refinenet).

    The residual target is r = spet_target - coarse. The detach flag has no
    effect on the values, only on how callers route gradients through r.
    """
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    l_cp = l1_loss(coarse, spet_target)
    r = spet_target - coarse
    l_ref = l1_loss(residual_hat, r)
    return l_cp + beta * l_ref, l_cp, l_ref


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def _stack(samples: list[SliceSample], indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lpet = np.stack([samples[i].lpet for i in indices]).astype(np.float32)[:, None]
    spet = np.stack([samples[i].spet for i in indices]).astype(np.float32)[:, None]
    classes = np.array([samples[i].drf_class for i in indices], dtype=np.int64)
    return lpet, spet, classes


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _phase_rngs(seed: int, phase: int):
    """Independent init and batch-order streams per phase."""
    root = np.random.SeedSequence((int(seed) & 0xFFFFFFFFFFFFFFFF, int(phase)))
    init_ss, batch_ss = root.spawn(2)
    return (int(np.random.default_rng(init_ss).integers(2 ** 63)),
            np.random.default_rng(batch_ss))


# ---------------------------------------------------------------------------
# Phase 1: pretraining
# ---------------------------------------------------------------------------

def run_pretrain(samples: list[SliceSample], config: TrainConfig,
                 input_size: int | None = None, base_channels: int = 16,
                 num_classes: int = 3, progress=None):
    """Train the reconstruction + classification network.

    Returns ``(net, logs)``. Deterministic for a fixed config seed.
    """
    if not samples:
        raise ValueError("training sample list is empty")
    present = {s.drf_class for s in samples}
    if present != set(range(num_classes)):
        raise ValueError(f"training split must contain every DRF class, "
                         f"found classes {sorted(present)}")
    if input_size is None:
        input_size = samples[0].lpet.shape[0]
    init_seed, batch_rng = _phase_rngs(config.seed, phase=1)
    net = build_pretrain_net(input_size, base_channels, num_classes, seed=init_seed)
    optimizer = Adam(net.parameters(), lr=config.lr)
    logs: list[EpochLog] = []
    n = len(samples)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lam = (config.lambda_fixed if config.lambda_fixed is not None
               else lambda_schedule(epoch, config.epochs))
        sum_total = sum_mse = sum_ce = 0.0
        n_correct = 0
        for idx in _batches(n, config.batch_size,
                            batch_rng if config.shuffle else None):
            lpet, _, classes = _stack(samples, idx)
            labels = one_hot(classes, num_classes)
            recon, logits = net.forward(lpet, training=True)
            total, mse_term, ce_term = pretrain_loss(recon, lpet, logits, labels, lam)
            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite pretraining loss at epoch {epoch}, "
                    f"batch starting with sample {idx[0]}")
            optimizer.zero_grad()
            d_recon = lam * mse_loss_grad(recon, lpet)
            d_logits = (1.0 - lam) * softmax_cross_entropy_grad(logits, labels)
            net.backward(d_recon, d_logits)
            optimizer.step()
            sum_total += total * len(idx)
            sum_mse += mse_term * len(idx)
            sum_ce += ce_term * len(idx)
            n_correct += int(np.sum(np.argmax(logits, axis=1) == classes))
        log = EpochLog(epoch=epoch, lam=lam, mse=sum_mse / n, ce=sum_ce / n,
                       acc=n_correct / n, total=sum_total / n,
                       seconds=time.perf_counter() - t0)
        logs.append(log)
        if progress is not None:
            progress(log)
    return net, logs


def evaluate_classifier(net: EncoderDecoderNet, samples: list[SliceSample],
                        batch_size: int = 32) -> float:
    """Eval-mode classification accuracy over a sample list."""
    if not samples:
        raise ValueError("sample list is empty")
    n_correct = 0
    for idx in _batches(len(samples), batch_size, None):
        lpet, _, classes = _stack(samples, idx)
        feats = net.encode(lpet, training=False)
        logits = net.classify(feats, training=False)
        n_correct += int(np.sum(np.argmax(logits, axis=1) == classes))
    return n_correct / len(samples)


# ---------------------------------------------------------------------------
# Phase 2: coarse-to-fine prediction
# ---------------------------------------------------------------------------

def run_prediction_phase(samples: list[SliceSample], config: TrainConfig,
                         pretrain_state: EncoderDecoderNet | dict | None = None,
                         input_size: int | None = None, base_channels: int = 16,
                         use_refinenet: bool = True, progress=None):
    """Train the coarse network, optionally jointly with the refinement net.

    Returns ``(coarse_net, refine_net_or_None, logs)``. Batch order depends
    only on the seed and sample count, so runs that differ in pretraining or
    refinement see identical batches.
    """
    if not samples:
        raise ValueError("training sample list is empty")
    if input_size is None:
        input_size = samples[0].lpet.shape[0]
    init_seed, batch_rng = _phase_rngs(config.seed, phase=2)
    coarse_net = build_coarse_net(input_size, base_channels, seed=init_seed)
    refine_net = (build_refine_net(input_size, base_channels, seed=init_seed + 1)
                  if use_refinenet else None)
    if pretrain_state is not None:
        transfer_encoder(pretrain_state, coarse_net)
    if config.freeze_encoder:
        for p in coarse_net.parameters():
            if p.name.startswith("enc."):
                p.trainable = False
    params = list(coarse_net.parameters())
    if refine_net is not None:
        params += refine_net.parameters()
    optimizer = Adam(params, lr=config.lr)
    logs: list[EpochLog] = []
    n = len(samples)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sum_total = sum_cp = sum_ref = 0.0
        for idx in _batches(n, config.batch_size,
                            batch_rng if config.shuffle else None):
            lpet, spet, _ = _stack(samples, idx)
            coarse = coarse_net.forward(lpet, training=True)
            optimizer.zero_grad()
            if refine_net is not None:
                paired = np.concatenate([coarse, lpet], axis=1)
                residual_hat = refine_net.forward(paired, training=True)
                total, l_cp, l_ref = prediction_losses(
                    coarse, spet, residual_hat, config.beta,
                    config.detach_residual_target)
                r = spet - coarse
                d_residual = config.beta * l1_loss_grad(residual_hat, r)
                d_paired = refine_net.backward(d_residual)
                d_coarse = l1_loss_grad(coarse, spet) + d_paired[:, :1]
                if not config.detach_residual_target:
                    # dL/dcoarse through r = spet - coarse equals +d_residual
                    d_coarse = d_coarse + d_residual
            else:
                l_cp = l1_loss(coarse, spet)
                l_ref = 0.0
                total = l_cp
                d_coarse = l1_loss_grad(coarse, spet)
            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite prediction loss at epoch {epoch}, "
                    f"batch starting with sample {idx[0]}")
            coarse_net.backward(d_coarse)
            optimizer.step()
            sum_total += total * len(idx)
            sum_cp += l_cp * len(idx)
            sum_ref += l_ref * len(idx)
        log = EpochLog(epoch=epoch, l_cpnet=sum_cp / n, l_refinenet=sum_ref / n,
                       total=sum_total / n, seconds=time.perf_counter() - t0)
        logs.append(log)
        if progress is not None:
            progress(log)
    return coarse_net, refine_net, logs


# ---------------------------------------------------------------------------
# Log output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_epoch_logs(logs: list[EpochLog], path) -> None:
    """Append-style CSV: epoch, lambda, mse, ce, acc, l_cp, l_refine, total, seconds."""
    rows = [EPOCH_LOG_HEADER]
    for log in logs:
        rows.append(",".join([
            str(log.epoch), _fmt(log.lam), _fmt(log.mse), _fmt(log.ce),
            _fmt(log.acc), _fmt(log.l_cpnet), _fmt(log.l_refinenet),
            _fmt(log.total), _fmt(log.seconds),
        ]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
