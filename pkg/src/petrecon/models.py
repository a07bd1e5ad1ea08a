"""The three encoder-decoder networks and their composition.

All three share one trunk recipe with no skip connections between encoder
and decoder, so the decoder has to reconstruct from the bottleneck code
alone:

  encoder block:  ResidualBlock -> 4x4 stride-2 Conv -> BatchNorm -> LeakyReLU(0.2)
  decoder block:  ResidualBlock -> 4x4 stride-2 Deconv -> BatchNorm -> ReLU
  output head:    3x3 stride-1 Conv to 1 channel, linear

The pretraining network (depth 4) adds a dose classifier: the bottleneck
features are flattened and passed through a single fully connected layer.
The coarse prediction network is the identical trunk without the classifier;
the refinement network is a depth-2 trunk taking the 2-channel concatenation
of the coarse prediction and the LPET input, and its linear head lets the
predicted residual go negative.

Encoder channel widths are base*2^i; decoder widths mirror them with the
last up-sampling block staying at ``base`` so the head sees ``base``
channels.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .nn.layers import (Activation, BatchNorm2d, Conv2d, Deconv2d, Linear,
                        Param, ResidualBlock)
from .nn.tensorops import ShapeError
from .nn.checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "EncoderDecoderConfig",
    "EncoderDecoderNet",
    "build_pretrain_net",
    "build_coarse_net",
    "build_refine_net",
    "transfer_encoder",
    "compose_rpet",
    "predict_rpet",
    "save_net",
    "load_net",
]

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class EncoderDecoderConfig:
    in_channels: int = 1
    base_channels: int = 16
    depth: int = 4
    with_classifier: bool = False
    num_classes: int = 3
    input_size: int = 32

    def __post_init__(self):
        if self.depth not in (2, 4):
            raise ValueError(f"depth must be 2 or 4, got {self.depth}")
        if self.input_size % (2 ** self.depth) != 0:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by "
                f"2^depth = {2 ** self.depth}")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.with_classifier and self.num_classes < 2:
            raise ValueError("classifier needs at least 2 classes")

    @property
    def encoder_widths(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.depth)]

    @property
    def decoder_widths(self) -> list[int]:
        widths = list(reversed(self.encoder_widths[:-1]))
        widths.append(self.base_channels)
        return widths

    @property
    def bottleneck_channels(self) -> int:
        return self.encoder_widths[-1]

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // (2 ** self.depth)


class _DownBlock:
    def __init__(self, cin, cout, name, rng, dtype):
        self.res = ResidualBlock(cin, f"{name}.res", rng, dtype)
        self.down = Conv2d(cin, cout, 4, 2, 1, f"{name}.down", rng, dtype)
        self.bn = BatchNorm2d(cout, f"{name}.bn", dtype=dtype)
        self.act = Activation(LEAKY_SLOPE)

    def forward(self, x, training):
        x = self.res.forward(x, training)
        x = self.down.forward(x, training)
        x = self.bn.forward(x, training)
        return self.act.forward(x, training)

    def backward(self, dy):
        dy = self.act.backward(dy)
        dy = self.bn.backward(dy)
        dy = self.down.backward(dy)
        return self.res.backward(dy)

    def tensors(self):
        return self.res.tensors() + self.down.tensors() + self.bn.tensors()


class _UpBlock:
    def __init__(self, cin, cout, name, rng, dtype):
        self.res = ResidualBlock(cin, f"{name}.res", rng, dtype)
        self.up = Deconv2d(cin, cout, 4, 2, 1, f"{name}.up", rng, dtype)
        self.bn = BatchNorm2d(cout, f"{name}.bn", dtype=dtype)
        self.act = Activation(0.0)

    def forward(self, x, training):
        x = self.res.forward(x, training)
        x = self.up.forward(x, training)
        x = self.bn.forward(x, training)
        return self.act.forward(x, training)

    def backward(self, dy):
        dy = self.act.backward(dy)
        dy = self.bn.backward(dy)
        dy = self.up.backward(dy)
        return self.res.backward(dy)

    def tensors(self):
        return self.res.tensors() + self.up.tensors() + self.bn.tensors()


class EncoderDecoderNet:
    """Encoder-decoder trunk with optional dose classification head.

    Initialization draws encoder, then decoder, then classifier parameters
    from one seeded stream, so two configs differing only in the classifier
    share identical trunk weights for the same seed.
    """

    def __init__(self, config: EncoderDecoderConfig, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 7001)))

        enc_w = config.encoder_widths
        dec_w = config.decoder_widths
        self.enc_blocks = []
        cin = config.in_channels
        for i, cout in enumerate(enc_w):
            self.enc_blocks.append(_DownBlock(cin, cout, f"enc.{i}", rng, dtype))
            cin = cout
        self.dec_blocks = []
        for j, cout in enumerate(dec_w):
            self.dec_blocks.append(_UpBlock(cin, cout, f"dec.{j}", rng, dtype))
            cin = cout
        self.out_conv = Conv2d(cin, 1, 3, 1, 1, "dec.out", rng, dtype)
        self.classifier = None
        if config.with_classifier:
            flat = config.bottleneck_channels * config.bottleneck_size ** 2
            self.classifier = Linear(flat, config.num_classes, "cls.fc", rng, dtype)
        self._feat_shape = None

    # -- forward ----------------------------------------------------------

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected input (N, {self.config.in_channels}, H, W), "
                f"got shape {x.shape}")
        if x.shape[2] != self.config.input_size or x.shape[3] != self.config.input_size:
            raise ShapeError(
                f"expected spatial size {self.config.input_size}x"
                f"{self.config.input_size}, got {x.shape[2]}x{x.shape[3]}")

    def encode(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._check_input(x)
        for block in self.enc_blocks:
            x = block.forward(x, training)
        return x

    def decode(self, feats: np.ndarray, training: bool = False) -> np.ndarray:
        x = feats
        for block in self.dec_blocks:
            x = block.forward(x, training)
        return self.out_conv.forward(x, training)

    def classify(self, feats: np.ndarray, training: bool = False) -> np.ndarray:
        if self.classifier is None:
            raise RuntimeError("this network has no classifier head")
        self._feat_shape = feats.shape
        flat = feats.reshape(feats.shape[0], -1)
        return self.classifier.forward(flat, training)

    def forward(self, x: np.ndarray, training: bool = False):
        """Returns reconstruction, or (reconstruction, logits) with a head."""
        feats = self.encode(x, training)
        recon = self.decode(feats, training)
        if self.classifier is None:
            return recon
        logits = self.classify(feats, training)
        return recon, logits

    # -- backward ---------------------------------------------------------

    def backward(self, d_recon: np.ndarray,
                 d_logits: np.ndarray | None = None) -> np.ndarray:
        """Accumulate parameter gradients; returns the input gradient."""
        d_feats = self.out_conv.backward(d_recon)
        for block in reversed(self.dec_blocks):
            d_feats = block.backward(d_feats)
        if d_logits is not None:
            if self.classifier is None:
                raise RuntimeError("logits gradient given but no classifier head")
            d_flat = self.classifier.backward(d_logits)
            d_feats = d_feats + d_flat.reshape(self._feat_shape)
        dx = d_feats
        for block in reversed(self.enc_blocks):
            dx = block.backward(dx)
        return dx

    # -- parameter access ---------------------------------------------------

    def tensors(self) -> list[Param]:
        out: list[Param] = []
        for block in self.enc_blocks:
            out.extend(block.tensors())
        for block in self.dec_blocks:
            out.extend(block.tensors())
        out.extend(self.out_conv.tensors())
        if self.classifier is not None:
            out.extend(self.classifier.tensors())
        return out

    def parameters(self) -> list[Param]:
        return [p for p in self.tensors() if p.trainable]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {p.name: p for p in self.tensors()}
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing}, unexpected={extra}")
        for name, p in own.items():
            value = state[name]
            if tuple(value.shape) != tuple(p.data.shape):
                raise ValueError(f"{name}: shape {value.shape} does not match "
                                 f"{p.data.shape}")
            p.data = np.array(value, dtype=self.dtype)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


# ---------------------------------------------------------------------------
# Factories
# ---------------------------------------------------------------------------

def build_pretrain_net(input_size: int, base_channels: int = 16,
                       num_classes: int = 3, seed: int = 0,
                       dtype=np.float32) -> EncoderDecoderNet:
    cfg = EncoderDecoderConfig(in_channels=1, base_channels=base_channels,
                               depth=4, with_classifier=True,
                               num_classes=num_classes, input_size=input_size)
    return EncoderDecoderNet(cfg, seed=seed, dtype=dtype)


def build_coarse_net(input_size: int, base_channels: int = 16, seed: int = 0,
                     dtype=np.float32) -> EncoderDecoderNet:
    cfg = EncoderDecoderConfig(in_channels=1, base_channels=base_channels,
                               depth=4, with_classifier=False,
                               input_size=input_size)
    return EncoderDecoderNet(cfg, seed=seed, dtype=dtype)


def build_refine_net(input_size: int, base_channels: int = 16, seed: int = 0,
                     dtype=np.float32) -> EncoderDecoderNet:
    cfg = EncoderDecoderConfig(in_channels=2, base_channels=base_channels,
                               depth=2, with_classifier=False,
                               input_size=input_size)
    return EncoderDecoderNet(cfg, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# Composition and transfer
# ---------------------------------------------------------------------------

def transfer_encoder(source: EncoderDecoderNet | dict,
                     dest: EncoderDecoderNet) -> None:
    """Copy every ``enc.*`` tensor (weights and batch-norm running stats)
    from ``source`` into ``dest`` by value. Decoder and head stay untouched.
    """
    src_state = source.state_dict() if isinstance(source, EncoderDecoderNet) else source
    src_enc = {k: v for k, v in src_state.items() if k.startswith("enc.")}
    dest_enc = {p.name: p for p in dest.tensors() if p.name.startswith("enc.")}
    problems = []
    if set(src_enc) != set(dest_enc):
        only_src = sorted(set(src_enc) - set(dest_enc))
        only_dest = sorted(set(dest_enc) - set(src_enc))
        problems += [f"only in source: {n}" for n in only_src]
        problems += [f"only in dest: {n}" for n in only_dest]
    else:
        for name, value in src_enc.items():
            if tuple(value.shape) != tuple(dest_enc[name].data.shape):
                problems.append(
                    f"{name}: source shape {tuple(value.shape)} vs "
                    f"dest shape {tuple(dest_enc[name].data.shape)}")
    if problems:
        raise ValueError("encoder transfer mismatch:\n  " + "\n  ".join(problems))
    for name, value in src_enc.items():
        dest_enc[name].data = np.array(value, dtype=dest.dtype)


def compose_rpet(coarse: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """coarse + residual, clamped to [0, 1] for evaluation output."""
    if coarse.shape != residual.shape:
        raise ShapeError(f"coarse shape {coarse.shape} does not match "
                         f"residual shape {residual.shape}")
    return np.clip(coarse + residual, 0.0, 1.0)


def predict_rpet(coarse_net: EncoderDecoderNet,
                 refine_net: EncoderDecoderNet | None,
                 lpet: np.ndarray) -> np.ndarray:
    """Eval-mode reconstruction of a batch (N, 1, H, W) of LPET slices.

    Without a refinement network the clamped coarse prediction is returned.
    """
    coarse = coarse_net.forward(lpet, training=False)
    if refine_net is None:
        return np.clip(coarse, 0.0, 1.0)
    paired = np.concatenate([coarse, lpet], axis=1)
    residual = refine_net.forward(paired, training=False)
    return compose_rpet(coarse, residual)


# ---------------------------------------------------------------------------
# Net-level checkpoints
# ---------------------------------------------------------------------------

def save_net(net: EncoderDecoderNet, stem) -> None:
    meta = {k: str(int(v) if isinstance(v, bool) else v)
            for k, v in asdict(net.config).items()}
    save_checkpoint(stem, [(p.name, p.data) for p in net.tensors()], meta)


def load_net(stem, dtype=np.float32) -> EncoderDecoderNet:
    tensors, meta = load_checkpoint(stem)
    try:
        cfg = EncoderDecoderConfig(
            in_channels=int(meta["in_channels"]),
            base_channels=int(meta["base_channels"]),
            depth=int(meta["depth"]),
            with_classifier=bool(int(meta["with_classifier"])),
            num_classes=int(meta["num_classes"]),
            input_size=int(meta["input_size"]),
        )
    except KeyError as exc:
        raise ValueError(f"checkpoint {stem}: missing config entry {exc}") from exc
    net = EncoderDecoderNet(cfg, seed=0, dtype=dtype)
    net.load_state_dict(tensors)
    return net
