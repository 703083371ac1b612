"""The multitask translation network.

One shared encoder feeds two decoders: the PET decoder recovers
resolution through gated skip connections, while the ASL decoder sees
only the bottleneck — no skips — which forces the encoder to carry the
perfusion content itself. Dense blocks of (conv3x3, BN, ReLU) follow the
layout given per level, with a 1x1 transition conv back to the level
width. Channel attention gates on the skips and a spatial residual
attention gate are both optional per configuration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .datasets import Batch
from .errors import ConfigError, ShapeMismatch

GATE_REDUCTION = 4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches for one ablation arm."""

    multitask: bool = True
    use_t1: bool = True
    use_residual_attention: bool = True
    use_disentanglement_attention: bool = True
    dense_layout: tuple[int, ...] = (1, 3, 5, 3, 1)
    base_channels: int = 16

    def __post_init__(self):
        layout = tuple(self.dense_layout)
        object.__setattr__(self, "dense_layout", layout)
        if len(layout) < 3 or len(layout) % 2 == 0:
            raise ConfigError("dense_layout must have odd length >= 3")
        if any(n < 1 for n in layout):
            raise ConfigError("dense_layout entries must be >= 1")
        if self.base_channels < GATE_REDUCTION:
            raise ConfigError(f"base_channels must be >= {GATE_REDUCTION}")
        if not self.multitask and self.use_residual_attention:
            raise ConfigError(
                "residual attention needs the ASL reconstruction; "
                "not applicable to single-task networks"
            )

    @property
    def levels(self) -> int:
        return (len(self.dense_layout) + 1) // 2

    @property
    def n_down(self) -> int:
        return self.levels - 1

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2**l for l in range(self.levels))

    @property
    def input_channels(self) -> int:
        return (1 + int(self.use_t1)) * (1 + int(self.use_residual_attention))

    @property
    def label(self) -> str:
        task = "M" if self.multitask else "S"
        return (
            f"{task}"
            f"{'+' if self.use_t1 else '-'}T1"
            f"{'+' if self.use_residual_attention else '-'}RA"
            f"{'+' if self.use_disentanglement_attention else '-'}DA"
        )

    def to_dict(self) -> dict:
        return {
            "multitask": self.multitask,
            "use_t1": self.use_t1,
            "use_residual_attention": self.use_residual_attention,
            "use_disentanglement_attention": self.use_disentanglement_attention,
            "dense_layout": list(self.dense_layout),
            "base_channels": self.base_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["dense_layout"] = tuple(d["dense_layout"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class ForwardResult:
    pet_pred: torch.Tensor | None       # (B, H, W)
    asl_recon: torch.Tensor | None      # (B, H, W), multitask only
    residual_mask: torch.Tensor | None  # (B, H, W) in [0, 1], +RA only


class _ConvBNReLU(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class DenseBlock(nn.Module):
    """n layers of conv-BN-ReLU with dense connectivity, then a 1x1 transition."""

    def __init__(self, in_ch: int, width: int, n_layers: int):
        super().__init__()
        self.layers = nn.ModuleList(
            _ConvBNReLU(in_ch + i * width, width) for i in range(n_layers)
        )
        self.transition = nn.Conv2d(in_ch + n_layers * width, width, 1)

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(torch.cat(feats, dim=1)))
        return self.transition(torch.cat(feats, dim=1))


class ChannelGate(nn.Module):
    """Channel attention for skip features: pool, bottleneck transform, sigmoid."""

    def __init__(self, channels: int, reduction: int = GATE_REDUCTION):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = nn.Linear(channels, hidden)
        self.excite = nn.Linear(hidden, channels)

    def scales(self, features: torch.Tensor) -> torch.Tensor:
        pooled = features.mean(dim=(2, 3))
        return torch.sigmoid(self.excite(F.relu(self.squeeze(pooled))))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 4:
            raise ShapeMismatch(f"expected (B, C, H, W), got {tuple(features.shape)}")
        s = self.scales(features)
        return features * s[:, :, None, None]


class SpatialGate(nn.Module):
    """Residual attention: map |asl_in - asl_recon| to a [0, 1] mask.

    A 1x1 conv plus sigmoid, rescaled per slice so the mask peaks at 1
    whenever the residual is nonzero. The mask never enters the loss and
    is detached before being re-fed, so these weights keep their
    deterministic init (positive, so larger residual means stronger
    attention); they stay registered as ordinary trainable parameters.
    """

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, 1, 1)
        with torch.no_grad():
            self.conv.weight.fill_(1.0)
            self.conv.bias.zero_()

    def forward(self, asl_in: torch.Tensor, asl_recon: torch.Tensor) -> torch.Tensor:
        if asl_in.shape != asl_recon.shape:
            raise ShapeMismatch(f"{tuple(asl_in.shape)} vs {tuple(asl_recon.shape)}")
        residual = (asl_in - asl_recon).abs().unsqueeze(1)
        s = torch.sigmoid(self.conv(residual))
        r_max = residual.amax(dim=(2, 3), keepdim=True)
        s_max = s.amax(dim=(2, 3), keepdim=True)
        mask = torch.where(r_max > 0, s / s_max, s)
        return mask.squeeze(1)


class _Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        widths = cfg.widths
        blocks = []
        in_ch = cfg.input_channels
        for l in range(cfg.levels - 1):
            blocks.append(DenseBlock(in_ch, widths[l], cfg.dense_layout[l]))
            in_ch = widths[l]
        self.blocks = nn.ModuleList(blocks)
        self.bottleneck = DenseBlock(in_ch, widths[-1], cfg.dense_layout[cfg.levels - 1])
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        skips = []
        h = x
        for block in self.blocks:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        return self.bottleneck(h), skips


class _Decoder(nn.Module):
    """Upsampling branch; ``use_skips`` selects the PET (skips) or ASL (none) wiring."""

    def __init__(self, cfg: ModelConfig, use_skips: bool):
        super().__init__()
        self.use_skips = use_skips
        widths = cfg.widths
        ups, blocks = [], []
        for i, l in enumerate(reversed(range(cfg.levels - 1))):
            ups.append(nn.Conv2d(widths[l + 1], widths[l], 3, padding=1))
            block_in = widths[l] * (2 if use_skips else 1)
            blocks.append(DenseBlock(block_in, widths[l], cfg.dense_layout[cfg.levels + i]))
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, bottleneck, skips=None):
        h = bottleneck
        levels = list(reversed(range(len(self.ups))))
        for i, l in enumerate(levels):
            h = self.ups[i](F.interpolate(h, scale_factor=2, mode="nearest"))
            if self.use_skips:
                h = torch.cat([h, skips[l]], dim=1)
            h = self.blocks[i](h)
        return torch.sigmoid(self.head(h)).squeeze(1)


class TranslationNet(nn.Module):
    """Encoder plus PET/ASL decoders per the configuration.

    Parameters partition into the groups encoder / pet_decoder /
    asl_decoder / gates by top-level submodule.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = _Encoder(config)
        self.pet_decoder = _Decoder(config, use_skips=True)
        self.asl_decoder = _Decoder(config, use_skips=False) if config.multitask else None
        self.skip_gates = (
            nn.ModuleList(ChannelGate(config.widths[l]) for l in range(config.levels - 1))
            if config.use_disentanglement_attention
            else None
        )
        self.residual_gate = SpatialGate() if config.use_residual_attention else None

    def skip_edges(self) -> list:
        """Topology audit: every skip edge terminates in the PET decoder."""
        return [(l, "pet_decoder") for l in range(self.config.levels - 1)]

    def decoder_input_arity(self, decoder: str) -> int:
        """Number of distinct feature inputs a decoder consumes."""
        if decoder == "pet_decoder":
            return 1 + len(self.skip_edges())
        if decoder == "asl_decoder":
            return 1  # bottleneck only
        raise ValueError(decoder)

    def parameter_groups(self) -> dict:
        groups = {"encoder": [], "pet_decoder": [], "asl_decoder": [], "gates": []}
        prefix_map = {
            "encoder": "encoder",
            "pet_decoder": "pet_decoder",
            "asl_decoder": "asl_decoder",
            "skip_gates": "gates",
            "residual_gate": "gates",
        }
        for name, param in self.named_parameters():
            top = name.split(".", 1)[0]
            groups[prefix_map[top]].append((name, param))
        return groups


def build(config: ModelConfig, seed: int) -> TranslationNet:
    """Construct a network with deterministic seed-derived initialization."""
    torch.manual_seed(seed)
    return TranslationNet(config)


def assemble_inputs(net: TranslationNet, batch: Batch, mask: torch.Tensor | None) -> torch.Tensor:
    """Stack the input channels: [a, a*M] plus [t, t*M] per configuration."""
    cfg = net.config
    a = batch.asl
    h, w = a.shape[-2:]
    div = 2**cfg.n_down
    if h % div or w % div:
        raise ShapeMismatch(f"input dims {h}x{w} must be multiples of {div}")
    channels = [a]
    if cfg.use_residual_attention:
        if mask is None:
            mask = torch.ones_like(a)
        if mask.shape != a.shape:
            raise ShapeMismatch(f"mask {tuple(mask.shape)} vs batch {tuple(a.shape)}")
        m = mask.detach()
        if float(m.min()) < 0.0 or float(m.max()) > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        channels.append(a * mask)
        if cfg.use_t1:
            channels.extend([batch.t1, batch.t1 * mask])
    elif cfg.use_t1:
        channels.append(batch.t1)
    return torch.stack(channels, dim=1)


def forward(
    net: TranslationNet,
    batch: Batch,
    mask: torch.Tensor | None = None,
    include_pet: bool = True,
) -> ForwardResult:
    """One forward pass. ``mask`` is ignored for -RA configurations;
    ``include_pet=False`` keeps the PET branch (and its statistics) untouched,
    which the trainer uses on unpaired steps."""
    cfg = net.config
    x = assemble_inputs(net, batch, mask)
    bottleneck, skips = net.encoder(x)

    pet_pred = None
    if include_pet:
        if net.skip_gates is not None:
            skips = [gate(s) for gate, s in zip(net.skip_gates, skips)]
        pet_pred = net.pet_decoder(bottleneck, skips)

    asl_recon = None
    residual_mask = None
    if cfg.multitask:
        asl_recon = net.asl_decoder(bottleneck)
        if net.residual_gate is not None:
            residual_mask = net.residual_gate(batch.asl.to(asl_recon.dtype), asl_recon)
    return ForwardResult(pet_pred=pet_pred, asl_recon=asl_recon, residual_mask=residual_mask)


def predict(net: TranslationNet, batch: Batch) -> ForwardResult:
    """Inference protocol. +RA runs two passes: a uniform-mask pass to get the
    ASL reconstruction and its residual mask, then a masked pass for the final
    outputs, mirroring the coarse/fine training alternation."""
    net.eval()
    with torch.no_grad():
        result = forward(net, batch)
        if net.config.use_residual_attention:
            result = forward(net, batch, mask=result.residual_mask.detach())
    return result
