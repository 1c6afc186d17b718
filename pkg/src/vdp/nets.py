"""Encoder-decoder builders, the trainable relight exponent, perceptual embedders, checkpoints."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import torch
import torch.nn as nn
import torch.nn.functional as F

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vdp-modelset"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerDesc:
    kind: Literal["conv", "convT", "maxpool", "upsample"]
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    scale: int = 2
    act: Literal["bn_lrelu", "sigmoid", "none"] = "bn_lrelu"


def _default_encoder(in_ch: int, c) -> tuple[LayerDesc, ...]:
    return (
        LayerDesc("conv", in_ch, c(64)),
        LayerDesc("conv", c(64), c(64)),
        LayerDesc("maxpool", kernel=2, stride=2, padding=0),
        LayerDesc("conv", c(64), c(96)),
        LayerDesc("conv", c(96), c(128)),
        LayerDesc("maxpool", kernel=2, stride=2, padding=0),
        LayerDesc("conv", c(128), c(128)),
        LayerDesc("conv", c(128), c(128)),
        LayerDesc("conv", c(128), c(128)),
        LayerDesc("maxpool", kernel=2, stride=2, padding=0),
        LayerDesc("conv", c(128), c(96), kernel=4, padding=0, act="sigmoid"),
    )


def _default_decoder(out_ch: int, c, final_act: str) -> tuple[LayerDesc, ...]:
    return (
        LayerDesc("convT", c(96), c(128), kernel=4, padding=0),
        LayerDesc("upsample", scale=2),
        LayerDesc("conv", c(128), c(128)),
        LayerDesc("conv", c(128), c(128)),
        LayerDesc("conv", c(128), c(128)),
        LayerDesc("upsample", scale=2),
        LayerDesc("conv", c(128), c(96)),
        LayerDesc("conv", c(96), c(64)),
        LayerDesc("upsample", scale=2),
        LayerDesc("conv", c(64), c(64)),
        LayerDesc("convT", c(64), out_ch, kernel=3, padding=1, act=final_act),
    )


@dataclass(frozen=True)
class NetworkSpec:
    """Layer plan of the skip-free encoder-decoder.

    ``width`` scales every hidden channel count; 1.0 reproduces the published tables.
    """

    in_channels: int = 3
    out_channels: int = 3
    width: float = 1.0
    final_activation: Literal["sigmoid", "none"] = "sigmoid"
    encoder: tuple[LayerDesc, ...] = field(default=())
    decoder: tuple[LayerDesc, ...] = field(default=())

    def __post_init__(self):
        def c(n: int) -> int:
            return max(1, int(round(n * self.width)))

        if not self.encoder:
            object.__setattr__(self, "encoder", _default_encoder(self.in_channels, c))
        if not self.decoder:
            object.__setattr__(self, "decoder", _default_decoder(self.out_channels, c, self.final_activation))

    @property
    def downsample(self) -> int:
        return 2 ** sum(1 for d in self.encoder if d.kind == "maxpool")


def _make_layer(d: LayerDesc) -> list[nn.Module]:
    if d.kind == "maxpool":
        return [nn.MaxPool2d(d.kernel, d.stride, d.padding)]
    if d.kind == "upsample":
        return [nn.Upsample(scale_factor=d.scale, mode="bicubic", align_corners=False)]
    conv_cls = nn.Conv2d if d.kind == "conv" else nn.ConvTranspose2d
    mods: list[nn.Module] = [conv_cls(d.in_ch, d.out_ch, d.kernel, d.stride, d.padding)]
    if d.act == "bn_lrelu":
        mods += [nn.BatchNorm2d(d.out_ch), nn.LeakyReLU(0.2)]
    elif d.act == "sigmoid":
        mods.append(nn.Sigmoid())
    return mods


class EncoderDecoder(nn.Module):
    """Pads inputs up to a size the bottleneck accepts, runs the plan, crops back."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = nn.Sequential(*[m for d in spec.encoder for m in _make_layer(d)])
        self.decoder = nn.Sequential(*[m for d in spec.decoder for m in _make_layer(d)])
        # the valid 4x4 bottleneck conv needs at least 4 cells after downsampling
        self.min_size = spec.downsample * 4

    def padded_size(self, n: int) -> int:
        k = self.spec.downsample
        return max(self.min_size, -(-n // k) * k)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h < 8 or w < 8:
            raise ValueError(f"input must be at least 8x8, got {h}x{w}")
        ph, pw = self.padded_size(h) - h, self.padded_size(w) - w
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "replicate"
            x = F.pad(x, (pw // 2, pw - pw // 2, ph // 2, ph - ph // 2), mode=mode)
        y = self.decoder(self.encoder(x))
        if ph or pw:
            y = y[..., ph // 2: ph // 2 + h, pw // 2: pw // 2 + w]
        return y


def build_network(spec: NetworkSpec) -> EncoderDecoder:
    return EncoderDecoder(spec)


def build_rgbnet(width: float = 1.0) -> EncoderDecoder:
    return build_network(NetworkSpec(3, 3, width))


def build_alphanet(width: float = 1.0, final_activation: str = "sigmoid") -> EncoderDecoder:
    return build_network(NetworkSpec(3, 1, width, final_activation))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class RelightParams(nn.Module):
    """gamma^-1 = sigmoid(logit), so it stays strictly inside (0, 1)."""

    def __init__(self, init_logit: float = 0.0):
        super().__init__()
        self.gamma_inv_logit = nn.Parameter(torch.tensor(float(init_logit)))

    @property
    def gamma_inv(self) -> torch.Tensor:
        return torch.sigmoid(self.gamma_inv_logit)


class ModelSet(nn.Module):
    def __init__(self, rgb_nets, alpha_nets, relight: RelightParams | None = None):
        super().__init__()
        self.rgb_nets = nn.ModuleList(rgb_nets)
        self.alpha_nets = nn.ModuleList(alpha_nets)
        self.relight = relight

    @classmethod
    def for_task(cls, task: str, layers: int = 2, width: float = 1.0) -> "ModelSet":
        if task == "relight":
            return cls([build_rgbnet(width)], [build_alphanet(width)], RelightParams())
        if task == "dehaze":
            return cls([build_rgbnet(width)], [build_alphanet(width)])
        if task == "uvos":
            if layers < 2:
                raise ValueError("layers must be ≥ 2")
            if layers == 2:
                return cls([build_rgbnet(width) for _ in range(2)], [build_alphanet(width)])
            return cls(
                [build_rgbnet(width) for _ in range(layers)],
                [build_alphanet(width, final_activation="none") for _ in range(layers)],
            )
        raise ValueError(f"unknown task {task!r}")


def save_checkpoint(models: ModelSet, path: str | os.PathLike, meta: dict | None = None) -> None:
    """Single-file archive: ``{"format", "version", "meta", "state"}`` written with torch.save."""
    torch.save(
        {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": meta or {}, "state": models.state_dict()},
        path,
    )


def load_checkpoint(models: ModelSet, path: str | os.PathLike) -> dict:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    models.load_state_dict(blob["state"])
    return blob["meta"]


# ---------------------------------------------------------------------------
# perceptual embedders


class PerceptualEmbedder(nn.Module):
    """Frozen feature extractor; ``forward`` returns a list of feature maps."""

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True):
        # frozen extractors never switch to training behaviour
        return super().train(False)


class FallbackEmbedder(PerceptualEmbedder):
    """Random multi-scale conv features with a fixed seed.

    Smooth activations and average pooling keep it differentiable everywhere, which makes
    finite-difference checks meaningful. Runs in the dtype of its input.
    """

    def __init__(self, channels=(8, 16, 32), seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        c_in = 3
        for c in channels:
            bound = 1.0 / (c_in * 9) ** 0.5
            w = (torch.rand(c, c_in, 3, 3, generator=g, dtype=torch.float64) * 2 - 1) * bound * 3
            b = (torch.rand(c, generator=g, dtype=torch.float64) * 2 - 1) * bound
            self.weights.append(nn.Parameter(w))
            self.biases.append(nn.Parameter(b))
            c_in = c
        self.freeze()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if i:
                x = F.avg_pool2d(x, 2)
            x = torch.tanh(F.conv2d(x, w.to(x.dtype), b.to(x.dtype), padding=1))
            feats.append(x)
        return feats


class VGGEmbedder(PerceptualEmbedder):
    """ImageNet VGG-16 activations after blocks 1-3 (relu1_2, relu2_2, relu3_3)."""

    TAPS = (3, 8, 15)
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, state_dict: dict):
        super().__init__()
        from torchvision.models import vgg16

        features = vgg16(weights=None).features
        if any(k.startswith("features.") for k in state_dict):
            state_dict = {k[len("features."):]: v for k, v in state_dict.items() if k.startswith("features.")}
        features.load_state_dict(state_dict)
        self.features = features[: self.TAPS[-1] + 1]
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))
        self.freeze()

    def forward(self, x):
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        feats = []
        for i, layer in enumerate(self.features):
            if isinstance(layer, (nn.Conv2d,)):
                x = F.conv2d(x, layer.weight.to(x.dtype), layer.bias.to(x.dtype), layer.stride, layer.padding)
            else:
                x = layer(x)
            if i in self.TAPS:
                feats.append(x)
        return feats


def make_embedder(kind: str = "pretrained", weights_path: str | None = None) -> PerceptualEmbedder:
    """``pretrained`` loads VGG-16 weights from ``weights_path`` or $VDP_EMBEDDER_WEIGHTS and falls
    back to the seeded random embedder (with a notice) when neither is available."""
    if kind == "fallback":
        return FallbackEmbedder()
    if kind != "pretrained":
        raise ValueError(f"unknown embedder {kind!r}")
    path = weights_path or os.environ.get("VDP_EMBEDDER_WEIGHTS")
    if not path:
        log.warning("VDP_EMBEDDER_WEIGHTS not set; using the fallback random-feature embedder")
        return FallbackEmbedder()
    state = torch.load(Path(path), map_location="cpu", weights_only=True)
    return VGGEmbedder(state)


def embed(embedder: PerceptualEmbedder, frames: torch.Tensor) -> list[torch.Tensor]:
    """Features of (N, 3, H, W) frames; (3, H, W) or (H, W, 3) single frames are accepted too."""
    if frames.ndim == 3:
        if frames.shape[-1] == 3 and frames.shape[0] != 3:
            frames = frames.permute(2, 0, 1)
        frames = frames[None]
    return embedder(frames)
