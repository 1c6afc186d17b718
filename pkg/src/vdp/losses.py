"""Differentiable objectives for the decomposition tasks.

All tensors are (N, C, H, W). Every L1 term is an element mean (over frames too) so the
default weights carry over across resolutions and sequence lengths.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import torch

from vdp.flow import WarpMode, warp_previous
from vdp.nets import PerceptualEmbedder

MASK_EPS = 1e-3


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    warp: float = 0.0
    fsim: float = 0.0
    layer: float = 0.0
    mask: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative, got {getattr(self, f.name)}")

    @classmethod
    def for_task(cls, task: str) -> "LossWeights":
        if task == "uvos":
            return cls(rec=1.0, warp=0.01, fsim=0.001, layer=1.0, mask=0.01)
        if task in ("dehaze", "relight"):
            return cls(rec=1.0, warp=0.02)
        raise ValueError(f"unknown task {task!r}")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_same(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same(a, b)
    return (a - b).abs().mean()


def perceptual_l1(x: torch.Tensor, xhat: torch.Tensor, phi: PerceptualEmbedder) -> torch.Tensor:
    return sum((fa - fb).abs().mean() for fa, fb in zip(phi(x), phi(xhat)))


def reconstruction_loss(x: torch.Tensor, xhat: torch.Tensor, phi: PerceptualEmbedder | None) -> torch.Tensor:
    """Pixel L1 plus L1 between embeddings (the embedding term is skipped when ``phi`` is None)."""
    loss = l1(x, xhat)
    if phi is not None:
        loss = loss + perceptual_l1(x, xhat, phi)
    return loss


def warp_loss(seq_o: torch.Tensor, flows: torch.Tensor, warp_mode: WarpMode = "sample_forward_flow",
              weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over consecutive pairs of |warp(X_{t-1}) - X_t|.

    ``flows[t]`` relates frame t and t+1 (forward flow, or backward flow F_{t+1->t} for
    ``sample_backward_flow``). ``weights`` optionally masks pixels, e.g. a consistency mask.
    """
    if flows.shape[0] != seq_o.shape[0] - 1:
        raise ValueError(f"flow count mismatch: {flows.shape[0]} flows for {seq_o.shape[0]} frames")
    if flows.shape[0] == 0:
        return seq_o.sum() * 0.0
    warped = warp_previous(seq_o[:-1], flows.to(seq_o.dtype), warp_mode)
    diff = (warped - seq_o[1:]).abs()
    if weights is not None:
        diff = diff * weights
    return diff.mean()


def _flat_features(feats: Sequence[torch.Tensor]) -> torch.Tensor:
    return torch.cat([f.flatten(1) for f in feats], dim=1)


def flow_similarity_loss(m: torch.Tensor, frgb: torch.Tensor, phi: PerceptualEmbedder,
                         eps: float = 1e-12) -> torch.Tensor:
    """Cosine similarity of the embeddings of the masked and complement-masked flow image,
    averaged over frames. Frames where either embedding has zero norm count as 0."""
    a = _flat_features(phi(m * frgb))
    b = _flat_features(phi((1.0 - m) * frgb))
    na = a.norm(dim=1)
    nb = b.norm(dim=1)
    zero = (na <= eps) | (nb <= eps)
    if bool(zero.any()):
        warnings.warn("zero-norm embedding in flow similarity; treating those frames as uncorrelated", stacklevel=2)
    denom = torch.where(zero, torch.ones_like(na), na * nb)
    cos = torch.where(zero, torch.zeros_like(na), (a * b).sum(dim=1) / denom)
    return cos.mean()


def mask_loss(masks: torch.Tensor, eps: float = MASK_EPS) -> torch.Tensor:
    """Mean of 1 / max(|M - 0.5|, eps) over every layer, frame and pixel."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return (1.0 / torch.clamp((masks - 0.5).abs(), min=eps)).mean()


def layer_loss(m: torch.Tensor, x: torch.Tensor, layer_rgb: torch.Tensor) -> torch.Tensor:
    """Masked L1 between the input frame and one layer's RGB prediction."""
    _check_same(x, layer_rgb)
    return (m * x - m * layer_rgb).abs().mean()


GENERIC_TERMS = ("rec", "warp")
UVOS_TERMS = ("rec", "fsim", "layer", "warp", "mask")


def total_loss(parts: Mapping[str, torch.Tensor | float], w: LossWeights, task: str = "generic"):
    """Weighted sum: rec + warp for the generic objective, all five terms for ``uvos``."""
    terms = UVOS_TERMS if task == "uvos" else GENERIC_TERMS
    total = 0.0
    for name in terms:
        weight = getattr(w, name)
        if weight and name in parts:
            total = total + weight * parts[name]
    return total
