"""Forward models that turn predicted layers back into an observed frame."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
import torch

from vdp.video import MASK_SUM_TOL, Frame, MaskStack, OpacityMap

RELIGHT_DELTA = 1e-4


def _chw(a) -> torch.Tensor:
    """Frame / OpacityMap / ndarray (H, W[, C]) -> float64 (C, H, W) tensor."""
    if isinstance(a, Frame):
        a = a.pixels
    elif isinstance(a, OpacityMap):
        a = a.values
    if isinstance(a, torch.Tensor):
        return a
    a = np.array(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return torch.from_numpy(a).permute(2, 0, 1)


def _to_frame(t: torch.Tensor) -> Frame:
    return Frame(np.clip(t.detach().permute(1, 2, 0).numpy(), 0.0, 1.0))


def compose_tensor(layers: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """sum_i masks[:, i] * layers[:, i]; layers (N, L, 3, H, W), masks (N, L, H, W)."""
    return (masks.unsqueeze(2) * layers).sum(dim=1)


def compose_layers(layers: Sequence[Frame], masks: MaskStack) -> Frame:
    if isinstance(masks, MaskStack):
        m = masks.maps
    else:
        m = np.asarray(masks, dtype=np.float64)
        err = np.abs(m.sum(axis=0) - 1.0).max()
        if err > MASK_SUM_TOL:
            raise ValueError(f"masks must sum to one per pixel (max deviation {err:.3g})")
    if len(layers) != m.shape[0]:
        raise ValueError(f"{len(layers)} layers but {m.shape[0]} masks")
    lt = torch.stack([_chw(f) for f in layers])[None]
    out = compose_tensor(lt, torch.from_numpy(np.array(m))[None])[0]
    return _to_frame(out)


def relight_tensor(relit: torch.Tensor, tmap: torch.Tensor, gamma_inv: torch.Tensor | float,
                   delta: float = RELIGHT_DELTA) -> torch.Tensor:
    """Predicted dark frame from a relit frame: exp(log(relit) / gamma_inv - log(tmap)),
    i.e. relit ** (1 / gamma_inv) / tmap with tmap standing for 1 / A."""
    if not torch.is_tensor(gamma_inv):
        gamma_inv = torch.tensor(float(gamma_inv), dtype=relit.dtype)
    if bool((tmap <= 0).any()):
        warnings.warn(f"non-positive transmission values clamped to {delta}", stacklevel=2)
    log_relit = torch.log(torch.clamp(relit, min=delta))
    log_t = torch.log(torch.clamp(tmap, min=delta))
    return torch.exp(log_relit / gamma_inv - log_t)


def relight_reconstruct(relit, tmap, gamma_inv: float) -> Frame:
    if not 0.0 < float(gamma_inv) <= 1.0:
        raise ValueError(f"gamma_inv must lie in (0, 1], got {gamma_inv}")
    out = relight_tensor(_chw(relit), _chw(tmap), float(gamma_inv))
    return _to_frame(out)


def dehaze_tensor(clear: torch.Tensor, tmap: torch.Tensor, airlight: torch.Tensor) -> torch.Tensor:
    return tmap * clear + (1.0 - tmap) * airlight


def dehaze_reconstruct(clear, tmap, airlight) -> Frame:
    c, t = _chw(clear), _chw(tmap)
    a = np.asarray(airlight.pixels if isinstance(airlight, Frame) else airlight, dtype=np.float64)
    a = torch.from_numpy(a.reshape(3, 1, 1).copy()) if a.size == 3 else _chw(a)
    if c.shape[-2:] != t.shape[-2:] or (a.ndim == 3 and a.shape[-1] != 1 and a.shape[-2:] != c.shape[-2:]):
        raise ValueError("shape mismatch between clear frame, transmission and airlight")
    return _to_frame(dehaze_tensor(c, t, a))
