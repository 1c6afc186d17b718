"""Carry an edited keyframe through a video with flow warping and segmentation masks."""

from __future__ import annotations

import warnings
from typing import Literal, Sequence

import numpy as np
import torch

from vdp.flow import FlowField, WarpMode, flows_tensor, warp_previous
from vdp.video import Frame, VideoSequence


def propagate_edit(edited: Frame, key_index: int, seq: VideoSequence, flows: Sequence[FlowField],
                   masks: np.ndarray, region: Literal["foreground", "background"] = "background",
                   warp_mode: WarpMode = "sample_forward_flow",
                   backward_flows: Sequence[FlowField] | None = None) -> VideoSequence:
    """Sequentially warp the edited keyframe forward and re-composite with the original frames.

    ``masks`` are binary foreground masks (T, H, W). For ``region="background"`` the edit lives
    outside the mask: X_hat = M * X + (1 - M) * warped. For ``region="foreground"`` the roles swap.
    Frames before ``key_index`` are returned unchanged.
    """
    T = len(seq)
    if not 0 <= key_index < T:
        raise ValueError(f"key_index {key_index} outside [0, {T})")
    edited_px = edited.pixels if isinstance(edited, Frame) else np.asarray(edited, dtype=np.float64)
    if edited_px.shape != seq.pixels.shape[1:]:
        raise ValueError(f"edited frame {edited_px.shape} does not match sequence frames {seq.pixels.shape[1:]}")
    if len(flows) != T - 1:
        raise ValueError(f"flow/frame count mismatch: {len(flows)} flows for {T} frames")
    masks = np.asarray(masks)
    if masks.shape != (T, seq.height, seq.width):
        raise ValueError(f"masks must be (T, H, W) = {(T, seq.height, seq.width)}, got {masks.shape}")
    if region not in ("foreground", "background"):
        raise ValueError(f"region must be foreground or background, got {region!r}")
    if key_index != 0:
        warnings.warn("only forward flows are used; frames before the keyframe are left unedited "
                      "(propagating backwards needs reverse-direction flows)", stacklevel=2)

    if warp_mode == "sample_backward_flow":
        if backward_flows is None:
            raise ValueError("warp_mode sample_backward_flow needs backward flows")
        ft = flows_tensor(backward_flows, torch.float64)
    else:
        ft = flows_tensor(flows, torch.float64)

    m = masks.astype(np.float64)[..., None]
    keep = m if region == "background" else 1.0 - m  # weight on the original frame
    out = np.array(seq.pixels, copy=True)
    out[key_index] = edited_px
    current = torch.from_numpy(np.array(edited_px)).permute(2, 0, 1)[None]
    for t in range(key_index, T - 1):
        warped = warp_previous(current, ft[t:t + 1], warp_mode)[0].permute(1, 2, 0).numpy()
        nxt = keep[t + 1] * seq.pixels[t + 1] + (1.0 - keep[t + 1]) * warped
        out[t + 1] = nxt
        current = torch.from_numpy(np.array(nxt)).permute(2, 0, 1)[None]
    return VideoSequence(np.clip(out, 0.0, 1.0))
