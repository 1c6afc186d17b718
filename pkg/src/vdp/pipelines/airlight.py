"""Airlight (ambient scattered light) estimation for the haze model."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import minimum_filter

from vdp.video import VideoSequence, read_image

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AirlightMap:
    """Per-frame airlight; stored as one color per frame, broadcast over the frame."""

    colors: np.ndarray  # (T, 3)

    def __post_init__(self):
        c = np.array(self.colors, dtype=np.float64)
        if c.ndim == 1:
            c = c[None]
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError(f"airlight colors must be (T, 3), got {c.shape}")
        if c.min() < 0 or c.max() > 1:
            raise ValueError("airlight values must lie in [0, 1]")
        c.flags.writeable = False
        object.__setattr__(self, "colors", c)

    @classmethod
    def constant(cls, color, T: int) -> "AirlightMap":
        return cls(np.repeat(np.asarray(color, dtype=np.float64).reshape(1, 3), T, axis=0))

    @property
    def color(self) -> np.ndarray:
        return np.median(self.colors, axis=0)

    def frames(self, H: int, W: int) -> np.ndarray:
        return np.broadcast_to(self.colors[:, None, None, :], (len(self.colors), H, W, 3)).copy()


def dark_channel(frame: np.ndarray, patch: int = 15) -> np.ndarray:
    return minimum_filter(frame.min(axis=2), size=patch, mode="nearest")


def estimate_frame_airlight(frame: np.ndarray, patch: int = 15, top: float = 0.001) -> np.ndarray | None:
    dc = dark_channel(frame, patch).ravel()
    n = max(int(np.floor(dc.size * top)), 1)
    idx = np.argsort(-dc, kind="stable")[:n]
    color = frame.reshape(-1, 3)[idx].mean(axis=0)
    if not np.any(color > 0):
        return None
    return color


def estimate_airlight(seq: VideoSequence, patch: int = 15, top: float = 0.001) -> AirlightMap:
    """Mean color of the brightest ``top`` fraction of dark-channel pixels per frame, then a
    temporal median; the same color is used for every frame."""
    colors = []
    for frame in seq.pixels:
        c = estimate_frame_airlight(frame, patch, top)
        if c is not None:
            colors.append(c)
    if not colors:
        log.warning("all frames are black; falling back to white airlight")
        color = np.ones(3)
    else:
        color = np.median(np.stack(colors), axis=0)
    return AirlightMap.constant(np.clip(color, 0.0, 1.0), len(seq))


def load_airlight(path, T: int) -> AirlightMap:
    """A JSON list ``[r, g, b]`` (or ``{"airlight": [...]}``), or an image whose mean color is used."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        data = json.loads(p.read_text())
        if isinstance(data, dict):
            data = data["airlight"]
        return AirlightMap.constant(data, T)
    img = read_image(p)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return AirlightMap.constant(img.reshape(-1, 3).mean(axis=0), T)
