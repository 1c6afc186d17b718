"""Frame / sequence / mask value types and PNG frame-directory IO."""

from __future__ import annotations

import glob as _glob
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

MIN_SIZE = 8
MASK_SUM_TOL = 1e-5


class InsufficientFramesError(ValueError):
    pass


class ResolutionMismatchError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def _check_unit_range(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError(f"{what} values must lie in [0, 1], got [{a.min():.4g}, {a.max():.4g}]")


@dataclass(frozen=True, eq=False)
class Frame:
    """An H x W x 3 image with unit-range intensities."""

    pixels: np.ndarray

    def __post_init__(self):
        a = _frozen(self.pixels)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"frame must be H x W x 3, got shape {a.shape}")
        if a.shape[0] < MIN_SIZE or a.shape[1] < MIN_SIZE:
            raise ValueError(f"frame must be at least {MIN_SIZE}x{MIN_SIZE}, got {a.shape[0]}x{a.shape[1]}")
        _check_unit_range(a, "frame")
        object.__setattr__(self, "pixels", a)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class VideoSequence:
    """T >= 2 frames of identical resolution, stored as a (T, H, W, 3) array."""

    pixels: np.ndarray

    def __post_init__(self):
        a = _frozen(self.pixels)
        if a.ndim != 4 or a.shape[3] != 3:
            raise ValueError(f"sequence must be T x H x W x 3, got shape {a.shape}")
        if a.shape[0] < 2:
            raise InsufficientFramesError(f"insufficient frames: need at least 2, got {a.shape[0]}")
        if a.shape[1] < MIN_SIZE or a.shape[2] < MIN_SIZE:
            raise ValueError(f"frames must be at least {MIN_SIZE}x{MIN_SIZE}")
        _check_unit_range(a, "sequence")
        object.__setattr__(self, "pixels", a)

    @classmethod
    def from_frames(cls, frames: Sequence[Frame | np.ndarray]) -> "VideoSequence":
        arrays = [f.pixels if isinstance(f, Frame) else np.asarray(f) for f in frames]
        if len(arrays) < 2:
            raise InsufficientFramesError(f"insufficient frames: need at least 2, got {len(arrays)}")
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise ResolutionMismatchError(f"resolution mismatch: {sorted(shapes)}")
        return cls(np.stack(arrays))

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, t: int) -> Frame:
        return Frame(self.pixels[t])

    def __iter__(self) -> Iterator[Frame]:
        return (Frame(p) for p in self.pixels)

    @property
    def frames(self) -> list[Frame]:
        return list(self)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True, eq=False)
class OpacityMap:
    """H x W opacity / transmission values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        a = _frozen(self.values)
        if a.ndim == 3 and a.shape[2] == 1:
            a = _frozen(a[..., 0])
        if a.ndim != 2:
            raise ValueError(f"opacity map must be H x W, got shape {a.shape}")
        _check_unit_range(a, "opacity map")
        object.__setattr__(self, "values", a)


@dataclass(frozen=True, eq=False)
class MaskStack:
    """L >= 2 opacity maps for one timestep that partition unity per pixel."""

    maps: np.ndarray  # (L, H, W)

    def __post_init__(self):
        a = _frozen(self.maps)
        if a.ndim != 3 or a.shape[0] < 2:
            raise ValueError(f"mask stack must be L x H x W with L >= 2, got shape {a.shape}")
        _check_unit_range(a, "mask stack")
        err = np.abs(a.sum(axis=0) - 1.0).max()
        if err > MASK_SUM_TOL:
            raise ValueError(f"masks must sum to one per pixel (max deviation {err:.3g})")
        object.__setattr__(self, "maps", a)

    @property
    def L(self) -> int:
        return self.maps.shape[0]

    @classmethod
    def from_foreground(cls, m: np.ndarray) -> "MaskStack":
        m = np.asarray(m, dtype=np.float64)
        return cls(np.stack([m, 1.0 - m]))


def to_uint8(a: np.ndarray) -> np.ndarray:
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read an image as float64 in [0, 1]; grayscale stays 2-D, anything else becomes RGB."""
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I", "F", "1"):
                a = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                a = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return a / 255.0


def write_image(path: str | os.PathLike, a: np.ndarray) -> None:
    a = np.asarray(a)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    Image.fromarray(to_uint8(a)).save(path)


def list_frames(directory: str | os.PathLike, pattern: str = "*.png") -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such frame directory: {d}")
    return sorted(Path(p) for p in _glob.glob(str(d / pattern)))


def load_frame_sequence(directory: str | os.PathLike, pattern: str = "*.png") -> VideoSequence:
    """Load lexicographically ordered image files as a unit-range sequence."""
    paths = list_frames(directory, pattern)
    if len(paths) < 2:
        raise InsufficientFramesError(f"insufficient frames in {directory}: found {len(paths)}, need 2")
    frames = []
    for p in paths:
        a = read_image(p)
        if a.ndim == 2:
            a = np.repeat(a[..., None], 3, axis=2)
        frames.append(a)
    shapes = {a.shape for a in frames}
    if len(shapes) != 1:
        raise ResolutionMismatchError(f"resolution mismatch in {directory}: {sorted(s[:2] for s in shapes)}")
    return VideoSequence(np.stack(frames))


def save_frame_sequence(seq: VideoSequence, directory: str | os.PathLike) -> list[Path]:
    if not isinstance(seq, VideoSequence):
        seq = VideoSequence.from_frames(seq)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(seq.pixels):
        p = d / f"{t:05d}.png"
        write_image(p, frame)
        paths.append(p)
    return paths


def load_masks(directory: str | os.PathLike, pattern: str = "*.png") -> np.ndarray:
    """Binary masks (T, H, W) from grayscale PNGs, thresholded at mid-gray."""
    paths = list_frames(directory, pattern)
    if not paths:
        raise InsufficientFramesError(f"no mask files in {directory}")
    masks = []
    for p in paths:
        a = read_image(p)
        if a.ndim == 3:
            a = a.mean(axis=2)
        masks.append(a >= 0.5)
    return np.stack(masks)


def save_gray_sequence(maps: np.ndarray, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(np.asarray(maps, dtype=np.float64)):
        write_image(d / f"{t:05d}.png", m)
