"""Synthetic scenes with known answers: moving textured sprites, gamma darkening, haze."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from vdp.flow import FlowField
from vdp.video import MaskStack, OpacityMap, VideoSequence

RGB = tuple[float, float, float]


class TrajectoryError(ValueError):
    pass


class Texture:
    """Periodic multi-octave value noise, evaluable at any real coordinate.

    Colors interpolate per channel between ``lo`` and ``hi``.
    """

    def __init__(self, rng: np.random.Generator, lo: RGB, hi: RGB, cells=(12.0, 5.0), period: int = 32):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.cells = tuple(cells)
        self.lattices = [rng.random((period, period, 3)) for _ in cells]
        self.amps = np.array([0.5 ** i for i in range(len(cells))])

    @staticmethod
    def _octave(lattice: np.ndarray, x: np.ndarray, y: np.ndarray, cell: float) -> np.ndarray:
        n = lattice.shape[0]
        u, v = x / cell, y / cell
        i0, j0 = np.floor(u), np.floor(v)
        fu, fv = u - i0, v - j0
        fu = fu * fu * (3 - 2 * fu)
        fv = fv * fv * (3 - 2 * fv)
        i0 = i0.astype(int) % n
        j0 = j0.astype(int) % n
        i1, j1 = (i0 + 1) % n, (j0 + 1) % n
        fu, fv = fu[..., None], fv[..., None]
        top = lattice[j0, i0] * (1 - fu) + lattice[j0, i1] * fu
        bot = lattice[j1, i0] * (1 - fu) + lattice[j1, i1] * fu
        return top * (1 - fv) + bot * fv

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        acc = sum(a * self._octave(l, x, y, c) for a, l, c in zip(self.amps, self.lattices, self.cells))
        acc = acc / self.amps.sum()
        return self.lo + (self.hi - self.lo) * acc


@dataclass
class SpriteSpec:
    """An elliptical (or rectangular) textured sprite; ``center`` is (x, y) at t = 0."""

    center: tuple[float, float]
    radii: tuple[float, float] = (10.0, 10.0)
    shape: str = "ellipse"
    lo: RGB = (0.6, 0.3, 0.2)
    hi: RGB = (0.95, 0.7, 0.5)


@dataclass
class MotionSpec:
    """Per-frame displacements (du, dv) for each sprite and for the background."""

    sprites: Sequence[tuple[float, float]] = ((2.0, 0.0),)
    background: tuple[float, float] = (0.5, 0.25)


@dataclass
class SpriteScene:
    seq: VideoSequence
    flows: list[FlowField]
    backward_flows: list[FlowField]
    masks: list[MaskStack]
    params: dict = field(default_factory=dict)

    def foreground(self) -> np.ndarray:
        """(T, H, W) bool union of all sprite masks."""
        return np.stack([m.maps[:-1].sum(axis=0) > 0.5 for m in self.masks])


BG_LO: RGB = (0.2, 0.4, 0.55)
BG_HI: RGB = (0.65, 0.85, 1.0)
# lighter backdrop for haze scenes: the dark-channel airlight estimate needs the haziest
# pixels to be dominated by airlight, which a dark backdrop prevents at t >= 0.3
HAZE_BG: tuple[RGB, RGB] = ((0.35, 0.45, 0.55), (0.9, 0.95, 1.0))


def _inside(spec: SpriteSpec, cx: float, cy: float, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    rx, ry = spec.radii
    if spec.shape == "ellipse":
        return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    if spec.shape == "rect":
        return (np.abs(xs - cx) <= rx) & (np.abs(ys - cy) <= ry)
    raise ValueError(f"unknown sprite shape {spec.shape!r}")


def gen_sprite_sequence(T: int, H: int, W: int, sprite_spec: Sequence[SpriteSpec] | SpriteSpec,
                        motion_spec: MotionSpec, seed: int = 0,
                        bg_colors: tuple[RGB, RGB] = (BG_LO, BG_HI)) -> SpriteScene:
    """Render K sprites over a drifting background with exact flows and layer masks.

    Mask layers are ordered sprites first (in the order given, later ones drawn on top),
    background last.
    """
    sprites = [sprite_spec] if isinstance(sprite_spec, SpriteSpec) else list(sprite_spec)
    vel = [tuple(map(float, v)) for v in motion_spec.sprites]
    if len(vel) != len(sprites):
        raise ValueError(f"{len(sprites)} sprites but {len(vel)} sprite motions")
    if T < 2:
        raise ValueError("need at least two frames")
    bg_v = tuple(map(float, motion_spec.background))

    for k, (s, v) in enumerate(zip(sprites, vel)):
        for t in (0, T - 1):
            cx, cy = s.center[0] + v[0] * t, s.center[1] + v[1] * t
            if cx - s.radii[0] < 0 or cy - s.radii[1] < 0 or cx + s.radii[0] > W - 1 or cy + s.radii[1] > H - 1:
                raise TrajectoryError(f"sprite {k} leaves the {W}x{H} frame at t={t}")

    rng = np.random.default_rng(seed)
    bg_tex = Texture(rng, *bg_colors, cells=(14.0, 6.0))
    tex = [Texture(rng, s.lo, s.hi, cells=(8.0, 4.0)) for s in sprites]

    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    frames, labels = [], []
    for t in range(T):
        img = bg_tex(xs - bg_v[0] * t, ys - bg_v[1] * t)
        label = np.full((H, W), len(sprites), dtype=int)
        for k, (s, v) in enumerate(zip(sprites, vel)):
            cx, cy = s.center[0] + v[0] * t, s.center[1] + v[1] * t
            inside = _inside(s, cx, cy, xs, ys)
            img[inside] = tex[k](xs - cx, ys - cy)[inside]
            label[inside] = k
        frames.append(np.clip(img, 0.0, 1.0))
        labels.append(label)

    all_v = np.array(vel + [bg_v])  # (K+1, 2)
    flows = [FlowField(all_v[labels[t], 0], all_v[labels[t], 1]) for t in range(T - 1)]
    backward = [FlowField(-all_v[labels[t + 1], 0], -all_v[labels[t + 1], 1]) for t in range(T - 1)]
    K = len(sprites)
    masks = [MaskStack(np.stack([(lab == k).astype(np.float64) for k in range(K + 1)])) for lab in labels]
    params = {
        "kind": "sprites", "T": T, "H": H, "W": W, "seed": seed,
        "sprites": [{"center": list(s.center), "radii": list(s.radii), "shape": s.shape, "velocity": list(v)}
                    for s, v in zip(sprites, vel)],
        "background_velocity": list(bg_v),
    }
    return SpriteScene(VideoSequence(np.stack(frames)), flows, backward, masks, params)


def default_scene(T: int = 8, H: int = 64, W: int = 64, seed: int = 0, velocity=(2.0, 0.0),
                  background=(0.5, 0.25), radii=(12.0, 12.0), **kw) -> SpriteScene:
    """One sprite crossing the frame horizontally, centred vertically."""
    span = velocity[0] * (T - 1)
    cx = (W - 1) / 2 - span / 2
    cy = (H - 1) / 2 - velocity[1] * (T - 1) / 2
    return gen_sprite_sequence(T, H, W, SpriteSpec((cx, cy), radii), MotionSpec([velocity], background), seed, **kw)


def two_sprite_scene(T: int = 8, H: int = 64, W: int = 64, seed: int = 0) -> SpriteScene:
    specs = [
        SpriteSpec((16.0, 18.0), (9.0, 9.0)),
        SpriteSpec((46.0, 44.0), (9.0, 9.0), lo=(0.2, 0.55, 0.2), hi=(0.5, 0.95, 0.45)),
    ]
    motion = MotionSpec([(1.5, 0.5), (-1.5, -0.5)], (0.25, 0.0))
    return gen_sprite_sequence(T, H, W, specs, motion, seed)


# ---------------------------------------------------------------------------
# degradations


def _per_pixel(a, seq: VideoSequence) -> np.ndarray:
    """Broadcast a scalar, an (H, W) map, an OpacityMap, or a (T, H, W) stack to (T, H, W, 1)."""
    if isinstance(a, OpacityMap):
        a = a.values
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return np.full((len(seq), seq.height, seq.width, 1), float(a))
    if a.ndim == 2:
        return np.broadcast_to(a[None, ..., None], (len(seq), seq.height, seq.width, 1))
    if a.ndim == 3:
        return a[..., None]
    raise ValueError(f"cannot broadcast array of shape {a.shape} over the sequence")


def gen_dark_sequence(clean: VideoSequence, gamma: float, A=1.0) -> VideoSequence:
    """X_dark = A * X_clean ** gamma."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    a = _per_pixel(A, clean)
    if a.min() <= 0 or a.max() > 1:
        raise ValueError("A must lie in (0, 1]")
    return VideoSequence(a * clean.pixels ** gamma)


def make_tmap(kind: str, H: int, W: int, hi: float = 1.0, lo: float = 0.3, value: float = 0.5) -> np.ndarray:
    """(H, W) transmission map: ``constant`` (value), ``linear_ramp`` (hi at the top row to lo at the
    bottom row) or ``radial`` (hi at the centre to lo at the corners)."""
    if kind == "constant":
        t = np.full((H, W), float(value))
    elif kind == "linear_ramp":
        t = np.repeat(np.linspace(hi, lo, H)[:, None], W, axis=1)
    elif kind == "radial":
        ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
        r = np.hypot(xs - (W - 1) / 2, ys - (H - 1) / 2)
        t = hi + (lo - hi) * r / r.max()
    else:
        raise ValueError(f"unknown tmap kind {kind!r}")
    return t


def gen_hazy_sequence(clean: VideoSequence, tmap_spec, A: RGB = (0.8, 0.8, 0.8)):
    """X_hazy = t * clean + (1 - t) * A. ``tmap_spec`` is a kind name, a dict of ``make_tmap``
    arguments, or an explicit (H, W) / (T, H, W) array. Returns (hazy sequence, (T, H, W) tmaps)."""
    if isinstance(tmap_spec, str):
        tmap = make_tmap(tmap_spec, clean.height, clean.width)
    elif isinstance(tmap_spec, dict):
        tmap = make_tmap(H=clean.height, W=clean.width, **tmap_spec)
    else:
        tmap = np.asarray(tmap_spec, dtype=np.float64)
    t = _per_pixel(tmap, clean)
    if t.min() <= 0 or t.max() > 1:
        raise ValueError("transmission values must lie in (0, 1]")
    a = np.asarray(A, dtype=np.float64).reshape(1, 1, 1, 3)
    hazy = t * clean.pixels + (1 - t) * a
    return VideoSequence(hazy), np.array(t[..., 0])
