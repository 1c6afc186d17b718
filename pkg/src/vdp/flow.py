"""Optical-flow fields: Middlebury .flo IO, color-wheel rendering, and bilinear warping."""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import torch

from vdp.video import Frame, VideoSequence, list_frames, write_image

log = logging.getLogger(__name__)

FLO_SENTINEL = 202021.25

Border = Literal["clamp", "zeros"]
WarpMode = Literal["sample_forward_flow", "sample_backward_flow"]


class FlowCountError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement (du along x / columns, dv along y / rows), in pixels."""

    du: np.ndarray
    dv: np.ndarray

    def __post_init__(self):
        du = np.array(self.du, dtype=np.float64)
        dv = np.array(self.dv, dtype=np.float64)
        if du.ndim != 2 or du.shape != dv.shape:
            raise ValueError(f"du and dv must be equal-shape 2-D grids, got {du.shape} and {dv.shape}")
        if not (np.all(np.isfinite(du)) and np.all(np.isfinite(dv))):
            raise ValueError("flow field contains non-finite values")
        du.flags.writeable = False
        dv.flags.writeable = False
        object.__setattr__(self, "du", du)
        object.__setattr__(self, "dv", dv)

    @property
    def shape(self) -> tuple[int, int]:
        return self.du.shape

    @classmethod
    def zeros(cls, h: int, w: int) -> "FlowField":
        return cls(np.zeros((h, w)), np.zeros((h, w)))

    @classmethod
    def constant(cls, h: int, w: int, du: float, dv: float) -> "FlowField":
        return cls(np.full((h, w), float(du)), np.full((h, w), float(dv)))

    def stacked(self) -> np.ndarray:
        """(H, W, 2) array of (du, dv)."""
        return np.stack([self.du, self.dv], axis=-1)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.du, self.dv)

    def __neg__(self) -> "FlowField":
        return FlowField(-self.du, -self.dv)


# ---------------------------------------------------------------------------
# Middlebury .flo


def read_flo(path: str | os.PathLike) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError(f"corrupt flo: {path} is too short for a header")
    magic = np.frombuffer(data, "<f4", count=1)[0]
    if magic != np.float32(FLO_SENTINEL):
        raise ValueError(f"not a flo file: {path} (sentinel {magic!r})")
    w, h = (int(x) for x in np.frombuffer(data, "<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise ValueError(f"corrupt flo: {path} has invalid size {w}x{h}")
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise ValueError(f"corrupt flo: {path} has {len(data)} bytes, header implies {expected}")
    uv = np.frombuffer(data, "<f4", offset=12).reshape(h, w, 2)
    return FlowField(uv[..., 0], uv[..., 1])


def write_flo(flow: FlowField, path: str | os.PathLike) -> None:
    h, w = flow.shape
    uv = np.stack([flow.du, flow.dv], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(np.array([FLO_SENTINEL], "<f4").tobytes())
        fh.write(np.array([w, h], "<i4").tobytes())
        fh.write(uv.tobytes())


def read_flo_dir(directory: str | os.PathLike) -> list[FlowField]:
    return [read_flo(p) for p in list_frames(directory, "*.flo")]


def write_flo_dir(flows: Sequence[FlowField], directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(flows):
        write_flo(f, d / f"{t:05d}.flo")


# ---------------------------------------------------------------------------
# color wheel


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised HSV -> RGB; hue in degrees [0, 360), s and v in [0, 1]."""
    h = np.mod(np.asarray(h, dtype=np.float64), 360.0) / 60.0
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), h.shape)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), h.shape)
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def flow_to_rgb(flow: FlowField, r_max: float | str = "auto") -> Frame:
    """Hue <- direction, value <- magnitude / r_max (saturating at 1), saturation fixed at 1."""
    r = flow.magnitude()
    if r_max == "auto":
        r_max = max(float(r.max()), 1e-8)
    r_max = float(r_max)
    if not r_max > 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    theta = np.degrees(np.arctan2(flow.dv, flow.du))
    hue = np.mod(theta, 360.0)
    value = np.minimum(r / r_max, 1.0)
    rgb = hsv_to_rgb(hue, 1.0, value)
    return Frame(np.clip(rgb, 0.0, 1.0))


def flows_to_rgb(flows: Sequence[FlowField], r_max: float | str = "auto") -> np.ndarray:
    """Color a whole flow sequence with one shared magnitude scale; returns (N, H, W, 3)."""
    if r_max == "auto":
        r_max = max(max(float(f.magnitude().max()) for f in flows), 1e-8)
    return np.stack([flow_to_rgb(f, r_max).pixels for f in flows])


# ---------------------------------------------------------------------------
# warping


def _as_flow_tensor(flow, like: torch.Tensor) -> torch.Tensor:
    if isinstance(flow, FlowField):
        flow = torch.from_numpy(np.stack([flow.du, flow.dv]))[None]
    elif isinstance(flow, (list, tuple)) and flow and isinstance(flow[0], FlowField):
        flow = torch.from_numpy(np.stack([np.stack([f.du, f.dv]) for f in flow]))
    elif isinstance(flow, np.ndarray):
        flow = torch.from_numpy(flow)
    return flow.to(dtype=like.dtype, device=like.device)


def warp_tensor(src: torch.Tensor, flow: torch.Tensor, border: Border = "clamp") -> torch.Tensor:
    """out[..., y, x] = bilinear sample of src at (x + flow_x, y + flow_y).

    src is (N, C, H, W), flow is (N, 2, H, W) with channel 0 the x displacement. ``clamp``
    clamps sample positions to the image, ``zeros`` treats outside taps as 0. Differentiable in
    both arguments; integer displacements reproduce the source exactly.
    """
    if src.shape[0] != flow.shape[0] or src.shape[-2:] != flow.shape[-2:]:
        raise ValueError(f"resolution mismatch between source {tuple(src.shape)} and flow {tuple(flow.shape)}")
    if border not in ("clamp", "zeros"):
        raise ValueError(f"unknown border mode {border!r}")
    n, c, h, w = src.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=src.dtype, device=src.device),
        torch.arange(w, dtype=src.dtype, device=src.device),
        indexing="ij",
    )
    x = xs + flow[:, 0]
    y = ys + flow[:, 1]
    if border == "clamp":
        x = x.clamp(0, w - 1)
        y = y.clamp(0, h - 1)
    x0 = torch.floor(x).detach()
    y0 = torch.floor(y).detach()
    ax, ay = x - x0, y - y0
    flat = src.reshape(n, c, h * w)
    out = torch.zeros_like(src)
    for xi, yi, wt in ((x0, y0, (1 - ax) * (1 - ay)), (x0 + 1, y0, ax * (1 - ay)),
                       (x0, y0 + 1, (1 - ax) * ay), (x0 + 1, y0 + 1, ax * ay)):
        valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).long().reshape(n, 1, h * w).expand(n, c, h * w)
        tap = flat.gather(2, idx).reshape(n, c, h, w)
        out = out + tap * (wt * valid.to(src.dtype))[:, None]
    return out


def backward_warp(frame: Frame, flow: FlowField, border: Border = "clamp") -> Frame:
    if frame.pixels.shape[:2] != flow.shape:
        raise ValueError(f"resolution mismatch: frame {frame.pixels.shape[:2]} vs flow {flow.shape}")
    src = torch.from_numpy(np.array(frame.pixels)).permute(2, 0, 1)[None]
    out = warp_tensor(src, _as_flow_tensor(flow, src), border)
    return Frame(np.clip(out[0].permute(1, 2, 0).numpy(), 0.0, 1.0))


def warp_previous(prev: torch.Tensor, flow: torch.Tensor, mode: WarpMode = "sample_forward_flow",
                  border: Border = "clamp") -> torch.Tensor:
    """Bring frame t-1 into frame t's geometry.

    ``sample_forward_flow`` takes F_{t-1->t} and samples at p - F(p).
    ``sample_backward_flow`` takes F_{t->t-1} and samples at p + F(p).
    """
    if mode == "sample_forward_flow":
        return warp_tensor(prev, -flow, border)
    if mode == "sample_backward_flow":
        return warp_tensor(prev, flow, border)
    raise ValueError(f"unknown warp mode {mode!r}")


def consistency_mask(fwd: torch.Tensor, bwd: torch.Tensor, threshold: float = 1.0) -> torch.Tensor:
    """1 where forward-backward flow round trip closes within ``threshold`` px, evaluated on the
    target frame's grid; (N, 1, H, W)."""
    # bwd lives on frame t; look up the forward flow at the point bwd maps to
    fwd_at = warp_tensor(fwd, bwd, "clamp")
    err = torch.linalg.vector_norm(fwd_at + bwd, dim=1, keepdim=True)
    return (err <= threshold).to(fwd.dtype)


# ---------------------------------------------------------------------------
# providers


class FlowProvider:
    """Source of forward flows F_{t->t+1} for a sequence."""

    def flows(self, seq: VideoSequence) -> list[FlowField]:
        raise NotImplementedError

    def backward_flows(self, seq: VideoSequence) -> list[FlowField] | None:
        return None


class FileFlowProvider(FlowProvider):
    """Reads ``*.flo`` in lexicographic order; an optional second directory holds F_{t+1->t}."""

    def __init__(self, directory, backward_directory=None):
        self.directory = Path(directory)
        self.backward_directory = Path(backward_directory) if backward_directory else None

    def flows(self, seq):
        return read_flo_dir(self.directory)

    def backward_flows(self, seq):
        if self.backward_directory is None:
            return None
        return read_flo_dir(self.backward_directory)


class SyntheticFlowProvider(FlowProvider):
    """Hands back ground-truth flows emitted by a generator."""

    def __init__(self, forward: Sequence[FlowField], backward: Sequence[FlowField] | None = None):
        self.forward = list(forward)
        self.backward = list(backward) if backward is not None else None

    def flows(self, seq):
        return list(self.forward)

    def backward_flows(self, seq):
        return None if self.backward is None else list(self.backward)


class CommandFlowProvider(FlowProvider):
    """Runs an external estimator once per frame pair.

    ``command`` is a template with ``{src}``, ``{dst}`` and ``{out}`` placeholders; the command must
    write one .flo file at ``{out}``.
    """

    def __init__(self, command: str, workdir=None):
        self.command = command
        self.workdir = workdir

    def flows(self, seq):
        out = []
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            tmp = Path(tmp)
            for t in range(len(seq)):
                write_image(tmp / f"{t:05d}.png", seq.pixels[t])
            for t in range(len(seq) - 1):
                target = tmp / f"{t:05d}.flo"
                cmd = self.command.format(
                    src=shlex.quote(str(tmp / f"{t:05d}.png")),
                    dst=shlex.quote(str(tmp / f"{t + 1:05d}.png")),
                    out=shlex.quote(str(target)),
                )
                log.debug("flow command: %s", cmd)
                subprocess.run(cmd, shell=True, check=True)
                out.append(read_flo(target))
        return out


def provide_flows(provider: FlowProvider, seq: VideoSequence) -> list[FlowField]:
    flows = provider.flows(seq)
    if len(flows) != len(seq) - 1:
        raise FlowCountError(f"flow/frame count mismatch: {len(flows)} flows for {len(seq)} frames (need {len(seq) - 1})")
    for f in flows:
        if f.shape != (seq.height, seq.width):
            raise ValueError(f"resolution mismatch: flow {f.shape} vs frames {(seq.height, seq.width)}")
    return flows


def flows_tensor(flows: Sequence[FlowField], dtype=torch.float32) -> torch.Tensor:
    """(N, 2, H, W) tensor from a list of flow fields."""
    return torch.from_numpy(np.stack([np.stack([f.du, f.dv]) for f in flows])).to(dtype)
