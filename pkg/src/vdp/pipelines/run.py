"""Per-video optimization: fit a ModelSet to one sequence and read out its intermediate layers."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from vdp.flow import FlowField, consistency_mask, flows_tensor, flows_to_rgb
from vdp.losses import (
    flow_similarity_loss,
    layer_loss,
    mask_loss,
    reconstruction_loss,
    total_loss,
    warp_loss,
)
from vdp.nets import ModelSet, PerceptualEmbedder, make_embedder, save_checkpoint
from vdp.pipelines.airlight import AirlightMap, estimate_airlight
from vdp.pipelines.compose import dehaze_tensor, relight_tensor
from vdp.pipelines.config import TaskConfig
from vdp.video import MaskStack, VideoSequence, save_frame_sequence, save_gray_sequence, write_image

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "epoch", "rec", "warp", "fsim", "layer", "mask", "total", "rec_l1", "mask_sum_err", "gamma_inv")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TaskResult:
    task: str
    config: TaskConfig
    reconstruction: VideoSequence
    trace: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    relit: VideoSequence | None = None
    gamma_inv: float | None = None
    clear: VideoSequence | None = None
    airlight: AirlightMap | None = None
    tmaps: np.ndarray | None = None  # (T, H, W)
    masks: list[MaskStack] | None = None
    layers: list[VideoSequence] | None = None
    layer_order: list[int] | None = None
    diverged: bool = False
    diagnostic: str = ""
    models: ModelSet | None = None


def _seq_tensor(seq: VideoSequence) -> torch.Tensor:
    return torch.from_numpy(np.array(seq.pixels, dtype=np.float32)).permute(0, 3, 1, 2).contiguous()


def _to_seq(t: torch.Tensor) -> VideoSequence:
    return VideoSequence(np.clip(t.detach().permute(0, 2, 3, 1).double().numpy(), 0.0, 1.0))


def _alpha_inputs(seq_t: torch.Tensor, flows: Sequence[FlowField], cfg: TaskConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """(alpha-net input, flow-RGB) per frame, both (T, 3, H, W).

    Frame t is paired with F_{t-1 -> t}; frame 0 has no incoming flow and reuses F_{0 -> 1}.
    """
    rgb = torch.from_numpy(flows_to_rgb(flows).astype(np.float32)).permute(0, 3, 1, 2)
    idx = [max(t - 1, 0) for t in range(seq_t.shape[0])]
    frgb = rgb[idx].contiguous()
    if cfg.alpha_input == "flow_rgb":
        return frgb, frgb
    if cfg.alpha_input == "noise":
        g = torch.Generator().manual_seed(cfg.seed + 1)
        return torch.randn(seq_t.shape, generator=g), frgb
    return seq_t.clone(), frgb


def _batches(T: int, size: int) -> list[slice]:
    if size <= 0 or size >= T:
        return [slice(0, T)]
    return [slice(i, min(i + size, T)) for i in range(0, T, size)]


class _Problem:
    """Task-specific forward pass and loss terms over a slice of frames."""

    def __init__(self, cfg, models, x, ain, frgb, flows_t, bwd_t, airlight_t, phi):
        self.cfg, self.models, self.x, self.ain, self.frgb = cfg, models, x, ain, frgb
        self.flows_t, self.bwd_t, self.airlight_t, self.phi = flows_t, bwd_t, airlight_t, phi

    def pair_flows(self, sl: slice) -> torch.Tensor:
        src = self.bwd_t if self.cfg.warp_mode == "sample_backward_flow" else self.flows_t
        return src[sl.start: sl.stop - 1]

    def occlusion_weights(self, sl: slice):
        if not self.cfg.occlusion_mask or self.bwd_t is None:
            return None
        return consistency_mask(self.flows_t[sl.start: sl.stop - 1], self.bwd_t[sl.start: sl.stop - 1])

    def masks(self, ain: torch.Tensor) -> torch.Tensor:
        """(N, L, H, W) opacity stack that sums to one by construction."""
        nets = self.models.alpha_nets
        if len(nets) == 1:
            m = nets[0](ain)
            return torch.cat([m, 1.0 - m], dim=1)
        return torch.softmax(torch.cat([a(ain) for a in nets], dim=1), dim=1)

    def forward(self, sl: slice) -> dict:
        x, ain = self.x[sl], self.ain[sl]
        task = self.cfg.task
        out: dict = {"x": x}
        if task == "relight":
            relit = self.models.rgb_nets[0](x)
            tmap = self.models.alpha_nets[0](ain)
            g = self.models.relight.gamma_inv
            out.update(intermediate=relit, tmap=tmap, gamma_inv=g, xhat=relight_tensor(relit, tmap, g))
        elif task == "dehaze":
            clear = self.models.rgb_nets[0](x)
            tmap = self.models.alpha_nets[0](ain)
            out.update(intermediate=clear, tmap=tmap, xhat=dehaze_tensor(clear, tmap, self.airlight_t[sl]))
        else:
            layers = torch.stack([net(x) for net in self.models.rgb_nets], dim=1)  # (N, L, 3, H, W)
            masks = self.masks(ain)
            xhat = (masks.unsqueeze(2) * layers).sum(dim=1)
            out.update(layers=layers, masks=masks, xhat=xhat)
        return out

    def parts(self, sl: slice, out: dict) -> dict:
        cfg, x, xhat = self.cfg, out["x"], out["xhat"]
        w = cfg.weights
        parts = {"rec": reconstruction_loss(x, xhat, self.phi)}
        flows = self.pair_flows(sl)
        occ = self.occlusion_weights(sl)
        if cfg.task in ("relight", "dehaze"):
            parts["warp"] = warp_loss(out["intermediate"], flows, cfg.warp_mode, occ)
            return parts
        masks, layers = out["masks"], out["layers"]
        L = masks.shape[1]
        frgb = self.frgb[sl]
        wl = warp_loss(xhat, flows, cfg.warp_mode, occ) + warp_loss(layers[:, 0], flows, cfg.warp_mode, occ)
        if cfg.warp_masks:
            wl = wl + warp_loss(masks, flows, cfg.warp_mode, occ)
        parts["warp"] = wl
        if w.fsim:
            # with two complementary layers both directions give the same cosine
            owners = range(1) if L == 2 else range(L)
            parts["fsim"] = sum(flow_similarity_loss(masks[:, i:i + 1], frgb, self.phi) for i in owners) / len(owners)
        target = xhat if cfg.layer_target == "reconstruction" else None
        parts["layer"] = sum(
            layer_loss(masks[:, i:i + 1], x, layers[:, i] if target is None else target) for i in range(L)
        )
        parts["mask"] = mask_loss(masks[:, :1] if L == 2 else masks)
        return parts


def _border_occupancy(m: np.ndarray) -> float:
    return float(np.concatenate([m[:, 0, :], m[:, -1, :], m[:, :, 0], m[:, :, -1]], axis=1).mean())


def _resize_inputs(seq: VideoSequence, flows, bwd, factor: float):
    h, w = max(8, round(seq.height * factor)), max(8, round(seq.width * factor))
    x = F.interpolate(_seq_tensor(seq), size=(h, w), mode="bilinear", align_corners=False, antialias=True)

    def rf(fl):
        if fl is None:
            return None
        t = flows_tensor(fl, torch.float64)
        t = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
        t[:, 0] *= w / seq.width
        t[:, 1] *= h / seq.height
        return [FlowField(a[0].numpy(), a[1].numpy()) for a in t]

    return VideoSequence(np.clip(x.permute(0, 2, 3, 1).double().numpy(), 0, 1)), rf(flows), rf(bwd)


def run_task(seq: VideoSequence, flows: Sequence[FlowField], cfg: TaskConfig, *,
             backward_flows: Sequence[FlowField] | None = None,
             airlight: AirlightMap | None = None,
             embedder: PerceptualEmbedder | None = None,
             on_step=None) -> TaskResult:
    """Optimize the task's networks on ``seq`` with Adam for ``cfg.epochs`` passes.

    Deterministic for a given seed on one platform. ``on_step(step, out, parts)`` is an optional
    hook called after each optimizer step.
    """
    if len(flows) != len(seq) - 1:
        raise ValueError(f"flow/frame count mismatch: {len(flows)} flows for {len(seq)} frames")
    if cfg.warp_mode == "sample_backward_flow" and backward_flows is None:
        raise ValueError("warp_mode sample_backward_flow needs backward flows")
    if backward_flows is not None and len(backward_flows) != len(seq) - 1:
        raise ValueError("backward flow count mismatch")

    full_size = (seq.height, seq.width)
    if cfg.resize != 1.0:
        seq, flows, backward_flows = _resize_inputs(seq, flows, backward_flows, cfg.resize)

    t0 = time.perf_counter()
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)

    x = _seq_tensor(seq)
    T = x.shape[0]
    ain, frgb = _alpha_inputs(x, flows, cfg)
    flows_t = flows_tensor(flows)
    bwd_t = flows_tensor(backward_flows) if backward_flows is not None else None
    phi = embedder if embedder is not None else make_embedder(cfg.embedder)
    phi = phi.float()

    airlight_t = None
    if cfg.task == "dehaze":
        if airlight is None:
            airlight = estimate_airlight(seq)
        airlight_t = torch.from_numpy(airlight.colors.astype(np.float32))[:, :, None, None]
        airlight_before = airlight.colors.copy()

    models = ModelSet.for_task(cfg.task, cfg.layers, cfg.width)
    if cfg.task in ("relight", "dehaze") and cfg.tmap_init_bias:
        with torch.no_grad():
            models.alpha_nets[0].decoder[-2].bias.fill_(cfg.tmap_init_bias)
    models.train()
    opt = torch.optim.Adam(models.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    problem = _Problem(cfg, models, x, ain, frgb, flows_t, bwd_t, airlight_t, phi)

    trace: list[dict] = []
    step = 0
    initial_total = None
    last_good = copy.deepcopy(models.state_dict())
    diverged, diagnostic = False, ""
    for epoch in range(cfg.epochs):
        for sl in _batches(T, cfg.batch_frames):
            out = problem.forward(sl)
            parts = problem.parts(sl, out)
            total = total_loss(parts, cfg.weights, cfg.task)
            tv = float(total.detach())
            if initial_total is None:
                initial_total = tv
            if not math.isfinite(tv) or tv > cfg.divergence_factor * initial_total:
                diverged = True
                diagnostic = (f"loss diverged at step {step} (epoch {epoch}): total={tv!r}, "
                              f"initial={initial_total!r}; restored last finite weights")
                log.warning(diagnostic)
                models.load_state_dict(last_good)
                break
            last_good = copy.deepcopy(models.state_dict())
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            trace.append(_trace_row(step, epoch, parts, total, out))
            if on_step is not None:
                on_step(step, out, parts)
            step += 1
        if diverged:
            break

    with torch.no_grad():
        outs = [problem.forward(sl) for sl in _batches(T, cfg.batch_frames)]
    cat = {k: torch.cat([o[k] for o in outs]) for k in outs[0] if k not in ("x", "gamma_inv")}

    def up(t: torch.Tensor) -> torch.Tensor:
        if t.shape[-2:] == full_size:
            return t
        shape = t.shape
        flat = t.reshape(-1, 1, *shape[-2:]) if t.ndim == 5 else t
        r = F.interpolate(flat, size=full_size, mode="bilinear", align_corners=False)
        return r.reshape(*shape[:-2], *full_size) if t.ndim == 5 else r

    res = TaskResult(cfg.task, cfg, _to_seq(up(cat["xhat"]).clamp(0, 1)), trace, 0.0,
                     diverged=diverged, diagnostic=diagnostic, models=models)
    if cfg.task == "relight":
        res.relit = _to_seq(up(cat["intermediate"]))
        res.tmaps = up(cat["tmap"])[:, 0].double().numpy()
        res.gamma_inv = float(models.relight.gamma_inv.detach())
    elif cfg.task == "dehaze":
        res.clear = _to_seq(up(cat["intermediate"]))
        res.tmaps = up(cat["tmap"])[:, 0].double().numpy()
        if not np.array_equal(airlight.colors, airlight_before):
            raise RuntimeError("airlight changed during optimization")
        res.airlight = airlight
    else:
        masks = up(cat["masks"]).double().numpy()  # (T, L, H, W)
        layers = up(cat["layers"]).double().numpy()  # (T, L, 3, H, W)
        # background = the layer that covers the frame border most; it goes last
        order = sorted(range(masks.shape[1]), key=lambda i: _border_occupancy(masks[:, i]))
        masks, layers = masks[:, order], layers[:, order]
        masks = masks / masks.sum(axis=1, keepdims=True)
        res.layer_order = order
        res.masks = [MaskStack(m) for m in masks]
        res.layers = [VideoSequence(np.clip(layers[:, i].transpose(0, 2, 3, 1), 0, 1)) for i in range(layers.shape[1])]
    res.wall_clock = time.perf_counter() - t0
    return res


def _trace_row(step: int, epoch: int, parts: dict, total, out: dict) -> dict:
    row = {"step": step, "epoch": epoch}
    for k in ("rec", "warp", "fsim", "layer", "mask"):
        row[k] = float(parts[k].detach()) if k in parts else float("nan")
    row["total"] = float(total.detach()) if torch.is_tensor(total) else float(total)
    with torch.no_grad():
        row["rec_l1"] = float((out["x"] - out["xhat"]).abs().mean())
        row["mask_sum_err"] = float((out["masks"].sum(dim=1) - 1).abs().max()) if "masks" in out else float("nan")
        row["gamma_inv"] = float(out["gamma_inv"].detach()) if "gamma_inv" in out else float("nan")
    return row


def extract_masks(result: TaskResult, threshold: float = 0.5) -> np.ndarray:
    """Binary masks from a uvos result.

    Two layers: (T, H, W) foreground masks, M >= threshold (ties go to the foreground).
    More layers: (T, L, H, W) one-hot argmax over layers.
    """
    if result.task != "uvos" or result.masks is None:
        raise ValueError(f"extract_masks needs a uvos result, got {result.task!r}")
    stack = np.stack([m.maps for m in result.masks])
    if stack.shape[1] == 2:
        return stack[:, 0] >= threshold
    return argmax_onehot(stack)


def argmax_onehot(stack: np.ndarray) -> np.ndarray:
    idx = stack.argmax(axis=1)
    return np.stack([idx == i for i in range(stack.shape[1])], axis=1)


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        for row in trace:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_result(result: TaskResult, out, extra_params: dict | None = None) -> Path:
    """Lay out a run directory: frames per output kind, tmaps, airlight, params and loss trace."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    params = {"task": result.task, "seed": result.config.seed, "config": result.config.to_flat(),
              "wall_clock": result.wall_clock, "diverged": result.diverged, "diagnostic": result.diagnostic}
    if result.relit is not None:
        save_frame_sequence(result.relit, out / "relit")
        params["gamma_inv"] = result.gamma_inv
    if result.clear is not None:
        save_frame_sequence(result.clear, out / "clear")
    if result.tmaps is not None:
        save_gray_sequence(result.tmaps, out / "tmaps")
    if result.airlight is not None:
        write_image(out / "airlight.png", np.broadcast_to(result.airlight.color, (16, 16, 3)))
        params["airlight"] = result.airlight.color.tolist()
    if result.masks is not None:
        save_gray_sequence(extract_masks(result)[:, 0] if result.masks[0].L > 2 else extract_masks(result),
                           out / "masks")
        for i, layer in enumerate(result.layers):
            save_frame_sequence(layer, out / "layers" / str(i))
            save_gray_sequence(np.stack([m.maps[i] for m in result.masks]), out / "alphas" / str(i))
        params["layer_order"] = result.layer_order
    save_frame_sequence(result.reconstruction, out / "reconstruction")
    if extra_params:
        params.update(extra_params)
    (out / "params.json").write_text(json.dumps(params, indent=2, default=float))
    write_trace(result.trace, out / "loss_trace.csv")
    if result.models is not None:
        save_checkpoint(result.models, out / "checkpoint.pt", {"config": result.config.to_flat()})
    return out
