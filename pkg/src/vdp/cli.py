"""``vdp`` command line: run, synth, eval, propagate-edit, flow-vis.

Exit codes: 0 success, 1 invalid input or configuration, 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from vdp import metrics
from vdp.editprop import propagate_edit
from vdp.flow import (
    CommandFlowProvider,
    FileFlowProvider,
    FlowCountError,
    flows_to_rgb,
    provide_flows,
    read_flo_dir,
    write_flo_dir,
)
from vdp.nets import make_embedder
from vdp.pipelines import ConfigError, TaskConfig, load_airlight, run_task, write_result
from vdp.pipelines.config import read_ini
from vdp.synth import HAZE_BG, default_scene, gen_dark_sequence, gen_hazy_sequence, two_sprite_scene
from vdp.video import (
    Frame,
    InsufficientFramesError,
    ResolutionMismatchError,
    load_frame_sequence,
    load_masks,
    read_image,
    save_frame_sequence,
    save_gray_sequence,
    write_image,
)

log = logging.getLogger("vdp")

# keys that describe where a run reads and writes, as opposed to TaskConfig fields
IO_KEYS = ("frames", "flows", "flow_cmd", "backward_flows", "airlight", "pattern")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _run_parser(sub):
    p = sub.add_parser("run", help="optimize one video for a task")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--out", required=True)
    p.add_argument("--task")
    p.add_argument("--frames")
    p.add_argument("--pattern")
    p.add_argument("--flows", help="directory of forward .flo files")
    p.add_argument("--flow-cmd", dest="flow_cmd", help="external estimator: template with {src} {dst} {out}")
    p.add_argument("--backward-flows", dest="backward_flows")
    p.add_argument("--airlight", help="JSON [r, g, b] or image overriding airlight estimation")
    p.add_argument("--layers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha-input", dest="alpha_input")
    p.add_argument("--warp-mode", dest="warp_mode")
    p.add_argument("--embedder")
    p.add_argument("--width", type=float)
    p.add_argument("--batch-frames", dest="batch_frames", type=int)
    p.add_argument("--resize", type=float)
    p.add_argument("--layer-target", dest="layer_target")
    p.add_argument("--tmap-init-bias", dest="tmap_init_bias", type=float)
    p.add_argument("--warp-masks", dest="warp_masks", action="store_const", const=True)
    p.add_argument("--occlusion-mask", dest="occlusion_mask", action="store_const", const=True)
    p.add_argument("--allow-lr-override", dest="allow_lr_override", action="store_const", const=True)
    for term in ("rec", "warp", "fsim", "layer", "mask"):
        p.add_argument(f"--w-{term}", dest=f"w_{term}", type=float)
    p.set_defaults(func=cmd_run)


def resolve_run_config(args) -> tuple[TaskConfig, dict]:
    """Merge built-in defaults < config file < flags; returns (TaskConfig, io settings)."""
    values: dict = {}
    if args.config:
        values.update(read_ini(args.config))
    for k, v in vars(args).items():
        if k in ("config", "out", "func", "command", "verbose") or v is None:
            continue
        values[k] = v
    io = {k: values.pop(k) for k in IO_KEYS if k in values}
    io = {k: v for k, v in io.items() if v not in ("", "None")}
    cfg = TaskConfig.from_flat(values)
    if "flows" in io and "flow_cmd" in io:
        raise ConfigError("conflicting flow sources: give either --flows or --flow-cmd, not both")
    if "flows" not in io and "flow_cmd" not in io:
        raise ConfigError("a flow source is required (--flows or --flow-cmd)")
    if "frames" not in io:
        raise ConfigError("--frames is required")
    return cfg, io


def cmd_run(args) -> int:
    cfg, io = resolve_run_config(args)
    out = Path(args.out)
    seq = load_frame_sequence(io["frames"], io.get("pattern", "*.png"))
    provider = (FileFlowProvider(io["flows"], io.get("backward_flows")) if "flows" in io
                else CommandFlowProvider(io["flow_cmd"]))
    flows = provide_flows(provider, seq)
    bwd = provider.backward_flows(seq)
    airlight = load_airlight(io["airlight"], len(seq)) if "airlight" in io else None
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: (str(Path(v).resolve()) if k in ("frames", "flows", "backward_flows", "airlight") else v)
            for k, v in io.items()}
    (out / "config.ini").write_text(cfg.to_ini(echo))
    embedder = make_embedder(cfg.embedder)
    try:
        result = run_task(seq, flows, cfg, backward_flows=bwd, airlight=airlight, embedder=embedder)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_result(result, out, {"embedder": type(embedder).__name__})
    if result.diverged:
        log.error(result.diagnostic)
        return 2
    log.info("wrote %s (%.1fs)", out, result.wall_clock)
    return 0


def _synth_parser(sub):
    p = sub.add_parser("synth", help="write a synthetic sequence with ground truth")
    p.add_argument("--kind", required=True, choices=("sprites", "dark", "haze"))
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sprites", type=int, default=1, choices=(1, 2))
    p.add_argument("--velocity", type=float, nargs=2, default=(2.0, 0.0))
    p.add_argument("--bg-velocity", type=float, nargs=2, default=(0.5, 0.25))
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--gain", type=float, default=1.0, help="A in A * clean ** gamma")
    p.add_argument("--tmap", default="linear_ramp", choices=("constant", "linear_ramp", "radial"))
    p.add_argument("--tmap-hi", type=float, default=1.0)
    p.add_argument("--tmap-lo", type=float, default=0.3)
    p.add_argument("--tmap-value", type=float, default=0.5)
    p.add_argument("--airlight", type=float, nargs=3, default=(0.8, 0.8, 0.8))
    p.set_defaults(func=cmd_synth)


def cmd_synth(args) -> int:
    if args.sprites == 2:
        scene = two_sprite_scene(args.frames, args.height, args.width, args.seed)
    else:
        palette = {"bg_colors": HAZE_BG} if args.kind == "haze" else {}
        scene = default_scene(args.frames, args.height, args.width, args.seed, tuple(args.velocity),
                              tuple(args.bg_velocity), **palette)
    out = Path(args.out)
    manifest = dict(scene.params)
    write_flo_dir(scene.flows, out / "flows")
    write_flo_dir(scene.backward_flows, out / "flows_backward")
    save_gray_sequence(scene.foreground(), out / "masks")
    if args.kind == "sprites":
        save_frame_sequence(scene.seq, out / "frames")
        for k in range(scene.masks[0].L):
            save_gray_sequence(np.stack([m.maps[k] for m in scene.masks]), out / "layer_masks" / str(k))
    else:
        save_frame_sequence(scene.seq, out / "clean")
        if args.kind == "dark":
            seq = gen_dark_sequence(scene.seq, args.gamma, args.gain)
            manifest.update(kind="dark", gamma=args.gamma, gamma_inv=1.0 / args.gamma, gain=args.gain)
        else:
            spec = {"kind": args.tmap, "hi": args.tmap_hi, "lo": args.tmap_lo, "value": args.tmap_value}
            seq, tmaps = gen_hazy_sequence(scene.seq, spec, tuple(args.airlight))
            save_gray_sequence(tmaps, out / "tmaps")
            manifest.update(kind="haze", tmap=spec, airlight=list(args.airlight))
        save_frame_sequence(seq, out / "frames")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return 0


def _eval_parser(sub):
    p = sub.add_parser("eval", help="compare predicted frames or masks with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)


def cmd_eval(args) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(names) - {"psnr", "ssim", "iou"}
    if unknown:
        raise ConfigError(f"unknown metrics: {', '.join(sorted(unknown))}")
    res = {}
    if {"psnr", "ssim"} & set(names):
        pred, gt = load_frame_sequence(args.pred), load_frame_sequence(args.gt)
        if "psnr" in names:
            res["psnr"] = metrics.psnr(pred, gt)
        if "ssim" in names:
            res["ssim"] = metrics.ssim(pred, gt)
    if "iou" in names:
        res["iou"] = metrics.iou(load_masks(args.pred), load_masks(args.gt))
    text = json.dumps(res, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _edit_parser(sub):
    p = sub.add_parser("propagate-edit", help="propagate an edited keyframe")
    p.add_argument("--frames", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--backward-flows", dest="backward_flows")
    p.add_argument("--masks", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("--key", type=int, default=0)
    p.add_argument("--region", default="background", choices=("foreground", "background"))
    p.add_argument("--warp-mode", default="sample_forward_flow",
                   choices=("sample_forward_flow", "sample_backward_flow"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)


def cmd_propagate(args) -> int:
    seq = load_frame_sequence(args.frames)
    flows = provide_flows(FileFlowProvider(args.flows), seq)
    bwd = read_flo_dir(args.backward_flows) if args.backward_flows else None
    masks = load_masks(args.masks)
    edited = read_image(args.edited)
    if edited.ndim == 2:
        edited = np.repeat(edited[..., None], 3, axis=2)
    result = propagate_edit(Frame(edited), args.key, seq, flows, masks, args.region, args.warp_mode, bwd)
    save_frame_sequence(result, args.out)
    return 0


def _flowvis_parser(sub):
    p = sub.add_parser("flow-vis", help="render .flo files as color-wheel PNGs")
    p.add_argument("--flows", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--r-max", dest="r_max", default="auto")
    p.set_defaults(func=cmd_flowvis)


def cmd_flowvis(args) -> int:
    flows = read_flo_dir(args.flows)
    if not flows:
        raise ConfigError(f"no .flo files in {args.flows}")
    r_max = args.r_max if args.r_max == "auto" else float(args.r_max)
    rgb = flows_to_rgb(flows, r_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, img in enumerate(rgb):
        write_image(out / f"{t:05d}.png", img)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for add in (_run_parser, _synth_parser, _eval_parser, _edit_parser, _flowvis_parser):
        add(sub)
    return parser


VALIDATION_ERRORS = (UsageError, ConfigError, FlowCountError, InsufficientFramesError, ResolutionMismatchError,
                     FileNotFoundError)


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"vdp: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"vdp: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"vdp: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure mid-run maps to exit code 2
        log.exception("run failed")
        print(f"vdp: failed: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
