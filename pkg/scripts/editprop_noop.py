"""Propagate an unmodified keyframe through a sprite video and score the reconstruction."""

import argparse

import numpy as np

from vdp.editprop import propagate_edit
from vdp.metrics import psnr, ssim
from vdp.synth import default_scene
from vdp.video import Frame


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=16)
    args = ap.parse_args()

    s = default_scene(T=args.frames)
    for region in ("background", "foreground"):
        for mode in ("sample_forward_flow", "sample_backward_flow"):
            out = propagate_edit(Frame(s.seq.pixels[0]), 0, s.seq, s.flows, s.foreground(), region, mode,
                                 s.backward_flows)
            p = [psnr(out.pixels[t], s.seq.pixels[t]) for t in range(1, args.frames)]
            print(f"{region:>10} {mode}: mean PSNR {np.mean(p):.2f} dB (min {min(p):.2f}), "
                  f"SSIM {ssim(out.pixels[1:], s.seq.pixels[1:]):.4f}")


if __name__ == "__main__":
    main()
