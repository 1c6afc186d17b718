"""Segment a single moving sprite and run single-loss ablations."""

import argparse
import time
from dataclasses import replace

from vdp.losses import LossWeights
from vdp.metrics import iou
from vdp.nets import FallbackEmbedder
from vdp.pipelines import TaskConfig, extract_masks, run_task
from vdp.synth import default_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width", type=float, default=0.25)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--no-warp-masks", action="store_true")
    ap.add_argument("--drop", default="none,rec,warp,fsim,layer,mask",
                    help="comma list of loss terms to zero one at a time; 'none' is the full objective")
    args = ap.parse_args()

    scene = default_scene()
    gt = scene.foreground()
    print(f"ground-truth foreground fraction {gt.mean():.3f}")
    for term in args.drop.split(","):
        w = LossWeights.for_task("uvos")
        if term != "none":
            w = replace(w, **{term: 0.0})
        cfg = TaskConfig("uvos", epochs=args.epochs, lr=args.lr, width=args.width, embedder="fallback",
                         weights=w, warp_masks=not args.no_warp_masks)
        t0 = time.perf_counter()
        r = run_task(scene.seq, scene.flows, cfg, embedder=FallbackEmbedder())
        m = extract_masks(r)
        print(f"drop {term:>5}: IoU {iou(m, gt):.4f}, foreground fraction {m.mean():.3f}, "
              f"layer order {r.layer_order}, {time.perf_counter() - t0:.0f} s", flush=True)


if __name__ == "__main__":
    main()
