#!/usr/bin/env python3
"""End-to-end desk-scale benchmark: learned features vs raw-pixel tracking.

Generates pre-training sequences, trains the two-layer model, then tracks
three 100-frame test sequences (translation, in-plane rotation, shear
deformation) with and without learned-feature re-ranking and prints an
ACE/AOR table. Everything is seeded, so reruns reproduce the table
exactly.
"""

import argparse
import time

import numpy as np

from slowtrack.hierarchy import PretrainConfig, pretrain
from slowtrack.metrics import BoxTrace, center_error, overlap_rate
from slowtrack.optimizer import LbfgsConfig
from slowtrack.patches import sample_training_set
from slowtrack.synth import (
    deformation_script,
    generate_sequence,
    rotation_script,
    scaling_script,
    translation_script,
)
from slowtrack.tracker import TrackerConfig, run_tracker


def pretraining_data(n_frames=40):
    scripts = [
        translation_script(n_frames, (60.0, 60.0), (1.0, 0.0), target_side=48),
        translation_script(n_frames, (70.0, 52.0), (-0.8, 0.6), target_side=48),
        rotation_script(n_frames, (64.0, 60.0), np.deg2rad(2.0), target_side=48),
        scaling_script(n_frames, (64.0, 60.0), 1.004, target_side=48),
        deformation_script(n_frames, (64.0, 60.0), 3.0, target_side=48),
    ]
    frame_seqs, box_seqs = [], []
    for i, script in enumerate(scripts):
        frames, gt = generate_sequence(script, (140, 120), seed=11 + i)
        frame_seqs.append(frames)
        box_seqs.append(gt.boxes)
    return frame_seqs, box_seqs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--f1", type=int, default=32)
    parser.add_argument("--f2", type=int, default=64)
    parser.add_argument("--lambda", dest="lam", type=float, default=5.0)
    parser.add_argument("--gamma", type=float, default=100.0)
    parser.add_argument("--pretrain-iters", type=int, default=100)
    parser.add_argument("--frames", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    t0 = time.time()
    frame_seqs, box_seqs = pretraining_data()
    ts16 = sample_training_set(frame_seqs, box_seqs, 16, 16).training_set
    ts32 = sample_training_set(frame_seqs, box_seqs, 32, 16).training_set
    cfg = PretrainConfig(
        lam=args.lam,
        f1=args.f1,
        f2=args.f2,
        optimizer=LbfgsConfig(max_iters=args.pretrain_iters, grad_tol=1e-4),
        seed=0,
    )
    result = pretrain(ts16, ts32, cfg)
    model = result.model
    print(
        f"pre-trained in {time.time() - t0:.0f}s "
        f"(layer1 {result.layer1_opt.trace[0][0]:.3g} -> {result.layer1_opt.value:.3g}, "
        f"layer2 {result.layer2_opt.trace[0][0]:.3g} -> {result.layer2_opt.value:.3g})"
    )

    n = args.frames
    cases = {
        "translation": (translation_script(n, (160.0 - (n - 1), 120.0), (2.0, 0.0)), 21),
        "rotation": (rotation_script(n, (160.0, 120.0), np.deg2rad(1.5)), 22),
        "shear": (deformation_script(n, (160.0, 120.0), 4.0, time_period=25.0), 23),
    }
    print(f"\n{'sequence':<12} {'features':<8} {'ACE px':>8} {'AOR':>6} {'time':>6}")
    for name, (script, seed) in cases.items():
        frames, gt = generate_sequence(script, (320, 240), seed=seed)
        for raw in (False, True):
            t1 = time.time()
            tcfg = TrackerConfig(
                seed=args.seed, raw_only=raw, lam=args.lam, gamma=args.gamma
            )
            res = run_tracker(frames, tuple(gt.boxes[0]), None if raw else model, tcfg)
            pred = BoxTrace(res.boxes)
            _, ace = center_error(pred, gt)
            _, aor = overlap_rate(pred, gt)
            label = "raw" if raw else "learned"
            print(
                f"{name:<12} {label:<8} {ace:>8.2f} {aor:>6.3f} {time.time() - t1:>5.0f}s"
            )


if __name__ == "__main__":
    main()
