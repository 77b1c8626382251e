"""Command-line entry point: synth, pretrain, adapt, track, eval.

Exit codes are a stable scripting contract: 0 success, 2 usage or IO,
3 data, 4 optimization, 5 tracking lost.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, OptimizationError, TrackingLostError
from .hierarchy import PretrainConfig, load_model, pretrain, save_model
from .metrics import BoxTrace, center_error, overlap_rate
from .optimizer import LbfgsConfig
from .patches import (
    load_frame_dir,
    read_boxes_csv,
    sample_training_set,
    write_boxes_csv,
)
from .synth import (
    deformation_script,
    generate_sequence,
    rotation_script,
    scaling_script,
    translation_script,
    write_sequence,
)
from .tracker import MotionModel, TrackerConfig, format_event, run_tracker

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_OPTIMIZATION = 4
EXIT_TRACKING_LOST = 5

LAMBDA_SOFT_RANGE = (0.5, 20.0)
GAMMA_SOFT_RANGE = (90.0, 110.0)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _check_tradeoffs(lam=None, gamma=None) -> None:
    if lam is not None and not (LAMBDA_SOFT_RANGE[0] <= lam <= LAMBDA_SOFT_RANGE[1]):
        _warn(f"lambda={lam:g} outside the usual range {LAMBDA_SOFT_RANGE}")
    if gamma is not None and not (GAMMA_SOFT_RANGE[0] <= gamma <= GAMMA_SOFT_RANGE[1]):
        _warn(f"gamma={gamma:g} outside the usual range {GAMMA_SOFT_RANGE}")


def _pair(text: str, n: int = 2) -> tuple[float, ...]:
    parts = text.split(",")
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated values")
    return tuple(float(p) for p in parts)


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected WIDTHxHEIGHT")
    return int(parts[0]), int(parts[1])


def _merge_config(argv: list[str]) -> list[str]:
    """Expand `--config FILE` into flags inserted right after the subcommand.

    Explicit flags come later on the command line, so they win.
    """
    out = []
    config_path = None
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise DataError("--config requires a file path")
            config_path = argv[i + 1]
            i += 2
            continue
        if arg.startswith("--config="):
            config_path = arg.partition("=")[2]
            i += 1
            continue
        out.append(arg)
        i += 1
    if config_path is None:
        return out
    flags = []
    text = Path(config_path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{config_path}: line {lineno} is not key=value")
        flags.extend([f"--{key.strip()}", value.strip()])
    if not out:
        return flags
    return out[:1] + flags + out[1:]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowtrack",
        description="slow-feature learning and particle-filter tracking",
        epilog=(
            "every subcommand also accepts --config FILE with key=value "
            "lines merged in before the flags"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence with ground truth")
    p.add_argument(
        "--pattern",
        required=True,
        choices=["translation", "rotation", "scaling", "deformation"],
    )
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_size, default=(320, 240), help="frame WIDTHxHEIGHT")
    p.add_argument("--target-side", type=int, default=32)
    p.add_argument("--velocity", type=_pair, default=(2.0, 0.0), help="px/frame VX,VY")
    p.add_argument("--rate", type=float, default=None, help="rad/frame (rotation) or per-frame scale factor (scaling)")
    p.add_argument("--amp", type=float, default=3.0, help="peak shear amplitude, px")
    p.add_argument("--time-period", type=float, default=25.0)
    p.add_argument("--shear-period", type=float, default=16.0)

    p = sub.add_parser("pretrain", help="learn the two-layer model from tracked videos")
    p.add_argument("--data", nargs="+", required=True, help="dirs of frames + gt.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--f1", type=int, default=64)
    p.add_argument("--f2", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--max-iters", type=int, default=150)
    p.add_argument("--grad-tol", type=float, default=1e-4)
    p.add_argument("--whiten-dim", type=int, default=None)

    p = sub.add_parser("adapt", help="adapt a pre-trained model to one target")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True, help="dir of PGM frames")
    p.add_argument("--init-box", type=lambda s: _pair(s, 4), required=True)
    p.add_argument("--gamma", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--init-frames", type=int, default=20)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: machine parallelism); results are identical for any value")

    p = sub.add_parser("track", help="run the tracker over a frame directory")
    p.add_argument("--model", default=None)
    p.add_argument("--frames", required=True)
    p.add_argument("--init-box", type=lambda s: _pair(s, 4), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="diagnostics log (default OUT.log)")
    p.add_argument("--particles", type=int, default=600)
    p.add_argument("--topk", type=int, default=20)
    p.add_argument("--update-every", type=int, default=20)
    p.add_argument("--init-frames", type=int, default=20)
    p.add_argument("--raw-only", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--gamma", type=float, default=100.0)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--std-xy", type=float, default=4.0)
    p.add_argument("--std-scale", type=float, default=0.02)
    p.add_argument("--std-rotation", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: machine parallelism); results are identical for any value")

    p = sub.add_parser("eval", help="score predicted boxes against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    return parser


def cmd_synth(args) -> int:
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    width, height = args.size
    center = (width / 2.0, height / 2.0)
    n = args.frames
    if args.pattern == "translation":
        vx, vy = args.velocity
        start = (
            center[0] - vx * (n - 1) / 2.0,
            center[1] - vy * (n - 1) / 2.0,
        )
        script = translation_script(n, start, (vx, vy), target_side=args.target_side)
    elif args.pattern == "rotation":
        rate = args.rate if args.rate is not None else np.deg2rad(1.5)
        script = rotation_script(n, center, rate, target_side=args.target_side)
    elif args.pattern == "scaling":
        rate = args.rate if args.rate is not None else 1.004
        script = scaling_script(n, center, rate, target_side=args.target_side)
    else:
        script = deformation_script(
            n,
            center,
            args.amp,
            time_period=args.time_period,
            shear_period=args.shear_period,
            target_side=args.target_side,
        )
    frames, boxes = generate_sequence(script, (width, height), seed=args.seed)
    write_sequence(frames, boxes, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    _check_tradeoffs(lam=args.lam)
    frame_seqs, box_seqs = [], []
    for directory in args.data:
        directory = Path(directory)
        gt = directory / "gt.csv"
        if not gt.is_file():
            raise DataError(f"missing gt.csv in data directory {directory}")
        frames = load_frame_dir(directory)
        boxes = read_boxes_csv(gt)
        frame_seqs.append(frames)
        box_seqs.append(boxes)
    sample16 = sample_training_set(frame_seqs, box_seqs, 16, args.stride)
    sample32 = sample_training_set(frame_seqs, box_seqs, 32, args.stride)
    for sample, side in ((sample16, 16), (sample32, 32)):
        if sample.skipped_sequences:
            _warn(
                f"{sample.skipped_sequences} sequence(s) skipped for side {side} "
                "(box smaller than the patch)"
            )
        if sample.training_set.n == 0:
            raise DataError(f"no {side}x{side} training patches sampled")
    cfg = PretrainConfig(
        lam=args.lam,
        f1=args.f1,
        f2=args.f2,
        whiten_dim=args.whiten_dim,
        sub_patch_stride=args.stride,
        optimizer=LbfgsConfig(max_iters=args.max_iters, grad_tol=args.grad_tol),
        seed=args.seed,
    )
    result = pretrain(sample16.training_set, sample32.training_set, cfg)
    save_model(result.model, args.out)
    for tag, opt in (("layer1", result.layer1_opt), ("layer2", result.layer2_opt)):
        print(
            f"{tag} objective: {opt.trace[0][0]:.6e} -> {opt.value:.6e} "
            f"({opt.iterations} iterations, {opt.status})"
        )
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _load_model_arg(path):
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return load_model(path)


def cmd_adapt(args) -> int:
    _check_tradeoffs(lam=args.lam, gamma=args.gamma)
    model = _load_model_arg(args.model)
    frames = load_frame_dir(args.frames)
    if len(frames) < args.init_frames:
        raise DataError(
            f"need at least {args.init_frames} frames, found {len(frames)}"
        )
    cfg = TrackerConfig(
        init_frames=args.init_frames,
        lam=args.lam,
        gamma=args.gamma,
        seed=args.seed,
        threads=args.threads,
        adapt_optimizer=LbfgsConfig(max_iters=args.max_iters, grad_tol=1e-5),
    )
    result = run_tracker(frames[: args.init_frames], args.init_box, model, cfg)
    adapt_events = [e for e in result.events if e.kind != "failed"]
    if not adapt_events:
        raise OptimizationError(
            "adaptation failed: "
            + "; ".join(e.error for e in result.events if e.kind == "failed")
        )
    for st in adapt_events[-1].layers:
        print(
            f"{st.layer}: |W - W_old|_F = {st.frobenius_change:.6e} "
            f"(relative {st.relative_change:.6e})"
        )
    save_model(result.model, args.out)
    print(f"wrote model to {args.out}")
    return EXIT_OK


def cmd_track(args) -> int:
    _check_tradeoffs(lam=args.lam, gamma=args.gamma)
    if args.topk > args.particles:
        raise UsageError(
            f"--topk ({args.topk}) must not exceed --particles ({args.particles})"
        )
    model = None
    if args.model is not None:
        model = _load_model_arg(args.model)
    elif not args.raw_only:
        raise UsageError("--model is required unless --raw-only is set")
    frames = load_frame_dir(args.frames)
    cfg = TrackerConfig(
        n_candidates=args.particles,
        top_k=args.topk,
        update_period=args.update_every,
        init_frames=args.init_frames,
        motion=MotionModel(
            std_cx=args.std_xy,
            std_cy=args.std_xy,
            std_scale=args.std_scale,
            std_rotation=args.std_rotation,
        ),
        lam=args.lam,
        gamma=args.gamma,
        sigma=args.sigma,
        seed=args.seed,
        threads=args.threads,
        raw_only=args.raw_only,
    )
    log_path = args.log if args.log is not None else args.out + ".log"
    try:
        result = run_tracker(frames, args.init_box, model, cfg)
    except TrackingLostError as err:
        if err.boxes is not None and len(err.boxes):
            write_boxes_csv(args.out, err.boxes)
        Path(log_path).write_text(
            f"tracking lost at frame {err.frame_index}\n", encoding="utf-8"
        )
        print(f"error: tracking lost at frame {err.frame_index}", file=sys.stderr)
        return EXIT_TRACKING_LOST
    write_boxes_csv(args.out, result.boxes)
    lines = [format_event(e) for e in result.events]
    Path(log_path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    print(f"wrote {len(result.boxes)} boxes to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = BoxTrace.from_csv(args.pred)
    gt = BoxTrace.from_csv(args.gt)
    _, ace = center_error(pred, gt)
    _, aor = overlap_rate(pred, gt)
    print(f"ACE={ace:.4f} AOR={aor:.4f}")
    return EXIT_OK


class UsageError(Exception):
    pass


_COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "track": cmd_track,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _merge_config(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OptimizationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
