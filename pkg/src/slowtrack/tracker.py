"""Particle-filter tracking with hierarchical features.

Each frame: candidate states are Gaussian perturbations of
systematically-resampled previous particles; all candidates are ranked
cheaply by raw-pixel distance to the previous predicted patch, the top
few are re-ranked with hierarchical features against an exemplar
library, and the maximum-weight candidate becomes the prediction. The
feature filters and the exemplar library are re-adapted on the tracked
object's own patches every M frames, warm-started from the current
filters.

The appearance model is a nearest-exemplar Gaussian kernel over
unit-normalized combined features, standing in for the structural sparse
model of the surrounding tracking system while preserving the same
features-in, likelihood-out contract.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CandidateRejectedError,
    DataError,
    OptimizationError,
    TrackingLostError,
)
from .geometry import snapped_cos_sin, wrap_angle
from .hierarchy import HierarchicalModel, adapt, encode_hier, sub_windows
from .optimizer import LbfgsConfig
from .patches import Frame, Patch, PatchSequence, TrainingSet, normalize_values

CANDIDATE_SIDE = 32

# a candidate needs at least this fraction of its samples inside the frame
_MIN_INSIDE_FRACTION = 0.5


@dataclass(frozen=True)
class TrackState:
    """Target pose: center, scale and in-plane rotation over a fixed base box."""

    cx: float
    cy: float
    scale: float
    rotation: float  # radians, in (-pi, pi]
    base_w: float
    base_h: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not (-math.pi < self.rotation <= math.pi):
            raise ValueError(f"rotation {self.rotation} outside (-pi, pi]")
        if self.base_w <= 0 or self.base_h <= 0:
            raise ValueError("base box dims must be positive")

    @classmethod
    def from_box(cls, box) -> "TrackState":
        x, y, w, h = (float(v) for v in box)
        return cls(x + w / 2.0, y + h / 2.0, 1.0, 0.0, w, h)

    def box(self) -> tuple[float, float, float, float]:
        """Axis-aligned bounding box (x, y, w, h) of the rotated box."""
        w = self.base_w * self.scale
        h = self.base_h * self.scale
        c, s = snapped_cos_sin(self.rotation)
        ext_x = 0.5 * (abs(w * c) + abs(h * s))
        ext_y = 0.5 * (abs(w * s) + abs(h * c))
        return (self.cx - ext_x, self.cy - ext_y, 2.0 * ext_x, 2.0 * ext_y)


@dataclass(frozen=True)
class MotionModel:
    """Independent Gaussian perturbation scales for each state field."""

    std_cx: float = 4.0
    std_cy: float = 4.0
    std_scale: float = 0.02
    std_rotation: float = 0.10

    def __post_init__(self):
        if min(self.std_cx, self.std_cy, self.std_scale, self.std_rotation) < 0:
            raise ValueError("motion stds must be >= 0")


@dataclass(frozen=True)
class ParticleSet:
    """Weighted state samples; weights are nonnegative and sum to 1."""

    states: tuple[TrackState, ...]
    weights: np.ndarray

    def __post_init__(self):
        states = tuple(self.states)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if len(states) != w.size or not states:
            raise ValueError(
                f"{len(states)} states but {w.size} weights (both nonempty required)"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", w)

    @classmethod
    def single(cls, state: TrackState) -> "ParticleSet":
        return cls((state,), np.array([1.0]))


class ExemplarLibrary:
    """Bounded recency buffer of unit-normalized combined feature vectors."""

    def __init__(self, capacity: int = 10, sigma: float = 0.2):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.capacity = capacity
        self.sigma = float(sigma)
        self._exemplars: deque[np.ndarray] = deque(maxlen=capacity)

    def add(self, combined) -> None:
        self._exemplars.append(_unit(np.asarray(combined, dtype=np.float64).ravel()))

    def __len__(self) -> int:
        return len(self._exemplars)

    def min_distance(self, combined) -> float:
        if not self._exemplars:
            raise DataError("exemplar library is empty")
        f = _unit(np.asarray(combined, dtype=np.float64).ravel())
        return min(float(np.linalg.norm(f - e)) for e in self._exemplars)


@dataclass(frozen=True)
class TrackerConfig:
    n_candidates: int = 600
    top_k: int = 20
    update_period: int = 20  # M: adapt every M frames after initialization
    init_frames: int = 20  # bootstrap frames tracked by raw pixels only
    motion: MotionModel = field(default_factory=MotionModel)
    lam: float = 5.0
    gamma: float = 100.0
    sigma: float = 0.2
    library_capacity: int = 10
    seed: int = 0
    threads: int | None = None  # worker cap; None = machine parallelism
    raw_only: bool = False
    adapt_optimizer: LbfgsConfig = field(
        default_factory=lambda: LbfgsConfig(max_iters=50, grad_tol=1e-5)
    )
    eps_sqrt: float = 1e-8
    eps_abs: float = 1e-6

    def __post_init__(self):
        if self.top_k > self.n_candidates:
            raise ValueError(
                f"top_k ({self.top_k}) must not exceed n_candidates "
                f"({self.n_candidates})"
            )
        if self.update_period < 1 or self.init_frames < 1 or self.n_candidates < 1:
            raise ValueError("counts must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def worker_count(self) -> int:
        return self.threads if self.threads is not None else (os.cpu_count() or 1)


@dataclass(frozen=True)
class AdaptEvent:
    """One scheduled adaptation, as recorded in the diagnostics log."""

    frames_processed: int
    kind: str  # init | update | failed
    layers: tuple = ()  # LayerAdaptStats per layer when successful
    error: str = ""


@dataclass(frozen=True)
class StepResult:
    state: TrackState
    particles: ParticleSet
    patch: Patch
    coarse_rank: int  # rank of the prediction among coarse candidates


@dataclass(frozen=True)
class TrackResult:
    boxes: np.ndarray  # (n_frames, 4)
    model: HierarchicalModel
    events: tuple[AdaptEvent, ...]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else v.copy()


def _ordered_map(fn, items, threads: int):
    if threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _perturb(states, motion: MotionModel, rng: np.random.Generator):
    noise = rng.standard_normal((len(states), 4))
    out = []
    for st, row in zip(states, noise):
        scale = st.scale + row[2] * motion.std_scale
        out.append(
            TrackState(
                cx=st.cx + row[0] * motion.std_cx,
                cy=st.cy + row[1] * motion.std_cy,
                scale=max(scale, 1e-3),
                rotation=wrap_angle(st.rotation + row[3] * motion.std_rotation),
                base_w=st.base_w,
                base_h=st.base_h,
            )
        )
    return out


def propagate(prev: TrackState, motion: MotionModel, n: int, rng) -> list[TrackState]:
    """n Gaussian perturbations of one state; deterministic given the seed."""
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(rng)
    return _perturb([prev] * n, motion, rng)


def _systematic_resample(particles: ParticleSet, n: int, rng: np.random.Generator):
    positions = (np.arange(n) + rng.random()) / n
    cum = np.cumsum(particles.weights)
    cum[-1] = 1.0  # guard against round-off
    idx = np.searchsorted(cum, positions, side="left")
    return [particles.states[i] for i in idx]


def candidate_patch(frame: Frame, state: TrackState) -> Patch:
    """Sample the rotated, scaled box into a normalized 32x32 patch.

    Raises CandidateRejectedError when less than half of the sample grid
    lies inside the frame; samples outside are clamped to the border.
    """
    w = state.base_w * state.scale
    h = state.base_h * state.scale
    n = CANDIDATE_SIDE
    off_u = (np.arange(n) + 0.5) * w / n - w / 2.0
    off_v = (np.arange(n) + 0.5) * h / n - h / 2.0
    u, v = np.meshgrid(off_u, off_v)
    c, s = snapped_cos_sin(state.rotation)
    xs = state.cx + u * c - v * s
    ys = state.cy + u * s + v * c
    inside = (xs >= 0) & (xs < frame.width) & (ys >= 0) & (ys < frame.height)
    if inside.mean() < _MIN_INSIDE_FRACTION:
        raise CandidateRejectedError(
            f"candidate at ({state.cx:.1f}, {state.cy:.1f}) lies outside the frame"
        )
    ix = np.clip(np.floor(xs).astype(np.int64), 0, frame.width - 1)
    iy = np.clip(np.floor(ys).astype(np.int64), 0, frame.height - 1)
    return Patch(n, normalize_values(frame.pixels[iy, ix]))


def likelihood(lib: ExemplarLibrary, feature) -> float:
    """exp(-d^2 / (2 sigma^2)) with d the nearest-exemplar unit-feature distance."""
    combined = getattr(feature, "combined", feature)
    d = lib.min_distance(combined)
    return math.exp(-(d * d) / (2.0 * lib.sigma * lib.sigma))


def step(
    frame: Frame,
    prev: ParticleSet,
    template: np.ndarray,
    model: HierarchicalModel | None,
    lib: ExemplarLibrary,
    cfg: TrackerConfig,
    frame_index: int,
    rng: np.random.Generator,
) -> StepResult:
    """One tracking step; see the module docstring for the ranking scheme.

    Learned re-ranking is active once the library is seeded (after the
    bootstrap frames) unless the config is raw-only.
    """
    parents = _systematic_resample(prev, cfg.n_candidates, rng)
    states = _perturb(parents, cfg.motion, rng)

    def try_patch(st):
        try:
            return candidate_patch(frame, st)
        except CandidateRejectedError:
            return None

    patches = _ordered_map(try_patch, states, cfg.worker_count)
    valid = [i for i, p in enumerate(patches) if p is not None]
    if not valid:
        raise TrackingLostError(frame_index, prev.states[int(np.argmax(prev.weights))])

    t_unit = _unit(np.asarray(template, dtype=np.float64).ravel())
    dist = np.full(cfg.n_candidates, np.inf)
    for i in valid:
        dist[i] = float(np.linalg.norm(_unit(patches[i].values) - t_unit))

    use_features = (
        not cfg.raw_only
        and model is not None
        and len(lib) > 0
        and frame_index >= cfg.init_frames
    )
    weights = np.zeros(cfg.n_candidates)
    if use_features:
        order = np.argsort(dist, kind="stable")
        top = [int(i) for i in order[: cfg.top_k] if np.isfinite(dist[i])]

        def feature_distance(i):
            return lib.min_distance(encode_hier(model, patches[i]).combined)

        fdist = np.asarray(_ordered_map(feature_distance, top, cfg.worker_count))
        # subtract the minimum before exponentiating: a positive rescaling of
        # every likelihood, harmless for the argmax and immune to underflow
        d2 = fdist * fdist
        weights[top] = np.exp(-(d2 - d2.min()) / (2.0 * cfg.sigma * cfg.sigma))
    else:
        d = dist[valid]
        d2 = d * d
        weights[valid] = np.exp(-(d2 - d2.min()) / (2.0 * cfg.sigma * cfg.sigma))
    weights = weights / weights.sum()

    best = int(np.argmax(weights))  # ties resolve to the lowest index
    coarse_rank = int(np.count_nonzero(dist < dist[best]))
    return StepResult(
        state=states[best],
        particles=ParticleSet(tuple(states), weights),
        patch=patches[best],
        coarse_rank=coarse_rank,
    )


def _object_training_sets(patches32, stride: int):
    cells = None
    for p in patches32:
        subs = sub_windows(p.values, stride)
        if cells is None:
            cells = [[] for _ in subs]
        for cell, values in zip(cells, subs):
            cell.append(Patch(16, values))
    ts16 = TrainingSet(
        tuple(PatchSequence(tuple(cell), sequence_id=f"cell{k}") for k, cell in enumerate(cells))
    )
    ts32 = TrainingSet((PatchSequence(tuple(patches32), sequence_id="object"),))
    return ts16, ts32


def run_tracker(
    frames, init_box, model: HierarchicalModel | None, cfg: TrackerConfig
) -> TrackResult:
    """Track through a frame list from a first-frame box.

    The first init_frames frames run on raw-pixel ranking while object
    patches are collected; adaptation then runs on the collected patches
    and seeds the exemplar library, and re-runs every update_period
    frames on the most recent window, warm-started from the current
    filters. A failed adaptation is logged and tracking continues with
    the previous filters.
    """
    frames = list(frames)
    if not frames:
        raise DataError("no frames to track")
    if model is None and not cfg.raw_only:
        raise ValueError("a model is required unless raw_only is set")
    x, y, w, h = (float(v) for v in init_box)
    f0 = frames[0]
    if x < 0 or y < 0 or x + w > f0.width or y + h > f0.height:
        raise DataError(
            f"initial box {init_box} not inside frame 0 ({f0.width}x{f0.height})"
        )
    rng = np.random.default_rng(cfg.seed)
    state = TrackState.from_box(init_box)
    try:
        patch = candidate_patch(f0, state)
    except CandidateRejectedError:
        raise DataError(f"initial box {init_box} cannot be sampled") from None

    particles = ParticleSet.single(state)
    template = patch.values
    boxes = [state.box()]
    collected: list[Patch] = [patch]
    lib = ExemplarLibrary(cfg.library_capacity, cfg.sigma)
    events: list[AdaptEvent] = []
    current = model
    stride = model.sub_patch_stride if model is not None else 16

    def maybe_adapt(frames_processed: int):
        nonlocal current
        if cfg.raw_only or current is None:
            return
        if frames_processed < cfg.init_frames:
            return
        is_init = frames_processed == cfg.init_frames
        if not is_init and (frames_processed - cfg.init_frames) % cfg.update_period:
            return
        window = collected if is_init else collected[-cfg.update_period :]
        ts16, ts32 = _object_training_sets(window, stride)
        try:
            result = adapt(
                current,
                ts16,
                ts32,
                cfg.lam,
                cfg.gamma,
                cfg.adapt_optimizer,
                eps_sqrt=cfg.eps_sqrt,
                eps_abs=cfg.eps_abs,
            )
        except OptimizationError as err:
            events.append(
                AdaptEvent(frames_processed, "failed", error=str(err))
            )
            return
        current = result.model
        events.append(
            AdaptEvent(
                frames_processed,
                "init" if is_init else "update",
                layers=result.layers,
            )
        )
        if is_init:
            for p in collected:
                lib.add(encode_hier(current, p).combined)
        else:
            lib.add(encode_hier(current, collected[-1]).combined)

    maybe_adapt(1)
    for t in range(1, len(frames)):
        try:
            res = step(frames[t], particles, template, current, lib, cfg, t, rng)
        except TrackingLostError as err:
            raise TrackingLostError(t, err.state, np.asarray(boxes)) from None
        state, particles, patch = res.state, res.particles, res.patch
        template = patch.values
        boxes.append(state.box())
        collected.append(patch)
        maybe_adapt(t + 1)
    return TrackResult(np.asarray(boxes), current, tuple(events))


def format_event(event: AdaptEvent) -> str:
    """One diagnostics-log line per adaptation event."""
    if event.kind == "failed":
        return f"adapt kind=failed frames={event.frames_processed} error={event.error}"
    parts = [f"adapt kind={event.kind} frames={event.frames_processed}"]
    for st in event.layers:
        parts.append(
            f"{st.layer}_before={st.value_before:.6e} "
            f"{st.layer}_after={st.value_after:.6e} "
            f"{st.layer}_rel_change={st.relative_change:.6e}"
        )
    return " ".join(parts)
