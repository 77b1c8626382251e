import numpy as np
import pytest

from slowtrack.encoder import LayerEncoder
from slowtrack.hierarchy import (
    HierarchicalModel,
    PretrainConfig,
    _random_orthonormal_rows,
    pretrain,
)
from slowtrack.optimizer import LbfgsConfig
from slowtrack.patches import sample_training_set
from slowtrack.synth import (
    deformation_script,
    generate_sequence,
    rotation_script,
    scaling_script,
    translation_script,
)
from slowtrack.whitening import fit_whitening


def build_model(f1=8, f2=4, eps_sqrt=1e-8, seed=0, stride=16, whiten_dim=None):
    """Assemble an untrained model with random orthonormal filters.

    Good enough for shape/determinism tests that do not need learned
    filters.
    """
    rng = np.random.default_rng(seed)
    w1 = _random_orthonormal_rows(f1, 256, rng)
    per_axis = (32 - 16) // stride + 1
    concat_dim = per_axis * per_axis * (f1 // 2)
    samples = rng.standard_normal((4 * concat_dim, concat_dim))
    whit = fit_whitening(samples, d=whiten_dim)
    w2 = _random_orthonormal_rows(f2, whit.retained_dim, rng)
    return HierarchicalModel(
        layer1=LayerEncoder.create(w1, eps_sqrt),
        whitening=whit,
        layer2=LayerEncoder.create(w2, eps_sqrt),
        sub_patch_stride=stride,
    )


def mixed_motion_data(n_frames=40, frame_size=(140, 120), seed0=11, target_side=48):
    """Short tracked sequences covering all motion patterns."""
    scripts = [
        translation_script(n_frames, (60.0, 60.0), (1.0, 0.0), target_side=target_side),
        translation_script(n_frames, (70.0, 52.0), (-0.8, 0.6), target_side=target_side),
        rotation_script(n_frames, (64.0, 60.0), np.deg2rad(2.0), target_side=target_side),
        scaling_script(n_frames, (64.0, 60.0), 1.004, target_side=target_side),
        deformation_script(n_frames, (64.0, 60.0), 3.0, target_side=target_side),
    ]
    frame_seqs, box_seqs = [], []
    for i, script in enumerate(scripts):
        frames, gt = generate_sequence(script, frame_size, seed=seed0 + i)
        frame_seqs.append(frames)
        box_seqs.append(gt.boxes)
    return frame_seqs, box_seqs


def translation_data(n_seqs, n_frames, seed0, velocity=1.0, target_side=48):
    """Translating-texture sequences in evenly spread directions."""
    rng = np.random.default_rng(seed0)
    frame_seqs, box_seqs = [], []
    for i in range(n_seqs):
        angle = rng.uniform(0.0, 2.0 * np.pi)
        v = (velocity * np.cos(angle), velocity * np.sin(angle))
        start = (
            70.0 - v[0] * (n_frames - 1) / 2.0,
            60.0 - v[1] * (n_frames - 1) / 2.0,
        )
        script = translation_script(n_frames, start, v, target_side=target_side)
        frames, gt = generate_sequence((script), (140, 120), seed=seed0 + 100 + i)
        frame_seqs.append(frames)
        box_seqs.append(gt.boxes)
    return frame_seqs, box_seqs


@pytest.fixture(scope="session")
def trained_model():
    """A small model pre-trained on mixed-motion sequences (shared, ~5 s)."""
    frame_seqs, box_seqs = mixed_motion_data()
    ts16 = sample_training_set(frame_seqs, box_seqs, 16, 16).training_set
    ts32 = sample_training_set(frame_seqs, box_seqs, 32, 16).training_set
    cfg = PretrainConfig(
        lam=5.0,
        f1=32,
        f2=64,
        optimizer=LbfgsConfig(max_iters=100, grad_tol=1e-4),
        seed=0,
    )
    return pretrain(ts16, ts32, cfg).model


@pytest.fixture(scope="session")
def small_training_sets():
    """Tiny 16/32 training sets for fast objective/adaptation tests."""
    frame_seqs, box_seqs = mixed_motion_data(n_frames=8, seed0=31)
    ts16 = sample_training_set(frame_seqs[:2], box_seqs[:2], 16, 16).training_set
    ts32 = sample_training_set(frame_seqs[:2], box_seqs[:2], 32, 16).training_set
    return ts16, ts32
