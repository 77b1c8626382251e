"""Linear filters with pairwise square pooling.

A patch vector x is encoded as z = sqrt(H (W x)^2 + eps): each row of W
responds linearly, responses are squared element-wise, the fixed pooling
map H sums non-overlapping adjacent pairs, and the square root brings the
result back to the input scale. Each pooled output is therefore the
Euclidean norm of a filter-response pair, which makes it invariant to
filter sign and, for quadrature pairs, to local phase. The small eps
keeps the square root differentiable at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS_SQRT = 1e-8


@dataclass(frozen=True)
class FeatureTransform:
    """The filter matrix W; rows are patch filters, F must be even."""

    weights: np.ndarray  # (F, D)

    def __post_init__(self):
        # owned contiguous copy so matmuls take one BLAS path: encodings
        # then match bit-exactly across construction and file round trips
        w = np.array(self.weights, dtype=np.float64, order="C")
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {w.shape}")
        if w.shape[0] < 2 or w.shape[0] % 2 != 0:
            raise ValueError(f"filter count must be even and >= 2, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class PoolingMap:
    """Fixed map summing adjacent response pairs: H[i, 2i] = H[i, 2i+1] = 1."""

    input_dim: int

    def __post_init__(self):
        if self.input_dim < 2 or self.input_dim % 2 != 0:
            raise ValueError(
                f"pooling input dim must be even and >= 2, got {self.input_dim}"
            )

    @property
    def output_dim(self) -> int:
        return self.input_dim // 2

    def apply(self, squared: np.ndarray) -> np.ndarray:
        """Sum adjacent pairs along the last axis."""
        squared = np.asarray(squared, dtype=np.float64)
        if squared.shape[-1] != self.input_dim:
            raise ValueError(
                f"pooling input has dim {squared.shape[-1]}, expected {self.input_dim}"
            )
        shape = squared.shape[:-1] + (self.output_dim, 2)
        return squared.reshape(shape).sum(axis=-1)

    def matrix(self) -> np.ndarray:
        """Dense H, mainly for tests and oracles."""
        h = np.zeros((self.output_dim, self.input_dim))
        h[np.arange(self.output_dim), 2 * np.arange(self.output_dim)] = 1.0
        h[np.arange(self.output_dim), 2 * np.arange(self.output_dim) + 1] = 1.0
        return h


@dataclass(frozen=True)
class LayerEncoder:
    """One learning module: filters, pairwise pooling, smoothed square root."""

    transform: FeatureTransform
    pooling: PoolingMap
    eps_sqrt: float = DEFAULT_EPS_SQRT

    def __post_init__(self):
        if self.pooling.input_dim != self.transform.rows:
            raise ValueError(
                f"pooling input dim {self.pooling.input_dim} != "
                f"filter count {self.transform.rows}"
            )
        if self.eps_sqrt < 0:
            raise ValueError(f"eps_sqrt must be >= 0, got {self.eps_sqrt}")

    @classmethod
    def create(cls, weights, eps_sqrt: float = DEFAULT_EPS_SQRT) -> "LayerEncoder":
        t = FeatureTransform(np.asarray(weights, dtype=np.float64))
        return cls(t, PoolingMap(t.rows), eps_sqrt)

    @property
    def input_dim(self) -> int:
        return self.transform.cols

    @property
    def output_dim(self) -> int:
        return self.pooling.output_dim


def encode(enc: LayerEncoder, x: np.ndarray) -> np.ndarray:
    """z[j] = sqrt((Wx)[2j]^2 + (Wx)[2j+1]^2 + eps); accepts (D,) or (N, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != enc.input_dim:
        raise ValueError(
            f"input has dim {x.shape[-1]}, encoder expects {enc.input_dim}"
        )
    a = x @ enc.transform.weights.T
    return np.sqrt(enc.pooling.apply(a * a) + enc.eps_sqrt)


def reconstruct(enc: LayerEncoder, x: np.ndarray) -> np.ndarray:
    """Tied-weight autoencoder map W^T W x; accepts (D,) or (N, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != enc.input_dim:
        raise ValueError(
            f"input has dim {x.shape[-1]}, encoder expects {enc.input_dim}"
        )
    w = enc.transform.weights
    return (x @ w.T) @ w


def filters_as_patches(transform: FeatureTransform, side: int) -> list[np.ndarray]:
    """Reshape each filter row to side x side, min-max scaled to [0, 1].

    Constant rows map to the all-0.5 image.
    """
    if side * side != transform.cols:
        raise ValueError(
            f"side {side} squared != filter length {transform.cols}"
        )
    images = []
    for row in transform.weights:
        img = row.reshape(side, side)
        lo, hi = img.min(), img.max()
        if hi - lo < 1e-15:
            images.append(np.full((side, side), 0.5))
        else:
            images.append((img - lo) / (hi - lo))
    return images
