"""Temporal-slowness objectives with closed-form gradients.

Pre-training minimizes, over the filter matrix W,

    lam * sum_i sum_j s(z_i[j] - z_{i+1}[j]) + sum_i ||x_i - W^T W x_i||^2

where z = sqrt(H (W x)^2 + eps_sqrt) is the pooled encoder output,
s(u) = sqrt(u^2 + eps_abs) is the smoothed absolute value that replaces
the non-differentiable L1 slowness penalty, and the pair sum (i, i+1)
runs only within each sequence, never across sequence boundaries. The
second term is a tied-weight autoencoder reconstruction cost.

Adaptation adds gamma * sum_i ||W x_i - W_old x_i||^2, a quadratic pull
toward the frozen pre-learned filters, evaluated on the target object's
own patches.

Gradients are hand-derived closed forms (no autodiff), so the
finite-difference function below is a genuinely independent oracle. All
reductions are ordered numpy sums; results do not depend on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

DEFAULT_EPS_SQRT = 1e-8
DEFAULT_EPS_ABS = 1e-8


@dataclass(frozen=True)
class ObjectiveEvaluation:
    """Objective value and its gradient with respect to every entry of W."""

    value: float
    gradient: np.ndarray  # (F, D), same shape as W

    def __post_init__(self):
        if not np.isfinite(self.value) or not np.all(np.isfinite(self.gradient)):
            raise ValueError("objective evaluation produced non-finite entries")


def _as_sequences(sequences) -> list[np.ndarray]:
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not seqs:
        raise DataError("objective undefined on empty training data")
    for s in seqs:
        if s.ndim != 2 or s.shape[0] == 0:
            raise DataError("each sequence must be a nonempty (L, D) array")
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise DataError(f"sequences have mixed dims {sorted(dims)}")
    return seqs


class SlownessObjective:
    """Slowness plus reconstruction objective over vector sequences.

    `sequences` is a list of (L_i, D) arrays; rows are consecutive-frame
    patch vectors. Use `from_training_set` for patch data.
    """

    def __init__(
        self,
        sequences,
        lam: float,
        eps_sqrt: float = DEFAULT_EPS_SQRT,
        eps_abs: float = DEFAULT_EPS_ABS,
    ):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        if eps_sqrt < 0 or eps_abs < 0:
            raise ValueError("eps values must be >= 0")
        seqs = _as_sequences(sequences)
        self.lam = float(lam)
        self.eps_sqrt = float(eps_sqrt)
        self.eps_abs = float(eps_abs)
        self._all = np.vstack(seqs)
        ranges = []
        lo = 0
        for s in seqs:
            ranges.append((lo, lo + s.shape[0]))
            lo += s.shape[0]
        self._ranges = ranges

    @property
    def dim(self) -> int:
        return self._all.shape[1]

    @property
    def n(self) -> int:
        return self._all.shape[0]

    @classmethod
    def from_training_set(cls, training_set, lam: float, **kwargs):
        return cls(training_set.sequence_arrays(), lam, **kwargs)

    def _check_w(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != self.dim:
            raise ValueError(
                f"W has shape {w.shape}, data dim is {self.dim}"
            )
        if w.shape[0] % 2 != 0 or w.shape[0] < 2:
            raise ValueError(f"filter count must be even and >= 2, got {w.shape[0]}")
        return w

    def evaluate(self, w) -> ObjectiveEvaluation:
        w = self._check_w(w)
        value, grad = self._terms(w, with_gradient=True)
        return ObjectiveEvaluation(value, grad)

    def value(self, w) -> float:
        w = self._check_w(w)
        value, _ = self._terms(w, with_gradient=False)
        return value

    def _terms(self, w, with_gradient):
        x = self._all
        a = x @ w.T  # (N, F) filter responses
        q0, q1 = a[:, ::2], a[:, 1::2]
        z = np.sqrt(q0 * q0 + q1 * q1 + self.eps_sqrt)  # (N, F/2)

        r = x - (a @ w)  # reconstruction residuals
        value = float((r * r).sum())
        grad = None
        if with_gradient:
            grad = -2.0 * (a.T @ r + w @ (r.T @ x))

        if self.lam > 0:
            p = np.zeros_like(z) if with_gradient else None
            for lo, hi in self._ranges:
                if hi - lo < 2:
                    continue
                d = z[lo : hi - 1] - z[lo + 1 : hi]
                s = np.sqrt(d * d + self.eps_abs)
                value += self.lam * float(s.sum())
                if with_gradient:
                    # derivative of s(u) is u / s(u); 0/0 only when eps_abs == 0
                    c = np.divide(d, s, out=np.zeros_like(d), where=s > 0)
                    p[lo : hi - 1] += c
                    p[lo + 1 : hi] -= c
            if with_gradient:
                ratio = np.divide(p, z, out=np.zeros_like(p), where=z > 0)
                u = np.empty_like(a)
                u[:, ::2] = ratio * q0
                u[:, 1::2] = ratio * q1
                grad += self.lam * (u.T @ x)
        return value, grad


class AdaptationObjective:
    """Slowness objective plus a quadratic pull toward frozen filters W_old."""

    def __init__(self, base: SlownessObjective, gamma: float, w_old):
        if gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {gamma}")
        w_old = np.asarray(w_old, dtype=np.float64)
        if w_old.ndim != 2 or w_old.shape[1] != base.dim:
            raise ValueError(
                f"W_old has shape {w_old.shape}, data dim is {base.dim}"
            )
        self.base = base
        self.gamma = float(gamma)
        self.w_old = w_old
        # gradient of the pull term is 2*gamma*(W - W_old) @ (X^T X)
        self._xtx = base._all.T @ base._all

    def evaluate(self, w) -> ObjectiveEvaluation:
        w = self.base._check_w(w)
        if w.shape != self.w_old.shape:
            raise ValueError(
                f"W has shape {w.shape}, W_old has shape {self.w_old.shape}"
            )
        value, grad = self.base._terms(w, with_gradient=True)
        if self.gamma > 0:
            delta = w - self.w_old
            t = self.base._all @ delta.T
            value += self.gamma * float((t * t).sum())
            grad = grad + 2.0 * self.gamma * (delta @ self._xtx)
        return ObjectiveEvaluation(value, grad)

    def value(self, w) -> float:
        w = self.base._check_w(w)
        value, _ = self.base._terms(w, with_gradient=False)
        if self.gamma > 0:
            delta = w - self.w_old
            t = self.base._all @ delta.T
            value += self.gamma * float((t * t).sum())
        return value


def eval_slowness(obj: SlownessObjective, w) -> ObjectiveEvaluation:
    return obj.evaluate(w)


def eval_adaptation(obj: AdaptationObjective, w) -> ObjectiveEvaluation:
    return obj.evaluate(w)


def finite_difference_gradient(f, w, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of the matrix W.

    The verification oracle for the analytic gradients above; O(F*D)
    evaluations, intended for small instances only.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    w = np.array(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        wp = w.copy()
        wp[idx] += h
        wm = w.copy()
        wm[idx] -= h
        grad[idx] = (f(wp) - f(wm)) / (2.0 * h)
    return grad


def as_vector_objective(obj, shape):
    """Adapt a matrix objective to the optimizer's flat-vector interface."""

    def f(x):
        ev = obj.evaluate(np.asarray(x, dtype=np.float64).reshape(shape))
        return ev.value, ev.gradient.ravel()

    return f
