"""Training objectives for the policy head.

The primary signal is a covariance objective: the mean product of the policy
score with batch-normalized likelihood-difference labels, so only the ordinal
structure of the labels matters.  Regularizers keep scores small (L2) and
nondecreasing across pending tokens at fixed audio (hinge).  Variants with
boundary supervision add a binary cross-entropy term against soft targets
derived from per-token boundary times; an MSE-on-raw-labels objective is kept
as an ablation switch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchError, ConfigError, ShapeError
from .numerics import sigmoid
from .policy import PolicyVariant


@dataclass(frozen=True)
class LossWeights:
    lambda_mono: float = 0.1
    lambda_l2: float = 0.01
    lambda_align: float = 1.0
    tau: float = 0.5
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.lambda_mono < 0 or self.lambda_l2 < 0 or self.lambda_align < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau: must be > 0")
        if self.bn_epsilon <= 0:
            raise ConfigError("bn_epsilon: must be > 0")


@dataclass(frozen=True)
class LabeledExample:
    """One (state, oracle label) pair as sampled for training."""

    features: np.ndarray
    t_audio: float
    token_index: int
    label_partial_logp: float
    label_full_logp: float
    t_star: float | None
    aligned: bool


def _as_1d(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected a 1-D array, got shape {arr.shape}")
    return arr


def batch_normalize(values, epsilon: float = 1e-5) -> np.ndarray:
    """(v - mean) / (population std + epsilon); constant batches map to zeros."""
    v = _as_1d("values", values)
    if v.shape[0] < 2:
        raise BatchError("batch normalization needs at least 2 values")
    return (v - v.mean()) / (v.std() + epsilon)


def cov_loss(q, labels, epsilon: float = 1e-5) -> float:
    """Mean of q times the batch-normalized labels; scale/shift of labels is irrelevant."""
    q = _as_1d("q", q)
    labels = _as_1d("labels", labels)
    if q.shape != labels.shape:
        raise ShapeError(f"q has length {q.shape[0]} but labels has length {labels.shape[0]}")
    return float(np.mean(q * batch_normalize(labels, epsilon)))


def mono_loss(q_sequence) -> float:
    """Hinge on adjacent pairs: zero iff the sequence is nondecreasing."""
    q = _as_1d("q_sequence", q_sequence)
    if q.shape[0] <= 1:
        return 0.0
    return float(np.maximum(0.0, q[:-1] - q[1:]).sum())


def l2_loss(q) -> float:
    q = _as_1d("q", q)
    if q.shape[0] == 0:
        return 0.0
    return float(np.mean(q * q))


def align_target(t_audio, t_star, tau: float):
    """Soft read-probability target: 1 well before the boundary, 0 well past it."""
    if tau <= 0:
        raise ConfigError("tau: must be > 0")
    return sigmoid((np.asarray(t_star, dtype=np.float64) - np.asarray(t_audio, dtype=np.float64)) / tau)


def bce_align_loss(q_logits, targets, mask=None) -> float:
    """Mean binary cross-entropy of scores-as-logits against soft targets.

    Masked-out entries contribute nothing; an all-masked batch scores 0.
    """
    q = _as_1d("q_logits", q_logits)
    y = _as_1d("targets", targets)
    if q.shape != y.shape:
        raise ShapeError(f"q_logits has length {q.shape[0]} but targets has length {y.shape[0]}")
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("targets must lie in [0, 1]")
    if mask is None:
        mask = np.ones(q.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != q.shape:
            raise ShapeError(f"mask has length {mask.shape[0]} but q_logits has length {q.shape[0]}")
    if not mask.any():
        return 0.0
    per = np.maximum(q, 0.0) - q * y + np.log1p(np.exp(-np.abs(q)))
    return float(per[mask].mean())


def mse_label_loss(q, labels) -> float:
    """Plain mean squared error against the raw, un-normalized labels."""
    q = _as_1d("q", q)
    labels = _as_1d("labels", labels)
    if q.shape != labels.shape:
        raise ShapeError(f"q has length {q.shape[0]} but labels has length {labels.shape[0]}")
    if q.shape[0] == 0:
        return 0.0
    return float(np.mean((q - labels) ** 2))


def _mono_pair_terms(q, q_next, next_valid):
    q_next = _as_1d("q_next", q_next)
    if q_next.shape != q.shape:
        raise ShapeError(f"q_next has length {q_next.shape[0]} but q has length {q.shape[0]}")
    if next_valid is None:
        valid = np.ones(q.shape[0], dtype=bool)
    else:
        valid = np.asarray(next_valid, dtype=bool)
        if valid.shape != q.shape:
            raise ShapeError(f"next_valid has length {valid.shape[0]} but q has length {q.shape[0]}")
    return q_next, valid, int(valid.sum())


def total_loss(variant: PolicyVariant, q, labels, weights: LossWeights, *,
               q_next=None, next_valid=None, align_targets=None, align_mask=None,
               objective: str = "cov") -> tuple[float, dict[str, float]]:
    """Combined objective; returns (total, weighted per-term breakdown).

    Breakdown values are the weighted contributions, so they sum to the total.
    ``align_active`` counts the examples actually used by the alignment term;
    for alignment-aware variants with no usable examples the term is 0.

    ``labels`` are always likelihood differences in the partial-minus-full
    direction.  The MSE ablation regresses the score onto the sign-flipped
    labels (the gain of waiting), so large scores keep meaning "read more".
    """
    if objective not in ("cov", "mse"):
        raise ConfigError(f"objective: unknown value {objective!r}")
    q = _as_1d("q", q)
    if objective == "cov":
        fit = cov_loss(q, labels, weights.bn_epsilon)
    else:
        fit = mse_label_loss(q, -np.asarray(labels, dtype=np.float64))

    mono = 0.0
    if q_next is not None and weights.lambda_mono > 0:
        q_next_arr, valid, n_pairs = _mono_pair_terms(q, q_next, next_valid)
        if n_pairs:
            hinge = np.maximum(0.0, q - q_next_arr)
            mono = float(hinge[valid].sum() / n_pairs)

    l2 = l2_loss(q)

    align = 0.0
    align_active = 0
    if variant.uses_alignment_loss and align_targets is not None:
        mask = align_mask if align_mask is not None else np.ones(q.shape[0], dtype=bool)
        align_active = int(np.asarray(mask, dtype=bool).sum())
        align = bce_align_loss(q, align_targets, mask)

    breakdown = {
        "cov": fit,
        "mono": weights.lambda_mono * mono,
        "l2": weights.lambda_l2 * l2,
        "align": weights.lambda_align * align if variant.uses_alignment_loss else 0.0,
        "align_active": float(align_active),
    }
    total = breakdown["cov"] + breakdown["mono"] + breakdown["l2"] + breakdown["align"]
    breakdown["total"] = total
    return total, breakdown


def total_loss_grad(variant: PolicyVariant, q, labels, weights: LossWeights, *,
                    q_next=None, next_valid=None, align_targets=None, align_mask=None,
                    objective: str = "cov") -> tuple[np.ndarray, np.ndarray | None]:
    """d(total)/dq and d(total)/dq_next for the same arguments as :func:`total_loss`."""
    if objective not in ("cov", "mse"):
        raise ConfigError(f"objective: unknown value {objective!r}")
    q = _as_1d("q", q)
    labels = _as_1d("labels", labels)
    if q.shape != labels.shape:
        raise ShapeError(f"q has length {q.shape[0]} but labels has length {labels.shape[0]}")
    batch = q.shape[0]
    if objective == "cov":
        dq = batch_normalize(labels, weights.bn_epsilon) / batch
    else:
        dq = 2.0 * (q + labels) / batch
    dq = dq + weights.lambda_l2 * 2.0 * q / batch

    dq_next = None
    if q_next is not None and weights.lambda_mono > 0:
        q_next_arr, valid, n_pairs = _mono_pair_terms(q, q_next, next_valid)
        dq_next = np.zeros(batch)
        if n_pairs:
            active = ((q - q_next_arr) > 0.0) & valid
            dq = dq + weights.lambda_mono * active / n_pairs
            dq_next = -weights.lambda_mono * active.astype(np.float64) / n_pairs

    if variant.uses_alignment_loss and align_targets is not None:
        y = _as_1d("align_targets", align_targets)
        mask = align_mask if align_mask is not None else np.ones(batch, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        n_used = int(mask.sum())
        if n_used:
            dq = dq + weights.lambda_align * (sigmoid(q) - y) * mask / n_used
    return dq, dq_next
