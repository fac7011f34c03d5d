"""Sampling, optimization, and gradient verification for the policy head.

Training draws (utterance, truncation time, token) states from the synthetic
environment, labels them with oracle log-likelihoods at the truncated and
full audio, and optimizes the policy with Adam plus decoupled weight decay.
All randomness flows through seeded generators consumed in a fixed order, so
runs are reproducible bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError
from .losses import LabeledExample, LossWeights, align_target, total_loss, total_loss_grad
from .numerics import sigmoid
from .policy import (
    PolicyConfig,
    PolicyParams,
    PolicyVariant,
    backward_from_cache,
    forward_batch,
    forward_with_cache,
    grads_to_vector,
    init_params,
    params_to_vector,
    vector_to_params,
)
from .synth import OracleModel, utterance_hash

_INIT_STREAM = 0x51
_SAMPLE_STREAM = 0x52
_CHECK_STREAM = 0x53


@dataclass(frozen=True)
class TrainConfig:
    variant: PolicyVariant = PolicyVariant.REINA
    batch_size: int = 256
    steps: int = 5000
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    warmup_steps: int = 100
    samples_per_utterance: int | None = None
    t_grid: str = "uniform"
    rng_seed: int = 0
    objective: str = "cov"
    label_noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", PolicyVariant(self.variant))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.batch_size < 2:
            raise ConfigError("batch_size: must be >= 2 (label normalization needs a batch)")
        if self.steps < 1:
            raise ConfigError("steps: must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr: must be >= 0")
        if self.t_grid not in ("uniform", "exhaustive"):
            raise ConfigError(f"t_grid: unknown sampling rule {self.t_grid!r}")
        if self.objective not in ("cov", "mse"):
            raise ConfigError(f"objective: unknown value {self.objective!r}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps: must be >= 0")
        if self.samples_per_utterance is not None and self.samples_per_utterance < 1:
            raise ConfigError("samples_per_utterance: must be >= 1 when set")
        if not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ConfigError("rng_seed: must be a nonnegative integer")
        if self.label_noise_std < 0:
            raise ConfigError("label_noise_std: must be >= 0")


@dataclass
class StepRecord:
    step: int
    loss_total: float
    loss_cov: float
    loss_mono: float
    loss_l2: float
    loss_align: float
    grad_norm: float


@dataclass
class TrainReport:
    records: list[StepRecord]
    params: PolicyParams


class DatasetIndex:
    """Flat array view of a dataset for vectorized sampling and labeling."""

    def __init__(self, dataset, oracle: OracleModel):
        if not dataset:
            raise ConfigError("dataset: must be non-empty")
        self.oracle = oracle
        self.utterances = list(dataset)
        cfg = oracle.config
        self.n_tokens = np.array([u.n_tokens for u in self.utterances], dtype=np.int64)
        self.duration = np.array([u.duration_s for u in self.utterances], dtype=np.float64)
        self.n_frames = np.floor(self.duration / cfg.frame_s + 1e-9).astype(np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.n_tokens)[:-1]])
        self.flat_tokens = np.concatenate([u.target_tokens for u in self.utterances])
        self.flat_boundaries = np.concatenate([u.boundaries_s for u in self.utterances])
        self.flat_ambiguous = np.concatenate([u.ambiguous_mask for u in self.utterances])
        self.aligned = np.array([u.aligned for u in self.utterances], dtype=bool)
        self.utt_keys = np.array([utterance_hash(u.id) for u in self.utterances], dtype=np.uint64)

    def full_grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All (utterance, frame, token) triples, utterance-major then frame-major."""
        us, ns, js = [], [], []
        for u in range(len(self.utterances)):
            frames = self.n_frames[u] + 1
            tokens = self.n_tokens[u]
            us.append(np.full(frames * tokens, u, dtype=np.int64))
            js.append(np.repeat(np.arange(frames, dtype=np.int64), tokens))
            ns.append(np.tile(np.arange(tokens, dtype=np.int64), frames))
        return np.concatenate(us), np.concatenate(ns), np.concatenate(js)


@dataclass
class LabeledBatch:
    """Column-oriented batch of labeled states plus the adjacent-token view."""

    features: np.ndarray
    t_audio: np.ndarray
    token_index: np.ndarray
    label_partial_logp: np.ndarray
    label_full_logp: np.ndarray
    t_star: np.ndarray
    aligned: np.ndarray
    features_next: np.ndarray
    next_valid: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.label_partial_logp - self.label_full_logp

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(
            features=self.features[i],
            t_audio=float(self.t_audio[i]),
            token_index=int(self.token_index[i]),
            label_partial_logp=float(self.label_partial_logp[i]),
            label_full_logp=float(self.label_full_logp[i]),
            t_star=float(self.t_star[i]) if np.isfinite(self.t_star[i]) else None,
            aligned=bool(self.aligned[i]),
        )


def sample_batch(dataset, oracle: OracleModel, config: TrainConfig, rng,
                 index: DatasetIndex | None = None) -> LabeledBatch:
    """Draw a labeled batch of states.

    ``t_grid="uniform"`` picks utterance, frame, and token uniformly; with
    ``samples_per_utterance`` set, every utterance contributes that many
    draws.  ``t_grid="exhaustive"`` enumerates the full (frame, token) grid
    of every utterance and ignores ``batch_size``.

    ``label_noise_std`` adds seeded Gaussian noise to the truncated-audio
    log-likelihood label of each draw, standing in for the measurement noise
    a real backbone produces.  The oracle itself stays exact; only training
    labels are perturbed, and the full-audio label keeps its clean value.
    """
    idx = index if index is not None else DatasetIndex(dataset, oracle)
    cfg = oracle.config
    n_utts = len(idx.utterances)
    if config.t_grid == "exhaustive":
        u, n, j = idx.full_grid()
    elif config.samples_per_utterance is not None:
        per = config.samples_per_utterance
        u = np.repeat(np.arange(n_utts, dtype=np.int64), per)
        n = (rng.random(u.shape[0]) * idx.n_tokens[u]).astype(np.int64)
        j = (rng.random(u.shape[0]) * (idx.n_frames[u] + 1)).astype(np.int64)
    else:
        u = rng.integers(0, n_utts, config.batch_size)
        n = (rng.random(config.batch_size) * idx.n_tokens[u]).astype(np.int64)
        j = (rng.random(config.batch_size) * (idx.n_frames[u] + 1)).astype(np.int64)

    t = j * cfg.frame_s
    flat = idx.offsets[u] + n
    t_star = idx.flat_boundaries[flat]
    span = cfg.p_max - cfg.p_min
    ramp_now = sigmoid((t - t_star) / cfg.ramp_s)
    p_now = cfg.p_min + span * ramp_now
    p_full = cfg.p_min + span * sigmoid((idx.duration[u] - t_star) / cfg.ramp_s)
    label_partial = np.log(p_now)
    if config.label_noise_std > 0.0:
        label_partial = label_partial + config.label_noise_std * rng.standard_normal(u.shape[0])

    evidence = np.where(idx.flat_ambiguous[flat], 0.0, ramp_now)
    if cfg.noise_std > 0.0:
        from .synth import _hash_standard_normal  # shared keyed-noise core

        evidence = evidence + cfg.noise_std * _hash_standard_normal(cfg.rng_seed, idx.utt_keys[u], j, n)
    features = oracle.mix_features(idx.flat_tokens[flat], evidence, n / idx.n_tokens[u])

    # Adjacent-token view at the same audio prefix, for the monotonicity hinge.
    next_valid = (n + 1) < idx.n_tokens[u]
    n2 = np.minimum(n + 1, idx.n_tokens[u] - 1)
    flat2 = idx.offsets[u] + n2
    ramp2 = sigmoid((t - idx.flat_boundaries[flat2]) / cfg.ramp_s)
    evidence2 = np.where(idx.flat_ambiguous[flat2], 0.0, ramp2)
    if cfg.noise_std > 0.0:
        evidence2 = evidence2 + cfg.noise_std * _hash_standard_normal(cfg.rng_seed, idx.utt_keys[u], j, n2)
    features_next = oracle.mix_features(idx.flat_tokens[flat2], evidence2, n2 / idx.n_tokens[u])

    return LabeledBatch(
        features=features,
        t_audio=t,
        token_index=n,
        label_partial_logp=label_partial,
        label_full_logp=np.log(p_full),
        t_star=np.where(idx.aligned[u], t_star, np.nan),
        aligned=idx.aligned[u].copy(),
        features_next=features_next,
        next_valid=next_valid,
    )


class AdamW:
    """Adam with decoupled weight decay; single-threaded, deterministic."""

    def __init__(self, params: PolicyParams, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(a) for a in (*params.weights, *params.biases)]
        self.v = [np.zeros_like(a) for a in (*params.weights, *params.biases)]

    def step(self, params: PolicyParams, grads_w, grads_b, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        targets = (*params.weights, *params.biases)
        grads = (*grads_w, *grads_b)
        for target, grad, m, v in zip(targets, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            target -= lr * ((m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * target)


def _alignment_arrays(batch: LabeledBatch, weights: LossWeights):
    mask = batch.aligned & np.isfinite(batch.t_star)
    safe_star = np.where(mask, batch.t_star, 0.0)
    targets = np.where(mask, align_target(batch.t_audio, safe_star, weights.tau), 0.0)
    return targets, mask


def train(oracle: OracleModel, dataset, policy_config: PolicyConfig,
          train_config: TrainConfig, loss_weights: LossWeights) -> TrainReport:
    """Optimize the policy head; deterministic given the config seeds."""
    variant = train_config.variant
    if variant.uses_time_embedding != policy_config.use_time_embedding:
        raise ConfigError(f"variant {variant.value} requires use_time_embedding={variant.uses_time_embedding}")
    index = DatasetIndex(dataset, oracle)
    if variant.uses_alignment_loss and not index.aligned.any():
        warnings.warn("alignment-aware variant trained with zero aligned utterances; alignment term will be 0")

    params = init_params(policy_config, [train_config.rng_seed, _INIT_STREAM])
    rng = np.random.default_rng([train_config.rng_seed, _SAMPLE_STREAM])
    optimizer = AdamW(params, betas=train_config.adam_betas, eps=train_config.adam_eps,
                      weight_decay=train_config.weight_decay)
    use_mono = loss_weights.lambda_mono > 0
    records: list[StepRecord] = []

    for step in range(train_config.steps):
        batch = sample_batch(dataset, oracle, train_config, rng, index=index)
        scores, cache = forward_with_cache(params, batch.features, batch.t_audio)
        scores_next = cache_next = None
        if use_mono:
            scores_next, cache_next = forward_with_cache(params, batch.features_next, batch.t_audio)
        targets = mask = None
        if variant.uses_alignment_loss:
            targets, mask = _alignment_arrays(batch, loss_weights)

        loss_args = dict(q_next=scores_next, next_valid=batch.next_valid if use_mono else None,
                         align_targets=targets, align_mask=mask, objective=train_config.objective)
        total, breakdown = total_loss(variant, scores, batch.labels, loss_weights, **loss_args)
        for term in ("cov", "mono", "l2", "align", "total"):
            if not math.isfinite(breakdown[term]):
                raise NumericError(f"non-finite {term} loss at step {step}")

        dq, dq_next = total_loss_grad(variant, scores, batch.labels, loss_weights, **loss_args)
        grads_w, grads_b = backward_from_cache(params, cache, dq)
        if dq_next is not None and cache_next is not None:
            extra_w, extra_b = backward_from_cache(params, cache_next, dq_next)
            grads_w = [g + e for g, e in zip(grads_w, extra_w)]
            grads_b = [g + e for g, e in zip(grads_b, extra_b)]
        grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in (*grads_w, *grads_b))))

        lr = train_config.lr
        if train_config.warmup_steps:
            lr *= min(1.0, (step + 1) / train_config.warmup_steps)
        optimizer.step(params, grads_w, grads_b, lr)
        records.append(StepRecord(step=step, loss_total=breakdown["total"], loss_cov=breakdown["cov"],
                                  loss_mono=breakdown["mono"], loss_l2=breakdown["l2"],
                                  loss_align=breakdown["align"], grad_norm=grad_norm))
    return TrainReport(records=records, params=params)


TRAINING_CSV_COLUMNS = ("step", "loss_total", "loss_cov", "loss_mono", "loss_l2", "loss_align", "grad_norm")


def write_training_csv(report: TrainReport, path) -> None:
    lines = [",".join(TRAINING_CSV_COLUMNS)]
    for r in report.records:
        lines.append(",".join([str(r.step)] + [repr(float(v)) for v in (
            r.loss_total, r.loss_cov, r.loss_mono, r.loss_l2, r.loss_align, r.grad_norm)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def score_info_gain_grid(oracle: OracleModel, params: PolicyParams, dataset):
    """Policy scores and exact gains over the full (frame, token) grid of a dataset."""
    scores, gains = [], []
    for utt in dataset:
        grid = oracle.frame_grid(utt)
        tokens = utt.n_tokens
        t_rep = np.repeat(grid, tokens)
        n_rep = np.tile(np.arange(tokens, dtype=np.int64), grid.shape[0])
        feats = oracle.features_many(utt, t_rep, n_rep)
        scores.append(forward_batch(params, feats, t_rep))
        gains.append(oracle.info_gain_many(utt, t_rep, n_rep))
    return np.concatenate(scores), np.concatenate(gains)


def grad_check(policy_config: PolicyConfig, loss_weights: LossWeights, variant: PolicyVariant,
               seed: int = 0, *, objective: str = "cov", n_coords: int = 120,
               fd_step: float = 1e-5) -> float:
    """Worst relative disagreement between analytic and central-difference gradients.

    The relative error divides by max(|analytic|, |numeric|, 0.01), so tiny
    coordinates are held to a matching absolute tolerance.
    """
    variant = PolicyVariant(variant)
    if variant.uses_time_embedding != policy_config.use_time_embedding:
        raise ConfigError(f"variant {variant.value} requires use_time_embedding={variant.uses_time_embedding}")
    rng = np.random.default_rng([seed, _CHECK_STREAM])
    batch = 16
    feats = rng.standard_normal((batch, policy_config.input_dim))
    feats_next = rng.standard_normal((batch, policy_config.input_dim))
    t_audio = rng.uniform(0.0, 20.0, batch)
    labels = rng.standard_normal(batch)
    next_valid = rng.random(batch) < 0.8
    targets = rng.uniform(0.05, 0.95, batch)
    mask = rng.random(batch) < 0.7
    params = init_params(policy_config, [seed, _CHECK_STREAM + 1])

    loss_args = dict(q_next=None, next_valid=None, align_targets=targets, align_mask=mask,
                     objective=objective)
    use_mono = loss_weights.lambda_mono > 0
    if use_mono:
        loss_args.update(next_valid=next_valid)

    def loss_at(p: PolicyParams) -> float:
        scores = forward_batch(p, feats, t_audio)
        args = dict(loss_args)
        if use_mono:
            args["q_next"] = forward_batch(p, feats_next, t_audio)
        return total_loss(variant, scores, labels, loss_weights, **args)[0]

    scores, cache = forward_with_cache(params, feats, t_audio)
    args = dict(loss_args)
    if use_mono:
        scores_next, cache_next = forward_with_cache(params, feats_next, t_audio)
        args["q_next"] = scores_next
    dq, dq_next = total_loss_grad(variant, scores, labels, loss_weights, **args)
    grads_w, grads_b = backward_from_cache(params, cache, dq)
    if dq_next is not None:
        extra_w, extra_b = backward_from_cache(params, cache_next, dq_next)
        grads_w = [g + e for g, e in zip(grads_w, extra_w)]
        grads_b = [g + e for g, e in zip(grads_b, extra_b)]
    analytic = grads_to_vector(grads_w, grads_b)

    theta = params_to_vector(params)
    dim = theta.shape[0]
    coords = rng.choice(dim, size=min(n_coords, dim), replace=False)
    worst = 0.0
    for c in coords:
        bumped = theta.copy()
        bumped[c] += fd_step
        hi = loss_at(vector_to_params(policy_config, bumped))
        bumped[c] -= 2.0 * fd_step
        lo = loss_at(vector_to_params(policy_config, bumped))
        numeric = (hi - lo) / (2.0 * fd_step)
        err = abs(analytic[c] - numeric) / max(abs(analytic[c]), abs(numeric), 1e-2)
        worst = max(worst, err)
    return worst
