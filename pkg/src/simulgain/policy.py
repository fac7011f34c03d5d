"""Trainable read/write policy head: a small tanh MLP with hand-written backprop.

The network maps a feature vector to a single unbounded score; reading is
taken whenever the score exceeds a threshold.  Variants that are aware of
elapsed time add a sinusoidal encoding of the consumed audio duration to the
input before the first layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

_INIT_STREAM = 0xC9


class PolicyVariant(str, Enum):
    REINA = "REINA"
    REINA_TAN = "REINA_TAN"
    REINA_SAN = "REINA_SAN"
    REINA_ALL = "REINA_ALL"

    @property
    def uses_time_embedding(self) -> bool:
        return self in (PolicyVariant.REINA_TAN, PolicyVariant.REINA_ALL)

    @property
    def uses_alignment_loss(self) -> bool:
        return self in (PolicyVariant.REINA_SAN, PolicyVariant.REINA_ALL)


@dataclass(frozen=True)
class PolicyConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    use_time_embedding: bool = False
    time_embed_dim: int | None = None
    time_base: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError("input_dim: must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims: all widths must be >= 1")
        if self.time_base <= 1:
            raise ConfigError("time_base: must be > 1")
        if self.use_time_embedding:
            if self.resolved_time_dim != self.input_dim:
                raise ConfigError("time_embed_dim: must equal input_dim (the encoding is added, not concatenated)")
            if self.input_dim % 2:
                raise ConfigError("input_dim: must be even when the time embedding is enabled")

    @property
    def resolved_time_dim(self) -> int:
        return self.input_dim if self.time_embed_dim is None else self.time_embed_dim

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, 1)

    @classmethod
    def for_variant(cls, variant: PolicyVariant, input_dim: int,
                    hidden_dims: tuple[int, ...] = (64, 64), time_base: float = 100.0) -> "PolicyConfig":
        return cls(input_dim=input_dim, hidden_dims=hidden_dims,
                   use_time_embedding=variant.uses_time_embedding, time_base=time_base)


@dataclass
class PolicyParams:
    config: PolicyConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_params(config: PolicyConfig, seed=0) -> PolicyParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = config.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PolicyParams(config=config, weights=weights, biases=biases)


def time_embedding(t_audio, d: int, base: float = 100.0) -> np.ndarray:
    """Sinusoidal encoding of a continuous time value (seconds).

    Component 2i is sin(t / base**(2i/d)), component 2i+1 the matching cosine,
    so every entry lies in [-1, 1] and low indices carry the fastest clock.
    """
    if d % 2:
        raise ConfigError("time embedding dimension must be even")
    t = np.asarray(t_audio, dtype=np.float64)
    inv_period = base ** (-2.0 * np.arange(d // 2) / d)
    angles = t[..., None] * inv_period
    out = np.empty(t.shape + (d,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def _check_variant(config: PolicyConfig, variant: PolicyVariant | None) -> None:
    if variant is not None and variant.uses_time_embedding != config.use_time_embedding:
        raise ConfigError(f"variant {variant.value} incompatible with use_time_embedding={config.use_time_embedding}")


def _net_input(params: PolicyParams, features: np.ndarray, t_audio) -> np.ndarray:
    cfg = params.config
    if features.ndim != 2 or features.shape[1] != cfg.input_dim:
        raise ShapeError(f"features shape {features.shape} incompatible with input_dim={cfg.input_dim}")
    if not cfg.use_time_embedding:
        return features
    t = np.asarray(t_audio, dtype=np.float64)
    if t.shape != (features.shape[0],):
        raise ShapeError(f"t_audio shape {t.shape} does not match batch size {features.shape[0]}")
    return features + time_embedding(t, cfg.input_dim, cfg.time_base)


def forward_with_cache(params: PolicyParams, features, t_audio, variant: PolicyVariant | None = None):
    """Batched forward pass; returns (scores, per-layer activations for backprop)."""
    _check_variant(params.config, variant)
    x = _net_input(params, np.asarray(features, dtype=np.float64), t_audio)
    activations = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w + b)
        activations.append(h)
    scores = (h @ params.weights[-1] + params.biases[-1])[:, 0]
    return scores, activations


def forward_batch(params: PolicyParams, features, t_audio, variant: PolicyVariant | None = None) -> np.ndarray:
    return forward_with_cache(params, features, t_audio, variant)[0]


def forward(params: PolicyParams, features, t_audio: float, variant: PolicyVariant | None = None) -> float:
    """Score for a single state; positive-leaning scores favour reading more audio."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ShapeError(f"expected a single feature vector, got shape {features.shape}")
    scores = forward_batch(params, features[None, :], np.asarray([t_audio], dtype=np.float64), variant)
    return float(scores[0])


def backward_from_cache(params: PolicyParams, activations, upstream) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of sum(upstream * scores) w.r.t. weights and biases."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (activations[0].shape[0],):
        raise ShapeError(f"upstream shape {upstream.shape} does not match batch size {activations[0].shape[0]}")
    n_layers = len(params.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    delta = upstream[:, None]
    for i in reversed(range(n_layers)):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (1.0 - activations[i] ** 2)
    return grads_w, grads_b


def backward(params: PolicyParams, features, t_audio, upstream,
             variant: PolicyVariant | None = None) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the batched forward pass contracted with ``upstream``."""
    _, cache = forward_with_cache(params, features, t_audio, variant)
    return backward_from_cache(params, cache, upstream)


# -- flat parameter views (optimizer-agnostic helpers) -----------------------

def params_to_vector(params: PolicyParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in (*params.weights, *params.biases)])


def vector_to_params(config: PolicyConfig, vector: np.ndarray) -> PolicyParams:
    dims = config.layer_dims
    shapes = [(a, b) for a, b in zip(dims[:-1], dims[1:])] + [(b,) for b in dims[1:]]
    arrays, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.asarray(vector[offset:offset + size], dtype=np.float64).reshape(shape).copy())
        offset += size
    if offset != vector.shape[0]:
        raise ShapeError(f"vector of length {vector.shape[0]} does not match {offset} parameters")
    n_layers = len(dims) - 1
    return PolicyParams(config=config, weights=arrays[:n_layers], biases=arrays[n_layers:])


def grads_to_vector(grads_w, grads_b) -> np.ndarray:
    return np.concatenate([a.ravel() for a in (*grads_w, *grads_b)])


# -- checkpoint format --------------------------------------------------------
# Single file: one JSON header line (config + caller extras + array shapes),
# then the raw little-endian float64 arrays in declared order.  Re-saving the
# same parameters yields byte-identical files.

def save_params(params: PolicyParams, path, extra: dict | None = None) -> None:
    cfg = params.config
    arrays = [*params.weights, *params.biases]
    header = {
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "use_time_embedding": cfg.use_time_embedding,
            "time_embed_dim": cfg.time_embed_dim,
            "time_base": cfg.time_base,
        },
        "extra": extra or {},
        "shapes": [list(a.shape) for a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    blob += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    Path(path).write_bytes(blob)


def load_params(path) -> tuple[PolicyParams, dict]:
    blob = Path(path).read_bytes()
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode("utf-8"))
    cfg = header["config"]
    config = PolicyConfig(
        input_dim=cfg["input_dim"],
        hidden_dims=tuple(cfg["hidden_dims"]),
        use_time_embedding=cfg["use_time_embedding"],
        time_embed_dim=cfg["time_embed_dim"],
        time_base=cfg["time_base"],
    )
    arrays, offset = [], newline + 1
    for shape in header["shapes"]:
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(shape).astype(np.float64)
        arrays.append(arr)
        offset += size
    n_layers = len(config.layer_dims) - 1
    params = PolicyParams(config=config, weights=arrays[:n_layers], biases=arrays[n_layers:])
    return params, header["extra"]
