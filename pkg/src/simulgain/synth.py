"""Synthetic streaming-translation environment with analytically known probabilities.

Utterances carry a source timeline, a target token sequence, and per-token
emission boundary times.  An :class:`OracleModel` plays the role of a frozen
translation backbone: it exposes the conditional next-token distribution at
any audio prefix, the exact benefit (in nats) of waiting for the full audio,
and the feature vectors a read/write policy gets to see.  Everything is a
pure function of the configuration seed, so datasets and oracle outputs are
reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .numerics import sigmoid

_EMBED_STREAM = 0xE1
_MIXER_STREAM = 0xE2
_DATASET_STREAM = 0xE3

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_LANE_A = _U64(0xA0761D6478BD642F)
_LANE_B = _U64(0xE7037ED1A0B428DB)


def _mix64(x: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 arithmetic wraps modulo 2**64 by design.
    z = x + _GOLDEN
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def utterance_hash(utt_id: str) -> np.uint64:
    """Stable 64-bit key for an utterance id, for counter-based noise."""
    digest = hashlib.blake2s(utt_id.encode("utf-8"), digest_size=8).digest()
    return _U64(int.from_bytes(digest, "little"))


def _hash_standard_normal(seed: int, utt_key, frame_index, token_index) -> np.ndarray:
    """Deterministic unit Gaussians keyed by (seed, utterance, frame, token).

    Counter-based (hash -> Box-Muller) so feature noise never depends on the
    order in which states are evaluated.
    """
    with np.errstate(over="ignore"):
        z = _mix64(np.asarray(utt_key, dtype=_U64) ^ _U64(seed))
        z = _mix64(z ^ np.asarray(frame_index, dtype=np.int64).astype(_U64))
        z = _mix64(z ^ np.asarray(token_index, dtype=np.int64).astype(_U64))
        h1 = _mix64(z ^ _LANE_A)
        h2 = _mix64(z ^ _LANE_B)
    u1 = ((h1 >> _U64(11)).astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
    u2 = (h2 >> _U64(11)).astype(np.float64) * 2.0**-53  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{field}: {message}")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for dataset generation and the analytic oracle."""

    vocab_size: int = 50
    frame_ms: float = 50.0
    tokens_per_utt_range: tuple[int, int] = (6, 12)
    mean_token_gap_s: float = 0.8
    gap_jitter_s: float = 0.2
    p_min: float = 0.005
    p_max: float = 0.9
    ramp_s: float = 0.25
    ambiguity_prob: float = 0.0
    feature_dim: int = 16
    noise_std: float = 0.0
    rng_seed: int = 0
    aligned_prob: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tokens_per_utt_range", tuple(int(v) for v in self.tokens_per_utt_range))
        _require(self.vocab_size >= 2, "vocab_size", "must be >= 2")
        _require(self.frame_ms > 0, "frame_ms", "must be > 0")
        lo, hi = self.tokens_per_utt_range
        _require(lo >= 1, "tokens_per_utt_range", "minimum must be >= 1")
        _require(lo <= hi, "tokens_per_utt_range", "must satisfy min <= max")
        _require(self.mean_token_gap_s > 0, "mean_token_gap_s", "must be > 0")
        _require(0 <= self.gap_jitter_s < self.mean_token_gap_s, "gap_jitter_s",
                 "must be >= 0 and < mean_token_gap_s (gaps must stay positive)")
        _require(0 < self.p_min < self.p_max < 1, "p_min", "need 0 < p_min < p_max < 1")
        _require(self.ramp_s > 0, "ramp_s", "must be > 0")
        _require(0 <= self.ambiguity_prob <= 1, "ambiguity_prob", "must lie in [0, 1]")
        _require(self.feature_dim >= 3, "feature_dim", "must be >= 3 (token embedding needs feature_dim - 2 dims)")
        _require(self.noise_std >= 0, "noise_std", "must be >= 0")
        _require(isinstance(self.rng_seed, int) and self.rng_seed >= 0, "rng_seed", "must be a nonnegative integer")
        _require(0 <= self.aligned_prob <= 1, "aligned_prob", "must lie in [0, 1]")

    @property
    def frame_s(self) -> float:
        return self.frame_ms / 1000.0


@dataclass
class Utterance:
    """One synthetic source/target pair with known emission boundaries."""

    id: str
    duration_s: float
    target_tokens: np.ndarray
    boundaries_s: np.ndarray
    ambiguous_mask: np.ndarray
    aligned: bool = True

    def __post_init__(self):
        self.target_tokens = np.asarray(self.target_tokens, dtype=np.int64)
        self.boundaries_s = np.asarray(self.boundaries_s, dtype=np.float64)
        self.ambiguous_mask = np.asarray(self.ambiguous_mask, dtype=bool)
        n = self.target_tokens.shape[0]
        if n == 0:
            raise ValueError(f"utterance {self.id}: needs at least one token")
        if self.boundaries_s.shape[0] != n or self.ambiguous_mask.shape[0] != n:
            raise ValueError(f"utterance {self.id}: per-token arrays disagree on length")
        if np.any(np.diff(self.boundaries_s) <= 0):
            raise ValueError(f"utterance {self.id}: boundaries must be strictly increasing")
        if self.boundaries_s[0] <= 0 or self.boundaries_s[-1] > self.duration_s:
            raise ValueError(f"utterance {self.id}: boundaries must lie in (0, duration_s]")

    @property
    def n_tokens(self) -> int:
        return int(self.target_tokens.shape[0])


class OracleModel:
    """Analytic next-token distribution plus the feature view exposed to policies.

    The probability assigned to the correct next token ramps from ``p_min``
    toward ``p_max`` as the consumed audio passes the token's boundary; the
    residual mass is spread uniformly over the other tokens.  Feature vectors
    are an orthogonal mix of (token embedding, evidence scalar, relative
    position) and deliberately contain no clock: for ambiguous tokens the
    evidence channel is zeroed, so the view is constant in time.
    """

    def __init__(self, config: SynthConfig):
        self.config = config
        d = config.feature_dim
        emb_rng = np.random.default_rng([config.rng_seed, _EMBED_STREAM])
        self.token_embeddings = emb_rng.standard_normal((config.vocab_size, d - 2))
        mix_rng = np.random.default_rng([config.rng_seed, _MIXER_STREAM])
        raw = mix_rng.standard_normal((d, d))
        q_mat, r_mat = np.linalg.qr(raw)
        # Fix column signs so the orthogonal mixer is unique given the seed.
        self.mixing_matrix = q_mat * np.sign(np.diag(r_mat))[None, :]

    # -- probabilities ----------------------------------------------------

    def _check_state(self, utt: Utterance, t_s: float, n: int) -> None:
        if not 0 <= n < utt.n_tokens:
            raise IndexError(f"token index {n} out of range for {utt.n_tokens}-token utterance {utt.id}")
        if not 0.0 <= t_s <= utt.duration_s + 1e-9:
            raise ValueError(f"time {t_s} outside [0, {utt.duration_s}] for utterance {utt.id}")

    def _prob_values(self, utt: Utterance, t_s, n) -> np.ndarray:
        cfg = self.config
        t_star = utt.boundaries_s[np.asarray(n, dtype=np.int64)]
        ramp = sigmoid((np.asarray(t_s, dtype=np.float64) - t_star) / cfg.ramp_s)
        return cfg.p_min + (cfg.p_max - cfg.p_min) * np.atleast_1d(ramp)

    def correct_token_prob(self, utt: Utterance, t_s: float, n: int) -> float:
        """Probability the oracle puts on the correct pending token at time t_s."""
        self._check_state(utt, t_s, n)
        return float(self._prob_values(utt, [t_s], [n])[0])

    def logprob(self, utt: Utterance, t_s: float, n: int) -> np.ndarray:
        """Full log-probability vector over the vocabulary."""
        self._check_state(utt, t_s, n)
        cfg = self.config
        p = self.correct_token_prob(utt, t_s, n)
        out = np.full(cfg.vocab_size, math.log((1.0 - p) / (cfg.vocab_size - 1)))
        out[int(utt.target_tokens[n])] = math.log(p)
        return out

    def greedy_token(self, utt: Utterance, t_s: float, n: int) -> int:
        """Greedy decode of the pending token; ties break toward the lowest id."""
        return int(np.argmax(self.logprob(utt, t_s, n)))

    def true_info_gain(self, utt: Utterance, t_s: float, n: int) -> float:
        """Exact benefit (nats) of waiting for the full audio before emitting token n."""
        self._check_state(utt, t_s, n)
        p_now = self.correct_token_prob(utt, t_s, n)
        p_full = self.correct_token_prob(utt, utt.duration_s, n)
        return math.log(p_full) - math.log(p_now)

    def info_gain_many(self, utt: Utterance, t_s, n) -> np.ndarray:
        """Vectorized :meth:`true_info_gain` over parallel (t_s, n) arrays."""
        p_now = self._prob_values(utt, t_s, n)
        p_full = self._prob_values(utt, np.full(len(p_now), utt.duration_s), n)
        return np.log(p_full) - np.log(p_now)

    # -- features ----------------------------------------------------------

    def mix_features(self, token_ids, evidence, relpos) -> np.ndarray:
        """Assemble feature rows from their parts and apply the fixed mixer."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        parts = np.empty((token_ids.shape[0], self.config.feature_dim))
        parts[:, :-2] = self.token_embeddings[token_ids]
        parts[:, -2] = evidence
        parts[:, -1] = relpos
        return parts @ self.mixing_matrix

    def evidence_many(self, utt: Utterance, t_s, n) -> np.ndarray:
        """Evidence channel values: ramp for normal tokens, 0 for ambiguous ones."""
        cfg = self.config
        t_s = np.asarray(t_s, dtype=np.float64)
        n = np.asarray(n, dtype=np.int64)
        t_star = utt.boundaries_s[n]
        ramp = np.atleast_1d(sigmoid((t_s - t_star) / cfg.ramp_s))
        ev = np.where(utt.ambiguous_mask[n], 0.0, ramp)
        if cfg.noise_std > 0.0:
            frame_index = np.rint(t_s / cfg.frame_s).astype(np.int64)
            keys = np.full(ev.shape, utterance_hash(utt.id), dtype=_U64)
            ev = ev + cfg.noise_std * _hash_standard_normal(cfg.rng_seed, keys, frame_index, n)
        return ev

    def features_many(self, utt: Utterance, t_s, n) -> np.ndarray:
        """Feature matrix for parallel (t_s, n) arrays of one utterance."""
        n = np.asarray(n, dtype=np.int64)
        evidence = self.evidence_many(utt, t_s, n)
        relpos = n / utt.n_tokens
        return self.mix_features(utt.target_tokens[n], evidence, relpos)

    def features(self, utt: Utterance, t_s: float, n: int) -> np.ndarray:
        """Feature vector the policy sees when token n is pending at time t_s."""
        self._check_state(utt, t_s, n)
        return self.features_many(utt, [t_s], [n])[0]

    # -- grids and boundaries ----------------------------------------------

    def frame_grid(self, utt: Utterance) -> np.ndarray:
        """Frame-aligned time grid over [0, duration]; the last point is exactly T."""
        frame = self.config.frame_s
        count = int(math.floor(utt.duration_s / frame + 1e-9))
        grid = np.arange(count + 1, dtype=np.float64) * frame
        if grid[-1] < utt.duration_s - 1e-9:
            grid = np.append(grid, utt.duration_s)
        else:
            grid[-1] = utt.duration_s
        return grid

    def write_boundary(self, utt: Utterance, n: int, gain_threshold: float) -> float:
        """Earliest grid time at which waiting is worth at most ``gain_threshold``."""
        if gain_threshold < 0:
            raise ConfigError("gain_threshold: must be >= 0")
        self._check_state(utt, 0.0, n)
        grid = self.frame_grid(utt)
        gains = self.info_gain_many(utt, grid, np.full(len(grid), n, dtype=np.int64))
        hits = np.nonzero(gains <= gain_threshold)[0]
        return float(grid[hits[0]])  # gain at T is exactly 0, so a hit always exists


def generate_dataset(config: SynthConfig, count: int) -> list[Utterance]:
    """Draw ``count`` utterances; byte-reproducible from ``config.rng_seed``."""
    if not isinstance(count, int) or count < 1:
        raise ConfigError("count: must be an integer >= 1")
    rng = np.random.default_rng([config.rng_seed, _DATASET_STREAM])
    frame = config.frame_s
    lo, hi = config.tokens_per_utt_range
    utterances = []
    for i in range(count):
        n_tok = int(rng.integers(lo, hi + 1))
        gaps = config.mean_token_gap_s + rng.uniform(-config.gap_jitter_s, config.gap_jitter_s, size=n_tok)
        boundaries = np.cumsum(gaps)
        frames = int(math.ceil((boundaries[-1] + config.mean_token_gap_s) / frame - 1e-9))
        duration = frames * frame
        tokens = rng.integers(0, config.vocab_size, size=n_tok)
        ambiguous = rng.random(n_tok) < config.ambiguity_prob
        aligned = bool(rng.random() < config.aligned_prob)
        utterances.append(Utterance(
            id=f"utt-{i:05d}",
            duration_s=duration,
            target_tokens=tokens,
            boundaries_s=boundaries,
            ambiguous_mask=ambiguous,
            aligned=aligned,
        ))
    return utterances


# -- serialization ----------------------------------------------------------
# One utterance per line; floats keep full round-trip precision (shortest
# repr), which exceeds the nine-significant-digit contract.

def utterance_to_json(utt: Utterance) -> str:
    record = {
        "id": utt.id,
        "duration_s": float(utt.duration_s),
        "tokens": [int(t) for t in utt.target_tokens],
        "boundaries_s": [float(b) for b in utt.boundaries_s],
        "ambiguous": [bool(a) for a in utt.ambiguous_mask],
        "aligned": bool(utt.aligned),
    }
    return json.dumps(record, separators=(",", ":"))


def utterance_from_json(line: str) -> Utterance:
    record = json.loads(line)
    return Utterance(
        id=record["id"],
        duration_s=record["duration_s"],
        target_tokens=record["tokens"],
        boundaries_s=record["boundaries_s"],
        ambiguous_mask=record["ambiguous"],
        aligned=record["aligned"],
    )


def save_dataset(utterances, path) -> None:
    text = "".join(utterance_to_json(u) + "\n" for u in utterances)
    Path(path).write_text(text, encoding="utf-8")


def load_dataset(path) -> list[Utterance]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [utterance_from_json(line) for line in lines if line.strip()]
