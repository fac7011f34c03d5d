"""Streaming inference: chunked reads, thresholded writes, emission logging.

The simulator advances audio in fixed chunks.  At each state it either reads
another chunk or greedily emits the pending token, recording how much source
had been consumed.  Once the source is exhausted the policy is bypassed and
every remaining token is force-emitted at the full duration, which is also
what defines a read loop: nothing was emitted before the source ran out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .policy import PolicyParams, PolicyVariant, forward
from .synth import OracleModel, Utterance

_END_EPS = 1e-12


@dataclass(frozen=True)
class StreamConfig:
    chunk_ms: float = 250.0
    alpha: float = 0.0
    max_tokens: int | None = None

    def __post_init__(self):
        if self.chunk_ms <= 0:
            raise ConfigError("chunk_ms: must be > 0")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ConfigError("max_tokens: must be >= 1 when set")

    @property
    def chunk_s(self) -> float:
        return self.chunk_ms / 1000.0


@dataclass
class EmissionLog:
    """Per-token emission record of one streaming run."""

    utt_id: str
    tokens: list[int]
    delays_s: list[float]
    duration_s: float
    n_forced: int = 0
    truncated: bool = False

    def __post_init__(self):
        if len(self.tokens) != len(self.delays_s):
            raise ValueError(f"log {self.utt_id}: tokens and delays disagree on length")
        d = np.asarray(self.delays_s, dtype=np.float64)
        if d.size:
            if np.any(np.diff(d) < 0):
                raise ValueError(f"log {self.utt_id}: delays must be nondecreasing")
            if d[0] <= 0 or d[-1] > self.duration_s + _END_EPS:
                raise ValueError(f"log {self.utt_id}: delays must lie in (0, duration_s]")


class ThresholdPolicy:
    """Read while the learned score exceeds the threshold alpha."""

    def __init__(self, oracle: OracleModel, params: PolicyParams, alpha: float,
                 variant: PolicyVariant | None = None):
        self.oracle = oracle
        self.params = params
        self.alpha = alpha
        self.variant = variant

    def wants_read(self, utt: Utterance, t_s: float, n: int, chunks_read: int, n_emitted: int) -> bool:
        score = forward(self.params, self.oracle.features(utt, t_s, n), t_s, self.variant)
        return score > self.alpha


class GainThresholdPolicy:
    """Perfectly calibrated reference policy: read while the exact gain exceeds the threshold."""

    def __init__(self, oracle: OracleModel, gain_threshold: float):
        if gain_threshold < 0 and not np.isneginf(gain_threshold):
            raise ConfigError("gain_threshold: must be >= 0 (or -inf for always-write)")
        self.oracle = oracle
        self.gain_threshold = gain_threshold

    def wants_read(self, utt: Utterance, t_s: float, n: int, chunks_read: int, n_emitted: int) -> bool:
        return self.oracle.true_info_gain(utt, t_s, n) > self.gain_threshold


class WaitKPolicy:
    """Read k chunks up front, then alternate one write with one read."""

    def __init__(self, k: int):
        if k < 0:
            raise ConfigError("k: must be >= 0")
        self.k = k

    def wants_read(self, utt: Utterance, t_s: float, n: int, chunks_read: int, n_emitted: int) -> bool:
        return n_emitted > chunks_read - self.k


def wait_k_policy(k: int) -> WaitKPolicy:
    return WaitKPolicy(k)


def simulate(oracle: OracleModel, utt: Utterance, policy, config: StreamConfig) -> EmissionLog:
    """Run one utterance through the chunked read/write loop.

    The first decision happens after one chunk has been consumed, so every
    delay is strictly positive.  Audio never rewinds; several tokens may be
    emitted at the same prefix.
    """
    n_total = utt.n_tokens
    duration = utt.duration_s
    cap = config.max_tokens if config.max_tokens is not None else 4 * n_total
    if cap < n_total:
        raise ConfigError(f"max_tokens: {cap} is below the {n_total} tokens of utterance {utt.id}")
    chunk = config.chunk_s
    chunks_read = 1
    t = min(chunks_read * chunk, duration)
    tokens: list[int] = []
    delays: list[float] = []
    n_forced = 0
    truncated = False
    pending = 0
    while pending < n_total:
        if len(tokens) >= cap:
            truncated = True
            break
        if t >= duration - _END_EPS:
            tokens.append(oracle.greedy_token(utt, duration, pending))
            delays.append(duration)
            n_forced += 1
            pending += 1
            continue
        if policy.wants_read(utt, t, pending, chunks_read, pending):
            chunks_read += 1
            t = min(chunks_read * chunk, duration)
        else:
            tokens.append(oracle.greedy_token(utt, t, pending))
            delays.append(t)
            pending += 1
    return EmissionLog(utt_id=utt.id, tokens=tokens, delays_s=delays,
                       duration_s=duration, n_forced=n_forced, truncated=truncated)


def detect_read_loop(log: EmissionLog) -> bool:
    """True iff nothing was emitted before the source was exhausted."""
    if not log.delays_s:
        return True
    return log.delays_s[0] >= log.duration_s - _END_EPS


def sweep(oracle: OracleModel, params: PolicyParams | None, dataset, alphas,
          config: StreamConfig, variant: PolicyVariant | None = None,
          policy_factory=None, collect_logs: bool = False):
    """Simulate the whole dataset at each threshold; one operating point per alpha.

    ``policy_factory(alpha)`` overrides the default threshold policy, which
    lets reference policies reuse the same harness.  Output order follows the
    input alphas.
    """
    from .metrics import ParetoPoint, bleu, laal, read_loop_pct  # deferred: metrics consumes logs

    alphas = list(alphas)
    if not alphas:
        raise ConfigError("alphas: must be non-empty")
    if policy_factory is None:
        if params is None:
            raise ConfigError("params: required unless a policy_factory is given")
        policy_factory = lambda alpha: ThresholdPolicy(oracle, params, alpha, variant)
    refs = [list(u.target_tokens) for u in dataset]
    points = []
    logs_by_alpha: dict[float, list[EmissionLog]] = {}
    for alpha in alphas:
        policy = policy_factory(alpha)
        logs = [simulate(oracle, utt, policy, config) for utt in dataset]
        mean_laal = float(np.mean([laal(log, utt.n_tokens) for log, utt in zip(logs, dataset)]))
        quality = bleu([log.tokens for log in logs], refs)
        points.append(ParetoPoint(alpha=float(alpha), mean_laal_s=mean_laal,
                                  quality=quality, read_loop_pct=read_loop_pct(logs)))
        if collect_logs:
            logs_by_alpha[float(alpha)] = logs
    if collect_logs:
        return points, logs_by_alpha
    return points


# -- serialization ------------------------------------------------------------
# One emission log per line; this is the contract between the simulator and
# the metrics stage, and what external tooling consumes.

def emission_log_to_json(log: EmissionLog) -> str:
    record = {
        "utt_id": log.utt_id,
        "tokens": [int(t) for t in log.tokens],
        "delays_s": [float(d) for d in log.delays_s],
        "T": float(log.duration_s),
        "forced_tail": int(log.n_forced),
        "read_loop": detect_read_loop(log),
    }
    return json.dumps(record, separators=(",", ":"))


def emission_log_from_json(line: str) -> EmissionLog:
    record = json.loads(line)
    return EmissionLog(utt_id=record["utt_id"], tokens=record["tokens"],
                       delays_s=record["delays_s"], duration_s=record["T"],
                       n_forced=record["forced_tail"])


def save_logs(logs, path) -> None:
    Path(path).write_text("".join(emission_log_to_json(log) + "\n" for log in logs), encoding="utf-8")


def load_logs(path) -> list[EmissionLog]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [emission_log_from_json(line) for line in lines if line.strip()]
