"""Sequence-level importance ratios, exponential reweighting and clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AgentId, ConfigError, InvalidInputError, Rollout, Tokenizer, retokenize
from .policy import PolicyParams, score


@dataclass(frozen=True)
class ClipConfig:
    """Clip windows for own samples (``eps_*``) and for shared samples (``delta*``).

    ``step_base`` is the index given to the first mini-batch when tightening
    the lower bound.
    """

    eps_low: float = 0.0003
    eps_high: float = 0.0004
    delta: float = 0.8
    delta_step: float = 0.025
    alpha: float = 1.0
    step_base: int = 0

    def __post_init__(self):
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise ConfigError("eps_low and eps_high must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.delta_step < 0:
            raise ConfigError("delta_step must be non-negative")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.step_base not in (0, 1):
            raise ConfigError("step_base must be 0 or 1")

    def lower_bound(self, m: int) -> float:
        return 1.0 - self.delta + (m + self.step_base) * self.delta_step

    def validate(self, minibatch_count: int) -> None:
        if minibatch_count < 1:
            raise ConfigError("minibatch_count must be positive")
        last = self.lower_bound(minibatch_count - 1)
        if last >= 1.0:
            raise ConfigError(
                f"clipping.delta_step: lower bound reaches {last:.6g} >= 1.0 at mini-batch "
                f"{minibatch_count - 1} (delta={self.delta}, delta_step={self.delta_step}, M={minibatch_count})"
            )


@dataclass(frozen=True)
class RatioRecord:
    learner: AgentId
    source: AgentId
    s: float
    s_effective: float
    grad_weight: float
    clipped: bool
    discarded: bool
    minibatch_index: int


@dataclass(frozen=True)
class SeqRatio:
    s: float
    tokens: tuple[int, ...]  # response under the learner's tokenizer
    length: int
    learner_logprob: float


def seq_ratio_detail(
    learner_params: PolicyParams,
    rollout: Rollout,
    learner_tok: Tokenizer,
    source_tok: Tokenizer,
    table: np.ndarray | None = None,
) -> SeqRatio:
    tokens, n = retokenize(rollout, source_tok, learner_tok)
    logp = score(learner_params, tokens, table=table).total
    if learner_tok == source_tok:
        log_s = (logp - rollout.gen_logprob) / rollout.gen_len
    else:
        # each side normalized by its own token count
        log_s = logp / n - rollout.gen_logprob / rollout.gen_len
    return SeqRatio(math.exp(log_s), tuple(tokens), n, logp)


def seq_ratio(learner_params: PolicyParams, rollout: Rollout, learner_tok: Tokenizer,
              source_tok: Tokenizer | None = None) -> float:
    return seq_ratio_detail(learner_params, rollout, learner_tok, source_tok or learner_tok).s


def exp_reweight(s: float, alpha: float, cross: bool = True) -> tuple[float, float]:
    """Return ``(s_effective, grad_weight)``.

    Shared samples with ``s < 1`` get ``s * sg(s)**alpha``; ``grad_weight`` is
    the detached ``s**alpha`` that multiplies the gradient of ``s``.
    """
    if s <= 0:
        raise InvalidInputError(f"importance ratio must be positive, got {s}")
    if not cross or s >= 1.0 or alpha == 0:
        return s, 1.0
    w = s**alpha
    return s * w, w


def stepwise_clip(s_effective: float, cfg: ClipConfig, m: int) -> tuple[float, bool, bool]:
    """Clamp into ``[lower_bound(m), 1]``; below the lower bound the sample is discarded."""
    lo = cfg.lower_bound(m)
    if lo >= 1.0:
        raise ConfigError(f"lower clip bound {lo} at mini-batch {m} is not below 1.0")
    if s_effective < lo:
        return lo, True, True
    if s_effective > 1.0:
        return 1.0, True, False
    return s_effective, False, False


def symmetric_clip(s: float, cfg: ClipConfig) -> tuple[float, bool, bool]:
    """``[1 - delta, 1 + delta]`` window used for shared samples by the naive ablation."""
    lo, hi = 1.0 - cfg.delta, 1.0 + cfg.delta
    if s < lo:
        return lo, True, True
    if s > hi:
        return hi, True, False
    return s, False, False


def homo_clip_term(s: float, A: float, cfg: ClipConfig) -> tuple[float, bool]:
    """Pessimistic clipped term for an own sample and whether its gradient flows.

    Ties go to the unclipped branch, which is what makes the interior of the
    window differentiable.
    """
    unclipped = s * A
    clipped = min(max(s, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high) * A
    if unclipped <= clipped:
        return unclipped, True
    return clipped, False
