"""Tabular autoregressive softmax policies with exact likelihoods and gradients.

Two classes are supported:

* ``PositionalTabular``: ``theta[t, v]`` is the logit of token ``v`` at
  position ``t``; positions are independent.
* ``Bigram``: ``theta[prev, v]`` conditions on the previous token, with row
  ``V`` acting as the begin-of-sequence context.

Every response has the fixed length ``length``; ``score`` accepts any length a
policy can represent so that retokenized text from other agents can be scored.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import InvalidInputError, Prompt, Rollout, Tokenizer


class PolicyClass(str, enum.Enum):
    POSITIONAL = "PositionalTabular"
    BIGRAM = "Bigram"


@dataclass(frozen=True)
class SeqLogProb:
    total: float
    per_token: tuple[float, ...]

    @property
    def len(self) -> int:
        return len(self.per_token)


@dataclass
class PolicyParams:
    policy_class: PolicyClass
    theta: np.ndarray
    length: int

    def __post_init__(self):
        self.policy_class = PolicyClass(self.policy_class)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise InvalidInputError(f"theta must be 2-D, got shape {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInputError("theta contains non-finite entries")
        if self.length < 1:
            raise InvalidInputError("response length must be >= 1")
        if self.policy_class is PolicyClass.BIGRAM:
            if self.theta.shape[0] != self.theta.shape[1] + 1:
                raise InvalidInputError(f"Bigram theta must have shape [V+1, V], got {self.theta.shape}")
        elif self.theta.shape[0] < self.length:
            raise InvalidInputError("PositionalTabular needs at least `length` rows")

    @property
    def vocab_size(self) -> int:
        return self.theta.shape[1]

    @property
    def max_len(self) -> int | None:
        """Longest scorable sequence (``None`` means unbounded)."""
        return self.theta.shape[0] if self.policy_class is PolicyClass.POSITIONAL else None

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.policy_class, self.theta.copy(), self.length)


def zeros(policy_class: PolicyClass | str, vocab_size: int, length: int, max_len: int | None = None) -> PolicyParams:
    policy_class = PolicyClass(policy_class)
    if policy_class is PolicyClass.BIGRAM:
        shape = (vocab_size + 1, vocab_size)
    else:
        shape = (max_len or length, vocab_size)
    return PolicyParams(policy_class, np.zeros(shape), length)


def init_params(
    policy_class: PolicyClass | str,
    tokenizer: Tokenizer,
    length: int,
    seed: int,
    init_scale: float = 0.0,
    max_len: int | None = None,
    prior_text: str = "",
    prior_strength: float = 0.0,
) -> PolicyParams:
    """Random logits in ``[-init_scale, init_scale]`` nudged toward ``prior_text``.

    The prior adds ``prior_strength`` to the logits that emit ``prior_text``
    token by token, which is how capability gaps between agents are staged.
    """
    params = zeros(policy_class, tokenizer.vocab_size, length, max_len)
    rng = np.random.default_rng(seed)
    if init_scale > 0:
        params.theta += rng.uniform(-init_scale, init_scale, size=params.theta.shape)
    if prior_text and prior_strength:
        ids = tokenizer.tokenize(prior_text)
        for ctx, tok in zip(_contexts(params, ids), ids):
            params.theta[ctx, tok] += prior_strength
    return params


def log_softmax(theta: np.ndarray) -> np.ndarray:
    shifted = theta - theta.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _contexts(params: PolicyParams, tokens: Sequence[int]) -> list[int]:
    """Row of ``theta`` that conditions each emitted token."""
    if params.policy_class is PolicyClass.POSITIONAL:
        return list(range(len(tokens)))
    bos = params.vocab_size
    return [bos] + [int(t) for t in tokens[:-1]]


def _check_tokens(params: PolicyParams, tokens: Sequence[int]) -> None:
    if len(tokens) == 0:
        raise InvalidInputError("cannot score an empty sequence")
    if params.max_len is not None and len(tokens) > params.max_len:
        raise InvalidInputError(f"sequence of length {len(tokens)} exceeds max_len {params.max_len}")
    for t in tokens:
        if not 0 <= t < params.vocab_size:
            raise InvalidInputError(f"token id {t} outside vocab of size {params.vocab_size}")


def score(params: PolicyParams, tokens: Sequence[int], prompt: Prompt | None = None,
          table: np.ndarray | None = None) -> SeqLogProb:
    """Exact log-likelihood of ``tokens``.  Policies ignore the prompt."""
    _check_tokens(params, tokens)
    lp = log_softmax(params.theta) if table is None else table
    per_token = tuple(float(lp[c, t]) for c, t in zip(_contexts(params, tokens), tokens))
    return SeqLogProb(math.fsum(per_token), per_token)


def grad_log_prob(params: PolicyParams, tokens: Sequence[int], prompt: Prompt | None = None) -> np.ndarray:
    _check_tokens(params, tokens)
    probs = np.exp(log_softmax(params.theta))
    grad = np.zeros_like(params.theta)
    for ctx, tok in zip(_contexts(params, tokens), tokens):
        grad[ctx] -= probs[ctx]
        grad[ctx, tok] += 1.0
    return grad


def weighted_grad(params: PolicyParams, seqs: Sequence[Sequence[int]], weights: Sequence[float]) -> np.ndarray:
    """``sum_i weights[i] * grad_log_prob(seqs[i])`` without re-normalizing per sequence."""
    probs = np.exp(log_softmax(params.theta))
    counts = np.zeros_like(params.theta)
    visits = np.zeros(params.theta.shape[0])
    for tokens, w in zip(seqs, weights):
        if w == 0.0:
            continue
        _check_tokens(params, tokens)
        for ctx, tok in zip(_contexts(params, tokens), tokens):
            counts[ctx, tok] += w
            visits[ctx] += w
    return counts - visits[:, None] * probs


def sample(
    params: PolicyParams,
    prompt: Prompt,
    rng_seed: int,
    tokenizer: Tokenizer,
    agent: int = 0,
    step: int = 0,
    table: np.ndarray | None = None,
) -> Rollout:
    """Draw one response of exactly ``params.length`` tokens (reward unset)."""
    if tokenizer.vocab_size != params.vocab_size:
        raise InvalidInputError("tokenizer vocab does not match the policy")
    lp = log_softmax(params.theta) if table is None else table
    cdf = np.cumsum(np.exp(lp), axis=1)
    u = np.random.default_rng(rng_seed).random(params.length)
    tokens: list[int] = []
    bos = params.vocab_size
    for t in range(params.length):
        ctx = t if params.policy_class is PolicyClass.POSITIONAL else (tokens[-1] if tokens else bos)
        row = cdf[ctx]
        tok = int(np.searchsorted(row, u[t] * row[-1], side="right"))
        tokens.append(min(tok, params.vocab_size - 1))
    logp = score(params, tokens, prompt, table=lp)
    return Rollout(
        agent=agent,
        prompt_id=prompt.id,
        tokens=tuple(tokens),
        text=tokenizer.detokenize(tokens),
        gen_logprob=logp.total,
        gen_len=len(tokens),
        step=step,
    )


def save_checkpoint(params: PolicyParams, path: str | Path, agent: int) -> None:
    """Write a JSON checkpoint: header fields plus ``theta`` flattened row-major."""
    doc = {
        "class": params.policy_class.value,
        "V": params.vocab_size,
        "L_max": params.theta.shape[0] if params.max_len is not None else None,
        "length": params.length,
        "agent": agent,
        "rows": params.theta.shape[0],
        "theta": [float(x) for x in params.theta.ravel()],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, int]:
    doc = json.loads(Path(path).read_text())
    theta = np.asarray(doc["theta"], dtype=np.float64).reshape(doc["rows"], doc["V"])
    return PolicyParams(doc["class"], theta, doc["length"]), doc["agent"]
