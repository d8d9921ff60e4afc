"""Domain types, tokenizers and the text bridge between agents with different vocabularies."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence


class HacpoError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(HacpoError, ValueError):
    pass


class HeterogeneityConfigError(HacpoError):
    """Two agents cannot exchange rollouts under the requested configuration."""


class ColdStartError(HacpoError):
    """A capability estimate was requested before any batch was recorded."""


class ConfigError(HacpoError):
    """A run or clip configuration is infeasible."""


class BudgetError(HacpoError):
    """Exhaustive enumeration would exceed the allowed number of sequences."""


class ConsistencyError(HacpoError):
    pass


AgentId = int


class HeterogeneityKind(str, enum.Enum):
    STATE = "State"
    SIZE = "Size"
    MODEL = "Model"


class TokenizerScheme(str, enum.Enum):
    CHAR = "Char"
    PAIR = "Pair"


@dataclass(frozen=True)
class Tokenizer:
    """Char or Pair tokenizer over a small ordered alphabet.

    Pair ids ``0 .. A**2 - 1`` are symbol pairs (first * A + second); ids
    ``A**2 .. A**2 + A - 1`` are single-symbol tail tokens that cover the last
    symbol of an odd-length text.
    """

    scheme: TokenizerScheme
    alphabet: str

    def __post_init__(self):
        object.__setattr__(self, "scheme", TokenizerScheme(self.scheme))
        if not self.alphabet:
            raise InvalidInputError("alphabet must be non-empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise InvalidInputError(f"alphabet has repeated symbols: {self.alphabet!r}")

    @property
    def vocab_size(self) -> int:
        a = len(self.alphabet)
        return a if self.scheme is TokenizerScheme.CHAR else a * a + a

    @property
    def vocab(self) -> list[str]:
        """Surface string of every token id, in id order."""
        if self.scheme is TokenizerScheme.CHAR:
            return list(self.alphabet)
        pairs = [x + y for x in self.alphabet for y in self.alphabet]
        return pairs + list(self.alphabet)

    def _index(self, symbol: str) -> int:
        idx = self.alphabet.find(symbol)
        if idx < 0 or len(symbol) != 1:
            raise InvalidInputError(f"symbol {symbol!r} not in alphabet {self.alphabet!r}")
        return idx

    def tokenize(self, text: str) -> list[int]:
        idx = [self._index(ch) for ch in text]
        if self.scheme is TokenizerScheme.CHAR:
            return idx
        a = len(self.alphabet)
        out = [idx[i] * a + idx[i + 1] for i in range(0, len(idx) - 1, 2)]
        if len(idx) % 2:
            out.append(a * a + idx[-1])
        return out

    def detokenize(self, tokens: Sequence[int]) -> str:
        vocab = self.vocab
        try:
            return "".join(vocab[t] for t in tokens)
        except (IndexError, TypeError):
            raise InvalidInputError(f"token id out of range for vocab of size {len(vocab)}") from None

    def accepts(self, text: str) -> bool:
        return all(ch in self.alphabet for ch in text)


def tokenize(text: str, tok: Tokenizer) -> list[int]:
    return tok.tokenize(text)


def detokenize(tokens: Sequence[int], tok: Tokenizer) -> str:
    return tok.detokenize(tokens)


@dataclass(frozen=True)
class Prompt:
    id: int
    payload: tuple[int, ...] = ()


@dataclass(frozen=True)
class Rollout:
    agent: AgentId
    prompt_id: int
    tokens: tuple[int, ...]
    text: str
    gen_logprob: float
    gen_len: int
    reward: float | None = None
    step: int = 0

    def __post_init__(self):
        if self.gen_len != len(self.tokens) or self.gen_len < 1:
            raise InvalidInputError(f"gen_len {self.gen_len} does not match {len(self.tokens)} tokens")
        if not (self.gen_logprob <= 0.0 and math.isfinite(self.gen_logprob)):
            raise InvalidInputError(f"gen_logprob must be finite and <= 0, got {self.gen_logprob}")
        if self.reward is not None and not 0.0 <= self.reward <= 1.0:
            raise InvalidInputError(f"reward must lie in [0, 1], got {self.reward}")

    def with_reward(self, reward: float) -> "Rollout":
        return Rollout(self.agent, self.prompt_id, self.tokens, self.text,
                       self.gen_logprob, self.gen_len, float(reward), self.step)

    def log_record(self) -> dict:
        return {
            "step": self.step,
            "agent": self.agent,
            "prompt_id": self.prompt_id,
            "text": self.text,
            "gen_len": self.gen_len,
            "gen_logprob": self.gen_logprob,
            "reward": self.reward,
        }


@dataclass(frozen=True)
class GroupBatch:
    """All rollouts for one prompt, G per agent."""

    prompt_id: int
    per_agent_rollouts: Mapping[AgentId, tuple[Rollout, ...]]
    joint_rewards: tuple[float, ...] = field(default=())

    def __post_init__(self):
        rollouts = {k: tuple(v) for k, v in sorted(self.per_agent_rollouts.items())}
        sizes = {len(v) for v in rollouts.values()}
        if len(sizes) != 1:
            raise InvalidInputError(f"every agent must contribute the same G, got sizes {sorted(sizes)}")
        for agent, rs in rollouts.items():
            for r in rs:
                if r.reward is None:
                    raise InvalidInputError("group rollouts must carry rewards")
                if r.agent != agent or r.prompt_id != self.prompt_id:
                    raise InvalidInputError("rollout agent/prompt does not match its slot in the group")
        object.__setattr__(self, "per_agent_rollouts", rollouts)
        joint = tuple(r.reward for rs in rollouts.values() for r in rs)
        if self.joint_rewards and Counter(self.joint_rewards) != Counter(joint):
            raise InvalidInputError("joint_rewards is not the multiset of contained rewards")
        object.__setattr__(self, "joint_rewards", joint)

    @property
    def agents(self) -> list[AgentId]:
        return list(self.per_agent_rollouts)

    @property
    def group_size(self) -> int:
        return len(next(iter(self.per_agent_rollouts.values())))

    def rewards(self, agent: AgentId) -> list[float]:
        return [r.reward for r in self.per_agent_rollouts[agent]]


def retokenize(r: Rollout, source_tok: Tokenizer, target_tok: Tokenizer) -> tuple[list[int], int]:
    """Map a rollout onto ``target_tok`` by detokenizing to text and re-encoding.

    When both tokenizers are the same the generated ids are returned unchanged.
    """
    if target_tok == source_tok:
        return list(r.tokens), r.gen_len
    if not r.text:
        raise InvalidInputError("cannot retokenize an empty response")
    if not target_tok.accepts(r.text):
        raise HeterogeneityConfigError(
            f"response {r.text!r} uses symbols outside the target alphabet {target_tok.alphabet!r}"
        )
    ids = target_tok.tokenize(r.text)
    return ids, len(ids)


def classify_heterogeneity(
    tok_a: Tokenizer,
    tok_b: Tokenizer,
    class_a: str,
    class_b: str,
    shape_a: tuple[int, ...],
    shape_b: tuple[int, ...],
) -> HeterogeneityKind:
    """Which kind of heterogeneity two agents exhibit (parameters assumed to differ)."""
    if tok_a != tok_b:
        return HeterogeneityKind.MODEL
    if class_a != class_b:
        raise HeterogeneityConfigError(
            "agents sharing a tokenizer must share a policy class to be State- or Size-heterogeneous"
        )
    if tuple(shape_a) != tuple(shape_b):
        return HeterogeneityKind.SIZE
    return HeterogeneityKind.STATE
