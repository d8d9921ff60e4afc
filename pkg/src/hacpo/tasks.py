"""Synthetic tasks with automatically verifiable binary rewards."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import BudgetError, InvalidInputError, Prompt, Tokenizer
from .policy import PolicyParams, log_softmax, score

ENUMERATION_BUDGET = 10**6


class TaskKind(str, enum.Enum):
    SUBSTRING = "SubstringMatch"
    MODSUM = "ModularSum"
    # degenerate tasks used as controls
    ALWAYS = "Always"
    NEVER = "Never"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    alphabet: str
    response_len: int
    target: str = ""
    modulus: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if self.kind is TaskKind.SUBSTRING:
            if not self.target or len(self.target) > self.response_len:
                raise InvalidInputError("SubstringMatch target must be non-empty and no longer than response_len")
            if any(ch not in self.alphabet for ch in self.target):
                raise InvalidInputError(f"target {self.target!r} is not over alphabet {self.alphabet!r}")
        if self.kind is TaskKind.MODSUM and not 1 <= self.modulus <= len(self.alphabet):
            raise InvalidInputError("ModularSum modulus must lie in [1, |alphabet|]")

    def sample_prompts(self, n: int, rng: np.random.Generator, start_id: int = 0) -> list[Prompt]:
        if self.kind is TaskKind.MODSUM:
            digits = rng.integers(0, self.modulus, size=(n, 2))
            return [Prompt(start_id + i, (int(a), int(b))) for i, (a, b) in enumerate(digits)]
        return [Prompt(start_id + i) for i in range(n)]


def verify(task: TaskSpec, prompt: Prompt, text: str) -> float:
    if any(ch not in task.alphabet for ch in text):
        raise InvalidInputError(f"response {text!r} is not over alphabet {task.alphabet!r}")
    if task.kind is TaskKind.SUBSTRING:
        return 1.0 if task.target in text else 0.0
    if task.kind is TaskKind.MODSUM:
        if len(prompt.payload) != 2:
            raise InvalidInputError("ModularSum prompts carry exactly two digits")
        want = (prompt.payload[0] + prompt.payload[1]) % task.modulus
        return 1.0 if text and task.alphabet.index(text[0]) == want else 0.0
    return 1.0 if task.kind is TaskKind.ALWAYS else 0.0


def enumerate_sequences(vocab_size: int, length: int):
    if vocab_size**length > ENUMERATION_BUDGET:
        raise BudgetError(f"{vocab_size}^{length} sequences exceed the budget of {ENUMERATION_BUDGET}")
    return itertools.product(range(vocab_size), repeat=length)


def expected_reward_bruteforce(task: TaskSpec, prompt: Prompt, params: PolicyParams, tokenizer: Tokenizer) -> float:
    """Exact ``sum_y pi(y) R(y)`` over every sequence of ``params.length`` tokens."""
    table = log_softmax(params.theta)
    terms = []
    for seq in enumerate_sequences(params.vocab_size, params.length):
        r = verify(task, prompt, tokenizer.detokenize(seq))
        if r:
            terms.append(r * math.exp(score(params, seq, prompt, table=table).total))
    return math.fsum(terms)
