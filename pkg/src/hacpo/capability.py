"""Sliding-window capability estimates and the capability ratios derived from them."""

from __future__ import annotations

import copy
import math
from collections import deque
from typing import Iterable, Mapping

from .core import AgentId, ColdStartError, InvalidInputError

DEFAULT_FLOOR = 1e-3


class CapabilityTracker:
    """Per-agent ring buffer of the last ``window_size`` per-batch mean rewards.

    ``capability`` averages whatever is in the buffer, so a partially filled
    window is usable from the first recorded batch onward.
    """

    def __init__(self, window_size: int = 5, floor: float = DEFAULT_FLOOR):
        if window_size < 1:
            raise InvalidInputError("window_size must be positive")
        if floor <= 0:
            raise InvalidInputError("floor must be positive")
        self.window_size = window_size
        self.floor = floor
        self.history: dict[AgentId, deque[float]] = {}

    @classmethod
    def seeded(cls, capabilities: Mapping[AgentId, float], window_size: int = 5,
               floor: float = DEFAULT_FLOOR) -> "CapabilityTracker":
        """Tracker whose history holds exactly one batch mean per agent."""
        tracker = cls(window_size, floor)
        for agent, p in capabilities.items():
            tracker.record_mean(agent, p)
        return tracker

    def record_mean(self, agent: AgentId, mean: float) -> "CapabilityTracker":
        if not (math.isfinite(mean) and 0.0 <= mean <= 1.0):
            raise InvalidInputError(f"batch mean reward must lie in [0, 1], got {mean}")
        buf = self.history.setdefault(agent, deque(maxlen=self.window_size))
        buf.append(float(mean))
        return self

    def record_batch(self, agent: AgentId, rewards: Iterable[float]) -> "CapabilityTracker":
        rewards = list(rewards)
        if not rewards:
            raise InvalidInputError("cannot record an empty batch")
        return self.record_mean(agent, math.fsum(rewards) / len(rewards))

    def capability(self, agent: AgentId) -> float:
        buf = self.history.get(agent)
        if not buf:
            raise ColdStartError(f"agent {agent} has no recorded batches")
        return max(math.fsum(buf) / len(buf), self.floor)

    def capability_ratio(self, k: AgentId, j: AgentId) -> float:
        """Capability of ``k`` relative to ``j``."""
        if k == j:
            self.capability(k)
            return 1.0
        return self.capability(k) / self.capability(j)

    def ratio_matrix(self, agents: list[AgentId]) -> list[list[float]]:
        return [[self.capability_ratio(k, j) for j in agents] for k in agents]

    def snapshot(self) -> "CapabilityTracker":
        return copy.deepcopy(self)

    def state(self) -> list[dict]:
        return [{"agent": a, "p_hat": self.capability(a)} for a in sorted(self.history)]


def capability(tracker: CapabilityTracker, agent: AgentId) -> float:
    return tracker.capability(agent)


def capability_ratio(tracker: CapabilityTracker, k: AgentId, j: AgentId) -> float:
    return tracker.capability_ratio(k, j)


def record_batch(tracker: CapabilityTracker, agent: AgentId, rewards: Iterable[float]) -> CapabilityTracker:
    return tracker.record_batch(agent, rewards)
