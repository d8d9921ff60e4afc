"""Group-relative advantages with capability-calibrated baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .capability import CapabilityTracker
from .core import AgentId, GroupBatch, InvalidInputError

DEGENERATE_TOL = 1e-8


def single_agent_advantage(rewards: Sequence[float]) -> list[float]:
    """Standard group-normalized advantage with population std."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise InvalidInputError("need at least two rewards per group")
    sigma = float(r.std())
    if sigma < DEGENERATE_TOL:
        return [0.0] * r.size
    mean = math.fsum(r) / r.size
    return [(x - mean) / sigma for x in r.tolist()]


def baseline_from_rewards(rewards: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Vectorized capability baseline.

    ``rewards`` has shape ``[..., n, G]`` and ``omega[k, j]`` is the ratio
    of learner ``k`` over source ``j``.  Returns ``[..., n]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    n, g = rewards.shape[-2:]
    return rewards.sum(axis=-1) @ np.asarray(omega, dtype=np.float64).T / (n * g)


def capability_baseline(group: GroupBatch, tracker: CapabilityTracker, k: AgentId, naive: bool = False) -> float:
    n, g = len(group.agents), group.group_size
    terms = []
    for j in group.agents:
        w = 1.0 if naive else tracker.capability_ratio(k, j)
        terms.extend(w * r for r in group.rewards(j))
    return math.fsum(terms) / (n * g)


@dataclass(frozen=True)
class AdvantageEntry:
    A: float
    A_tilde: dict[AgentId, float]  # keyed by learner
    baseline_used: float
    sigma_joint: float


@dataclass(frozen=True)
class AdvantageSet:
    prompt_id: int
    per_rollout: dict[tuple[AgentId, int], AdvantageEntry]
    omega: dict[tuple[AgentId, AgentId], float]
    sigma_joint: float
    degenerate: bool

    def A(self, agent: AgentId, i: int) -> float:
        return self.per_rollout[(agent, i)].A

    def A_tilde(self, learner: AgentId, source: AgentId, i: int) -> float:
        return self.per_rollout[(source, i)].A_tilde[learner]


def hacpo_advantages(group: GroupBatch, tracker: CapabilityTracker | None, naive: bool = False) -> AdvantageSet:
    """Advantages of every rollout in ``group`` plus their per-learner rescaling.

    A rollout of source ``j`` has ``A = (R - mu_j) / sigma_joint``; when it is
    used to update learner ``k != j`` the advantage is scaled by the ratio of
    ``j`` over ``k``.  ``naive`` sets every ratio to one.
    """
    agents = group.agents
    if naive:
        omega = {(k, j): 1.0 for k in agents for j in agents}
    else:
        if tracker is None:
            raise InvalidInputError("a capability tracker is required unless naive=True")
        omega = {(k, j): tracker.capability_ratio(k, j) for k in agents for j in agents}

    sigma = float(np.std(np.asarray(group.joint_rewards, dtype=np.float64)))
    degenerate = sigma < DEGENERATE_TOL
    baselines = {k: capability_baseline(group, tracker, k, naive=naive) for k in agents}

    entries = {}
    for j in agents:
        for i, r in enumerate(group.per_agent_rollouts[j]):
            a = 0.0 if degenerate else (r.reward - baselines[j]) / sigma
            tilde = {k: (a if k == j else omega[(j, k)] * a) for k in agents}
            entries[(j, i)] = AdvantageEntry(a, tilde, baselines[j], sigma)
    return AdvantageSet(group.prompt_id, entries, omega, sigma, degenerate)
