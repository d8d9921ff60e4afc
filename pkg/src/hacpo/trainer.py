"""Objective assembly, policy gradients and the collaborative training loop."""

from __future__ import annotations

import enum
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .advantage import AdvantageSet, hacpo_advantages
from .capability import CapabilityTracker
from .core import AgentId, ConfigError, ConsistencyError, GroupBatch, Prompt, Rollout, Tokenizer
from .policy import PolicyClass, PolicyParams, init_params, log_softmax, sample, save_checkpoint, weighted_grad
from .tasks import TaskKind, TaskSpec, verify
from .weighting import ClipConfig, RatioRecord, exp_reweight, homo_clip_term, seq_ratio_detail, stepwise_clip, symmetric_clip

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    HACPO = "HACPO"
    GSPO_SINGLE = "GSPO_single"
    GSPO_DOUBLE = "GSPO_double"
    NAIVE = "Naive"

    @property
    def shares_rollouts(self) -> bool:
        return self in (Mode.HACPO, Mode.NAIVE)


class WindowMode(str, enum.Enum):
    CURRENT = "current"  # the current batch enters the capability window before advantages
    LAGGED = "lagged"  # advantages use the window as it stood before this batch


@dataclass(frozen=True)
class AgentConfig:
    policy_class: PolicyClass = PolicyClass.POSITIONAL
    tokenizer: str = "Char"
    init_seed: int = 0
    init_scale: float = 0.0
    prior_text: str = ""
    prior_strength: float = 0.0
    max_len: int | None = None
    length: int | None = None  # defaults to the task's response_len


@dataclass(frozen=True)
class RunConfig:
    agents: tuple[AgentConfig, ...]
    task: TaskSpec
    G: int = 8
    batch_prompts: int = 16
    minibatch_count: int = 2
    clip: ClipConfig = field(default_factory=ClipConfig)
    K: int = 5
    capability_floor: float = 1e-3
    window_mode: WindowMode = WindowMode.CURRENT
    lr: float = 1.0
    steps: int = 100
    seed: int = 0
    mode: Mode = Mode.HACPO
    log_rollouts: bool = False

    def validate(self) -> None:
        if not self.agents:
            raise ConfigError("agents: at least one agent is required")
        if self.G < 2:
            raise ConfigError("G: group size must be >= 2")
        if self.steps < 0:
            raise ConfigError("steps: must be non-negative")
        if self.minibatch_count < 1:
            raise ConfigError("minibatch_count: must be positive")
        if self.batch_prompts < 1 or self.batch_prompts % self.minibatch_count:
            raise ConfigError("batch_prompts: must be a positive multiple of minibatch_count")
        self.clip.validate(self.minibatch_count)
        if self.mode in (Mode.HACPO, Mode.NAIVE):
            toks = [make_tokenizer(a, self.task) for a in self.agents]
            for k, a in enumerate(self.agents):
                for j, b in enumerate(self.agents):
                    if k == j or toks[k] == toks[j]:
                        continue
                    # longest response of j, once re-encoded for k
                    longest = _max_chars(toks[j], self._length(b))
                    need = len(toks[k].tokenize(self.task.alphabet[0] * longest))
                    cap = a.max_len or self._length(a)
                    if a.policy_class is PolicyClass.POSITIONAL and need > cap:
                        raise ConfigError(
                            f"agents[{k}].max_len: {cap} cannot score responses of agent {j} "
                            f"(up to {need} tokens after retokenization)"
                        )

    def _length(self, agent: AgentConfig) -> int:
        return agent.length or self.task.response_len


def _max_chars(tok: Tokenizer, length: int) -> int:
    return length * max(len(v) for v in tok.vocab)


def make_tokenizer(agent: AgentConfig, task: TaskSpec) -> Tokenizer:
    return Tokenizer(agent.tokenizer, task.alphabet)


@dataclass(frozen=True)
class ObjectiveTerms:
    j_homo: float
    j_hete: float
    grad_homo: np.ndarray
    grad_hete: np.ndarray
    records: list[RatioRecord]

    @property
    def grad(self) -> np.ndarray:
        return self.grad_homo + self.grad_hete


def objective_terms(
    learner: AgentId,
    params: PolicyParams,
    group: GroupBatch,
    advantages: AdvantageSet,
    tokenizers: Mapping[AgentId, Tokenizer],
    cfg: ClipConfig,
    m: int,
    naive: bool = False,
) -> ObjectiveTerms:
    """Value and gradient of the learner's objective on one prompt group.

    Own samples enter through the pessimistic clipped term; other agents'
    samples through ``clip(s_eff) * A_tilde``.  Gradients of active samples
    are ``coef * A_tilde / len * grad log pi`` with ``coef = s`` (own) or
    ``s_eff`` (shared, reweighting factor held constant).
    """
    if advantages.prompt_id != group.prompt_id or set(k for k, _ in advantages.per_rollout) != set(group.agents):
        raise ConsistencyError("advantages were not computed from this group")
    G = group.group_size
    table = log_softmax(params.theta)
    homo, hete = [], []
    seqs = {True: [], False: []}
    weights = {True: [], False: []}
    records = []
    for j, rollouts in group.per_agent_rollouts.items():
        own = j == learner
        for i, r in enumerate(rollouts):
            sr = seq_ratio_detail(params, r, tokenizers[learner], tokenizers[j], table=table)
            a = advantages.A_tilde(learner, j, i)
            if own:
                value, active = homo_clip_term(sr.s, a, cfg)
                homo.append(value)
                rec = RatioRecord(learner, j, sr.s, sr.s, 1.0, not active, False, m)
                coef = sr.s
            else:
                if naive:
                    s_eff, gw = sr.s, 1.0
                    clipped_s, clipped, discarded = symmetric_clip(s_eff, cfg)
                else:
                    s_eff, gw = exp_reweight(sr.s, cfg.alpha)
                    clipped_s, clipped, discarded = stepwise_clip(s_eff, cfg, m)
                hete.append(clipped_s * a)
                active = not clipped
                rec = RatioRecord(learner, j, sr.s, s_eff, 0.0 if discarded else gw, clipped, discarded, m)
                coef = s_eff
            records.append(rec)
            if active and a != 0.0:
                seqs[own].append(sr.tokens)
                weights[own].append(coef * a / sr.length / G)
    grad_homo, grad_hete = (weighted_grad(params, seqs[own], weights[own]) for own in (True, False))
    return ObjectiveTerms(math.fsum(homo) / G, math.fsum(hete) / G, grad_homo, grad_hete, records)


@dataclass
class AgentState:
    agent: AgentId
    tokenizer: Tokenizer
    params: PolicyParams


@dataclass
class TrainState:
    config: RunConfig
    agents: list[AgentState]
    tracker: CapabilityTracker
    step: int = 0
    rollout_log: list[dict] = field(default_factory=list)


def init_state(config: RunConfig) -> TrainState:
    config.validate()
    agents = []
    for k, a in enumerate(config.agents):
        tok = make_tokenizer(a, config.task)
        params = init_params(a.policy_class, tok, a.length or config.task.response_len, a.init_seed,
                             a.init_scale, a.max_len, a.prior_text, a.prior_strength)
        agents.append(AgentState(k, tok, params))
    return TrainState(config, agents, CapabilityTracker(config.K, config.capability_floor))


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def sample_prompts(config: RunConfig, step: int) -> list[Prompt]:
    rng = np.random.default_rng(derive_seed(config.seed, 0x5EED, step))
    return config.task.sample_prompts(config.batch_prompts, rng, start_id=step * config.batch_prompts)


def _stats(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"mean": None, "max": None, "min": None, "range": None}
    arr = np.asarray(values)
    return {"mean": float(arr.mean()), "max": float(arr.max()), "min": float(arr.min()),
            "range": float(arr.max() - arr.min())}


class _ExactValue:
    """Exact expected reward of a policy over a set of prompts, by enumeration."""

    LIMIT = 4096

    def __init__(self, task: TaskSpec, tok: Tokenizer, length: int):
        self.ok = tok.vocab_size**length <= self.LIMIT
        if not self.ok:
            return
        grids = np.meshgrid(*[np.arange(tok.vocab_size)] * length, indexing="ij")
        self.seqs = np.stack([g.ravel() for g in grids], axis=1)
        self.texts = [tok.detokenize(s) for s in self.seqs.tolist()]
        self.task = task
        self._rewards: dict[tuple, np.ndarray] = {}

    def rewards(self, prompt: Prompt) -> np.ndarray:
        key = prompt.payload if self.task.kind is TaskKind.MODSUM else ()
        if key not in self._rewards:
            self._rewards[key] = np.array([verify(self.task, prompt, t) for t in self.texts])
        return self._rewards[key]

    def __call__(self, params: PolicyParams, prompts: Sequence[Prompt]) -> float | None:
        if not self.ok:
            return None
        table = log_softmax(params.theta)
        if params.policy_class is PolicyClass.POSITIONAL:
            ctx = np.broadcast_to(np.arange(self.seqs.shape[1]), self.seqs.shape)
        else:
            ctx = np.concatenate([np.full((len(self.seqs), 1), params.vocab_size), self.seqs[:, :-1]], axis=1)
        probs = np.exp(table[ctx, self.seqs].sum(axis=1))
        uniq = {p.payload: p for p in prompts}
        return float(np.mean([probs @ self.rewards(p) for p in uniq.values()]))


def _collect(state: TrainState, prompts: list[Prompt], G: int, workers: int) -> dict[int, dict[AgentId, list[Rollout]]]:
    cfg = state.config
    t = state.step
    tables = {a.agent: log_softmax(a.params.theta) for a in state.agents}
    jobs = [(b, a, i) for b in range(len(prompts)) for a in state.agents for i in range(G)]

    def run(job):
        b, a, i = job
        r = sample(a.params, prompts[b], derive_seed(cfg.seed, t, a.agent, b, i), a.tokenizer,
                   agent=a.agent, step=t, table=tables[a.agent])
        return r.with_reward(verify(cfg.task, prompts[b], r.text))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    out: dict[int, dict[AgentId, list[Rollout]]] = {b: {a.agent: [] for a in state.agents} for b in range(len(prompts))}
    for (b, a, _), r in zip(jobs, results):
        out[b][a.agent].append(r)
    return out


def train_step(state: TrainState, prompts: list[Prompt], workers: int = 1,
               exact: Mapping[AgentId, _ExactValue] | None = None) -> tuple[TrainState, dict]:
    """One outer iteration: sample, score, record capability, then M updates per agent."""
    cfg = state.config
    mode = cfg.mode
    naive = mode is Mode.NAIVE
    G = 2 * cfg.G if mode is Mode.GSPO_DOUBLE else cfg.G
    state.step += 1
    ids = [a.agent for a in state.agents]
    toks = {a.agent: a.tokenizer for a in state.agents}

    by_prompt = _collect(state, prompts, G, workers)
    if cfg.log_rollouts:
        state.rollout_log.extend(r.log_record() for b in by_prompt for rs in by_prompt[b].values() for r in rs)
    batch_rewards = {k: [r.reward for b in by_prompt for r in by_prompt[b][k]] for k in ids}

    lagged_ready = cfg.window_mode is WindowMode.LAGGED and all(k in state.tracker.history for k in ids)
    if lagged_ready:
        snapshot = state.tracker.snapshot()
    for k in ids:
        state.tracker.record_batch(k, batch_rewards[k])
    if not lagged_ready:
        snapshot = state.tracker.snapshot()

    # groups and advantages are fixed for the whole step
    units: list[list[tuple[GroupBatch, AdvantageSet]]] = []
    for b, prompt in enumerate(prompts):
        if mode.shares_rollouts:
            groups = [GroupBatch(prompt.id, by_prompt[b])]
        else:
            groups = [GroupBatch(prompt.id, {k: by_prompt[b][k]}) for k in ids]
        units.append([(g, hacpo_advantages(g, snapshot, naive=naive)) for g in groups])

    abs_a = {k: [] for k in ids}
    abs_at: dict[str, list[float]] = {}
    for unit in units:
        for g, adv in unit:
            for (j, _), e in adv.per_rollout.items():
                abs_a[j].append(abs(e.A))
                for k, v in e.A_tilde.items():
                    if k != j:
                        abs_at.setdefault(f"{j}->{k}", []).append(abs(v))

    per_chunk = cfg.batch_prompts // cfg.minibatch_count
    per_agent = []
    records: list[RatioRecord] = []
    bounds = [cfg.clip.lower_bound(m) for m in range(cfg.minibatch_count)]
    for a in state.agents:
        j_homo, j_hete, norms = [], [], []
        for m in range(cfg.minibatch_count):
            grad = np.zeros_like(a.params.theta)
            count = 0
            for unit in units[m * per_chunk:(m + 1) * per_chunk]:
                for g, adv in unit:
                    if a.agent not in g.per_agent_rollouts:
                        continue
                    terms = objective_terms(a.agent, a.params, g, adv, toks, cfg.clip, m, naive=naive)
                    grad += terms.grad
                    j_homo.append(terms.j_homo)
                    j_hete.append(terms.j_hete)
                    records.extend(terms.records)
                    count += 1
            grad /= max(count, 1)
            norms.append(float(np.linalg.norm(grad)))
            a.params.theta += cfg.lr * grad
        per_agent.append({
            "agent": a.agent,
            "mean_reward": float(np.mean(batch_rewards[a.agent])),
            "p_hat": state.tracker.capability(a.agent),
            "objective_homo": float(np.mean(j_homo)) if j_homo else 0.0,
            "objective_hete": float(np.mean(j_hete)) if j_hete else 0.0,
            "grad_norm": float(np.mean(norms)),
            "expected_reward": exact[a.agent](a.params, prompts) if exact else None,
        })

    homo = [r.s for r in records if r.learner == r.source]
    hete = [r.s for r in records if r.learner != r.source]
    ratio_stats = {}
    for name, vals in (("s_homo", homo), ("s_hete", hete)):
        for stat, v in _stats(vals).items():
            ratio_stats[f"{name}_{stat}"] = v
    n_homo = sum(1 for r in records if r.learner == r.source)
    n_hete = len(records) - n_homo
    ratio_stats["clip_frac_homo"] = sum(r.clipped for r in records if r.learner == r.source) / n_homo if n_homo else 0.0
    ratio_stats["clip_frac_hete"] = sum(r.clipped for r in records if r.learner != r.source) / n_hete if n_hete else 0.0
    ratio_stats["discard_frac"] = sum(r.discarded for r in records) / n_hete if n_hete else 0.0

    report = {
        "step": state.step,
        "per_agent": per_agent,
        "ratio_stats": ratio_stats,
        "lower_bounds": bounds,
        "advantages": {
            "mean_abs_A": {str(k): float(np.mean(v)) for k, v in abs_a.items()},
            "mean_abs_A_tilde": {p: float(np.mean(v)) for p, v in sorted(abs_at.items())},
        },
        "tracker": state.tracker.state(),
    }
    return state, report


def report_line(report: dict) -> str:
    return json.dumps(report, sort_keys=True)


def run(config: RunConfig, out_dir: str | Path | None = None, workers: int = 1) -> list[dict]:
    """Train for ``config.steps`` steps; write metrics and checkpoints when ``out_dir`` is given."""
    state = init_state(config)
    exact = {a.agent: _ExactValue(config.task, a.tokenizer, a.params.length) for a in state.agents}
    reports = []
    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = (out / "metrics.jsonl").open("w")
    try:
        for t in range(config.steps):
            state, report = train_step(state, sample_prompts(config, t), workers=workers, exact=exact)
            reports.append(report)
            if metrics is not None:
                metrics.write(report_line(report) + "\n")
            if (t + 1) % 50 == 0:
                log.info("step %d: %s", t + 1,
                         ", ".join(f"agent {p['agent']} reward {p['mean_reward']:.3f}" for p in report["per_agent"]))
    finally:
        if metrics is not None:
            metrics.close()
    if out is not None:
        ckpt = out / "checkpoints"
        ckpt.mkdir(exist_ok=True)
        for a in state.agents:
            save_checkpoint(a.params, ckpt / f"agent_{a.agent}.json", a.agent)
        if config.log_rollouts:
            with (out / "rollouts.jsonl").open("w") as fh:
                for rec in state.rollout_log:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return reports
