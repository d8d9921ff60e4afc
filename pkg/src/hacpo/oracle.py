"""Independent verifiers: exact enumeration, Monte Carlo and finite differences.

Sequence probabilities and log-likelihoods here are recomputed from the raw
logits with plain ``math`` so that agreement with the library path is
evidence rather than a tautology.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .advantage import baseline_from_rewards, hacpo_advantages
from .capability import CapabilityTracker
from .core import BudgetError, GroupBatch, Prompt, Rollout, Tokenizer
from .policy import PolicyClass, PolicyParams, grad_log_prob, sample, score
from .tasks import TaskSpec, expected_reward_bruteforce, verify
from .trainer import objective_terms
from .weighting import ClipConfig

ENUM_LIMIT = 10**6


@dataclass
class VerificationReport:
    suite: str
    trials: int
    statistic: float
    bound: float
    passed: bool
    runtime_ms: int
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _row_logprobs(row: Sequence[float]) -> list[float]:
    top = max(row)
    lse = top + math.log(math.fsum(math.exp(x - top) for x in row))
    return [x - lse for x in row]


def oracle_logprob(params: PolicyParams, tokens: Sequence[int]) -> float:
    theta = params.theta.tolist()
    bos = params.vocab_size
    total = []
    prev = bos
    for t, tok in enumerate(tokens):
        row = theta[t] if params.policy_class is PolicyClass.POSITIONAL else theta[prev]
        total.append(_row_logprobs(row)[tok])
        prev = tok
    return math.fsum(total)


def oracle_grad(params: PolicyParams, tokens: Sequence[int]) -> np.ndarray:
    theta = params.theta.tolist()
    g = np.zeros_like(params.theta)
    prev = params.vocab_size
    for t, tok in enumerate(tokens):
        ctx = t if params.policy_class is PolicyClass.POSITIONAL else prev
        probs = [math.exp(x) for x in _row_logprobs(theta[ctx])]
        for v, p in enumerate(probs):
            g[ctx, v] += (1.0 if v == tok else 0.0) - p
        prev = tok
    return g


def enumerate_distribution(params: PolicyParams) -> tuple[list[tuple[int, ...]], np.ndarray]:
    if params.vocab_size**params.length > ENUM_LIMIT:
        raise BudgetError(f"{params.vocab_size}^{params.length} sequences exceed {ENUM_LIMIT}")
    seqs = list(itertools.product(range(params.vocab_size), repeat=params.length))
    probs = np.array([math.exp(oracle_logprob(params, s)) for s in seqs])
    return seqs, probs


def exact_value(task: TaskSpec, prompt: Prompt, params: PolicyParams, tok: Tokenizer) -> float:
    seqs, probs = enumerate_distribution(params)
    rewards = [verify(task, prompt, tok.detokenize(s)) for s in seqs]
    return math.fsum(p * r for p, r in zip(probs.tolist(), rewards))


# ---------------------------------------------------------------------------
# baseline unbiasedness


def _mc_rewards(policies, tokenizers, task, prompt, G, trials, rng):
    """Reward draws of shape ``[trials, n, G]`` plus exact per-agent values."""
    draws, values = [], []
    for params, tok in zip(policies, tokenizers):
        seqs, probs = enumerate_distribution(params)
        rewards = np.array([verify(task, prompt, tok.detokenize(s)) for s in seqs])
        idx = rng.choice(len(seqs), size=(trials, G), p=probs / probs.sum())
        draws.append(rewards[idx])
        values.append(float(probs @ rewards))
    return np.stack(draws, axis=1), values


def oracle_seeded_tracker(policies, tokenizers, task, prompt, perturb: float = 1.0, window_size: int = 5):
    """Tracker holding the true expected rewards; ``perturb`` scales the last agent's entry."""
    values = [exact_value(task, prompt, p, t) for p, t in zip(policies, tokenizers)]
    caps = {k: v for k, v in enumerate(values)}
    caps[len(values) - 1] *= perturb
    return CapabilityTracker.seeded(caps, window_size=window_size)


def _baseline_draws(policies, tokenizers, task, prompt, tracker, G, trials, seed):
    rng = np.random.default_rng(seed)
    rewards, values = _mc_rewards(policies, tokenizers, task, prompt, G, trials, rng)
    n = len(policies)
    omega = np.array(tracker.ratio_matrix(list(range(n))))
    mu = baseline_from_rewards(rewards, omega)
    return rewards, mu, values, omega


def check_unbiasedness(policies, tokenizers, task: TaskSpec, tracker: CapabilityTracker, G: int = 8,
                       trials: int = 100_000, seed: int = 0, prompt: Prompt | None = None) -> list[VerificationReport]:
    """Monte Carlo mean of each agent's mixed baseline against its exact expected reward."""
    prompt = prompt or Prompt(0)
    start = time.perf_counter()
    _, mu, values, omega = _baseline_draws(policies, tokenizers, task, prompt, tracker, G, trials, seed)
    n = len(policies)
    reports = []
    for k in range(n):
        stat = float(mu[:, k].mean() - values[k])
        se = float(mu[:, k].std(ddof=1) / math.sqrt(trials))
        # what the estimator converges to under the tracker actually supplied
        target = float(sum(omega[k, j] * values[j] for j in range(n)) / n)
        reports.append(VerificationReport(
            f"unbiasedness[agent={k}]", trials, stat, 4 * se, abs(stat) <= 4 * se,
            int((time.perf_counter() - start) * 1000),
            {"exact_value": values[k], "mc_mean": float(mu[:, k].mean()), "se": se,
             "analytic_expectation": target,
             "library_bruteforce": expected_reward_bruteforce(task, prompt, policies[k], tokenizers[k])},
        ))
    return reports


def check_corollary(policies, tokenizers, task: TaskSpec, tracker: CapabilityTracker, G: int = 8,
                    trials: int = 100_000, seed: int = 0, prompt: Prompt | None = None) -> list[VerificationReport]:
    """Mean of the unnormalized advantage ``R - mu`` over each agent's own samples."""
    prompt = prompt or Prompt(0)
    start = time.perf_counter()
    rewards, mu, _, _ = _baseline_draws(policies, tokenizers, task, prompt, tracker, G, trials, seed)
    reports = []
    for k in range(len(policies)):
        per_group = (rewards[:, k, :] - mu[:, k:k + 1]).mean(axis=1)
        stat = float(per_group.mean())
        se = float(per_group.std(ddof=1) / math.sqrt(trials))
        reports.append(VerificationReport(
            f"corollary[agent={k}]", trials, stat, 4 * se, abs(stat) <= 4 * se,
            int((time.perf_counter() - start) * 1000), {"se": se},
        ))
    return reports


# ---------------------------------------------------------------------------
# gradient alignment


def _exact_gradients(learner: PolicyParams, source: PolicyParams, task, tok, alpha, form="ideal",
                     clip_cfg: ClipConfig | None = None, prompt=Prompt(0)):
    """Expected homo and hete gradients for ``learner`` at its own snapshot.

    ``form="ideal"``: every shared sample is weighted by ``s**(1+alpha)``
    and carries the learner-calibrated advantage ``R - E_P[R]``.
    ``form="trainer"``: the update actually applied, i.e. reweighting only
    below ``s = 1``, the source-calibrated advantage ``R - E_Q[R]``, and (with
    ``clip_cfg``) the first mini-batch's clip gate.
    """
    seqs, P = enumerate_distribution(learner)
    _, Q = enumerate_distribution(source)
    R = np.array([verify(task, prompt, tok.detokenize(s)) for s in seqs])
    vp, vq = float(P @ R), float(Q @ R)
    omega = vq / vp if vp > 0 else 1.0  # source over learner
    L = learner.length
    grads = [oracle_grad(learner, s) / L for s in seqs]
    g_homo = sum(P[y] * (R[y] - vp) * grads[y] for y in range(len(seqs)))
    g_hete = np.zeros_like(learner.theta)
    base = vp if form == "ideal" else vq
    for y in range(len(seqs)):
        if Q[y] == 0:
            continue
        s = (P[y] / Q[y]) ** (1.0 / L)
        coef = s ** (1.0 + alpha) if (form == "ideal" or s < 1.0) else s
        if form == "trainer" and clip_cfg is not None and not clip_cfg.lower_bound(0) <= coef <= 1.0:
            continue
        g_hete = g_hete + Q[y] * omega * coef * (R[y] - base) * grads[y]
    return g_homo, g_hete


def _random_instance(rng, vocab: int, length: int, alphabet: str, collaborator: str):
    """Random SubstringMatch task, random learner and a source built around the target.

    A competent source boosts the target symbols; an adversarial one is
    confidently wrong by exactly one symbol (a near miss).
    """
    target_len = int(rng.integers(1, length + 1))
    target = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=target_len))
    task = TaskSpec("SubstringMatch", alphabet, length, target=target)
    learner = PolicyParams("PositionalTabular", rng.uniform(-1, 1, size=(length, vocab)), length)
    theta = rng.uniform(-1, 1, size=(length, vocab))
    adversarial = collaborator == "adversarial"
    strength = rng.uniform(4.0, 8.0) if adversarial else rng.uniform(2.0, 4.0)
    offset = int(rng.integers(0, length - target_len + 1))
    miss = int(rng.integers(offset, offset + target_len))
    for t in range(offset, offset + target_len):
        want = alphabet.index(target[t - offset])
        if adversarial and t == miss:
            want = (want + 1 + int(rng.integers(0, vocab - 1))) % vocab
        theta[t, want] += strength
    source = PolicyParams("PositionalTabular", theta, length)
    return task, learner, source


def check_alignment(trials: int = 200, seed: int = 0, vocab: int = 4, length: int = 2, alpha: float = 1.0,
                    collaborator: str = "competent", clip_cfg: ClipConfig | None = None,
                    threshold: float = 0.95) -> VerificationReport:
    """Fraction of random instances where the exact hete and homo gradients align.

    ``collaborator`` is ``competent``, ``adversarial`` or ``self`` (source is
    the learner).  The pass statistic uses the idealized gradient form; the
    fraction under the trainer's gated update is reported alongside.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    alphabet = "abcdefgh"[:vocab]
    tok = Tokenizer("Char", alphabet)
    clip_cfg = clip_cfg or ClipConfig(alpha=alpha)
    positive, trainer_positive, cosines = 0, 0, []
    for _ in range(trials):
        task, learner, source = _random_instance(rng, vocab, length, alphabet,
                                                 "competent" if collaborator == "self" else collaborator)
        if collaborator == "self":
            source = learner
        g_homo, g_hete = _exact_gradients(learner, source, task, tok, alpha, "ideal")
        inner = float(np.sum(g_homo * g_hete))
        norm = float(np.linalg.norm(g_homo) * np.linalg.norm(g_hete))
        cosines.append(inner / norm if norm else 0.0)
        positive += inner > 0
        t_homo, t_hete = _exact_gradients(learner, source, task, tok, alpha, "trainer", clip_cfg)
        trainer_positive += float(np.sum(t_homo * t_hete)) > 0
    frac = positive / trials
    return VerificationReport(
        f"alignment[{collaborator}]", trials, frac, threshold, frac >= threshold,
        int((time.perf_counter() - start) * 1000),
        {"median_cosine": float(np.median(cosines)), "min_cosine": float(np.min(cosines)), "alpha": alpha,
         "trainer_form_fraction": trainer_positive / trials,
         "trainer_form_clip": {"delta": clip_cfg.delta, "delta_step": clip_cfg.delta_step}},
    )


# ---------------------------------------------------------------------------
# finite differences


def central_difference(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up, down = theta.copy(), theta.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (f(up) - f(down)) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(numeric).max(), np.abs(analytic).max())
    if scale == 0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def _with_theta(params: PolicyParams, theta: np.ndarray) -> PolicyParams:
    return PolicyParams(params.policy_class, theta, params.length)


def _random_policy(rng, cls: str, vocab: int, length: int, max_len: int | None = None) -> PolicyParams:
    rows = vocab + 1 if cls == "Bigram" else (max_len or length)
    return PolicyParams(cls, rng.normal(0, 1.0, size=(rows, vocab)), length)


def _score_instance(rng):
    cls = ["PositionalTabular", "Bigram"][int(rng.integers(0, 2))]
    vocab, length = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    params = _random_policy(rng, cls, vocab, length)
    tokens = [int(x) for x in rng.integers(0, vocab, size=length)]
    return (lambda th: score(_with_theta(params, th), tokens).total), grad_log_prob(params, tokens), params.theta


def _surrogate(learner, group, adv, toks, cfg, m, own_only: bool, hete_only: bool, alpha: float):
    """Gate-frozen surrogate rebuilt from raw likelihoods, and the gates it froze."""
    G = group.group_size
    theta0_params = learner
    frozen = []
    for j, rollouts in group.per_agent_rollouts.items():
        own = j == 0
        if (own and hete_only) or (not own and own_only):
            continue
        for i, r in enumerate(rollouts):
            ids = list(r.tokens) if toks[j] == toks[0] else toks[0].tokenize(r.text)
            a = adv.A_tilde(0, j, i)
            s0 = _ratio(theta0_params, r, ids, toks[0] == toks[j])
            if own:
                lo, hi = 1 - cfg.eps_low, 1 + cfg.eps_high
                branches = (s0 * a, min(max(s0, lo), hi) * a)
                active = branches[0] <= branches[1]
                frozen.append((ids, r, a, 1.0, active, True, branches[1]))
            else:
                w = s0**alpha if s0 < 1.0 else 1.0
                lo = cfg.lower_bound(m)
                eff = s0 * w
                active = lo <= eff <= 1.0
                frozen.append((ids, r, a, w, active, toks[0] == toks[j], min(max(eff, lo), 1.0) * a))

    def f(theta: np.ndarray) -> float:
        p = _with_theta(learner, theta)
        total = []
        for ids, r, a, w, active, same, const in frozen:
            if active:
                total.append(w * _ratio(p, r, ids, same) * a)
            else:
                total.append(const)
        return math.fsum(total) / G

    return f, [fz[4] for fz in frozen]


def _ratio(params: PolicyParams, r: Rollout, ids: Sequence[int], same_tokenizer: bool) -> float:
    lp = oracle_logprob(params, ids)
    if same_tokenizer:
        return math.exp((lp - r.gen_logprob) / r.gen_len)
    return math.exp(lp / len(ids) - r.gen_logprob / r.gen_len)


def _objective_instance(rng, part: str):
    """Random two-agent group and a learner drifted away from its snapshot."""
    alphabet = "abcd"[: int(rng.integers(2, 5))]
    length = int(rng.integers(1, 4))
    cross = part == "hete" and rng.random() < 0.3
    tok0 = Tokenizer("Char", alphabet)
    tok1 = Tokenizer("Pair" if cross else "Char", alphabet)
    cls = ["PositionalTabular", "Bigram"][int(rng.integers(0, 2))]
    old0 = _random_policy(rng, cls, tok0.vocab_size, length, max_len=2 * length)
    src = _random_policy(rng, "PositionalTabular", tok1.vocab_size, length)
    drift = 10 ** rng.uniform(-5, -1)
    learner = _with_theta(old0, old0.theta + rng.normal(0, drift, size=old0.theta.shape))
    G = int(rng.integers(2, 5))
    task = TaskSpec("SubstringMatch", alphabet, length, target=alphabet[0])
    prompt = Prompt(0)
    per_agent = {}
    for k, (p, t) in enumerate(((old0, tok0), (src, tok1))):
        rs = []
        for i in range(G):
            r = sample(p, prompt, int(rng.integers(0, 2**31)), t, agent=k)
            rs.append(r.with_reward(float(rng.random())))
        per_agent[k] = rs
    group = GroupBatch(0, per_agent)
    tracker = CapabilityTracker.seeded({0: float(rng.uniform(0.1, 1)), 1: float(rng.uniform(0.1, 1))})
    adv = hacpo_advantages(group, tracker)
    cfg = ClipConfig(eps_low=10 ** rng.uniform(-4, -1), eps_high=10 ** rng.uniform(-4, -1),
                     delta=float(rng.uniform(0.3, 0.95)), delta_step=0.01, alpha=float(rng.uniform(0, 3)))
    m = int(rng.integers(0, 3))
    terms = objective_terms(0, learner, group, adv, {0: tok0, 1: tok1}, cfg, m)
    f, gates = _surrogate(learner, group, adv, {0: tok0, 1: tok1}, cfg, m,
                          own_only=part == "homo", hete_only=part == "hete", alpha=cfg.alpha)
    analytic = terms.grad_homo if part == "homo" else terms.grad_hete
    trainer_gates = [not rec.clipped for rec in terms.records if (rec.source == 0) == (part == "homo")]
    if trainer_gates != gates:
        raise AssertionError("trainer and oracle disagree on which samples are clipped")
    return f, analytic, learner.theta


def check_gradients(trials: int = 100, seed: int = 0, hs: Sequence[float] = (1e-4, 1e-5, 1e-6),
                    tol: float = 1e-5) -> list[VerificationReport]:
    """Analytic gradients against central differences for score, homo and hete surrogates."""
    reports = []
    builders = {
        "score": _score_instance,
        "homo": lambda rng: _objective_instance(rng, "homo"),
        "hete": lambda rng: _objective_instance(rng, "hete"),
    }
    for name, build in builders.items():
        start = time.perf_counter()
        rng = np.random.default_rng([seed, len(name)])
        errors = {h: [] for h in hs}
        for _ in range(trials):
            f, analytic, theta = build(rng)
            for h in hs:
                errors[h].append(relative_error(analytic, central_difference(f, theta, h)))
        sweep = {f"{h:g}": max(v) for h, v in errors.items()}
        stat = min(sweep.values())
        reports.append(VerificationReport(
            f"gradients[{name}]", trials, stat, tol, stat < tol,
            int((time.perf_counter() - start) * 1000), {"max_error_by_h": sweep},
        ))
    return reports
