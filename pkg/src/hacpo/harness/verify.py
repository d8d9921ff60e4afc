"""Default instances for the verification suites and the suite dispatcher."""

from __future__ import annotations

from dataclasses import dataclass

from .. import oracle
from ..core import Prompt, Tokenizer
from ..policy import PolicyClass, init_params
from ..tasks import TaskKind, TaskSpec

SUITES = ("unbiasedness", "corollary", "alignment", "gradients")
ALIGNMENT_ALPHAS = (0.0, 1.0, 3.0)


@dataclass
class SuiteResult:
    report: oracle.VerificationReport
    gating: bool = True  # informational reports do not affect the exit code


def reference_instance():
    """Weak and strong frozen policies on a V=4, L=3 substring task."""
    tok = Tokenizer("Char", "abcd")
    task = TaskSpec(TaskKind.SUBSTRING, "abcd", 3, target="ab")
    weak = init_params(PolicyClass.POSITIONAL, tok, 3, seed=1, init_scale=0.5)
    strong = init_params(PolicyClass.POSITIONAL, tok, 3, seed=2, prior_text="ab", prior_strength=2.0)
    return [weak, strong], [tok, tok], task


def run_suite(name: str, seed: int = 0, adversarial: bool = False, trials: int | None = None) -> list[SuiteResult]:
    if name == "all":
        out = []
        for s in SUITES:
            out += run_suite(s, seed, adversarial, trials)
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")

    if name in ("unbiasedness", "corollary"):
        policies, toks, task = reference_instance()
        tracker = oracle.oracle_seeded_tracker(policies, toks, task, Prompt(0), perturb=0.5 if adversarial else 1.0)
        check = oracle.check_unbiasedness if name == "unbiasedness" else oracle.check_corollary
        return [SuiteResult(r) for r in check(policies, toks, task, tracker, G=8, trials=trials or 100_000, seed=seed)]

    if name == "alignment":
        out = []
        n = trials or 200
        for alpha in ALIGNMENT_ALPHAS:
            out.append(SuiteResult(oracle.check_alignment(n, seed, alpha=alpha, collaborator="competent")))
            out.append(SuiteResult(oracle.check_alignment(n, seed, alpha=alpha, collaborator="self")))
            adv = oracle.check_alignment(n, seed, alpha=alpha, collaborator="adversarial")
            adv.details["informational"] = True  # the collaborator violates the alignment assumption by design
            out.append(SuiteResult(adv, gating=False))
        return out

    return [SuiteResult(r) for r in oracle.check_gradients(trials or 100, seed)]
