"""Small builders shared by the test modules."""

from hacpo.core import GroupBatch, Rollout, Tokenizer

CHAR_AB = Tokenizer("Char", "ab")


def rollout(agent, reward, prompt_id=0, text="ab", logprob=-1.0, tok=CHAR_AB):
    ids = tuple(tok.tokenize(text))
    return Rollout(agent, prompt_id, ids, text, logprob, len(ids), reward)


def group(rewards_by_agent, prompt_id=0):
    """GroupBatch whose agent ``k`` holds one rollout per reward in ``rewards_by_agent[k]``."""
    return GroupBatch(prompt_id, {
        k: tuple(rollout(k, r, prompt_id) for r in rs) for k, rs in rewards_by_agent.items()
    })


# acceptance outcomes, printed in the terminal summary by conftest
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record(criterion: int, passed: bool, detail: str, warning: bool = False) -> None:
    status = "PASS" if passed else ("WARN" if warning else "FAIL")
    ACCEPTANCE[criterion] = (status, detail)
