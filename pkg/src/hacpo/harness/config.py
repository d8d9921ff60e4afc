"""YAML run configuration: parsing, validation with field paths, and echo.

Layout::

    run:          {mode, seed, steps}
    task:         {kind, alphabet, response_len, target, modulus}
    agents:       list of {policy_class, tokenizer, init_seed, init_scale,
                           prior_text, prior_strength, max_len, length}
    optimization: {G, batch_prompts, minibatch_count, lr}
    capability:   {K, floor, window_mode}
    clipping:     {preset | alpha, delta, delta_step; eps_low, eps_high, step_base}
    logging:      {log_rollouts}
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Any

import yaml

from ..core import ConfigError, HacpoError
from ..policy import PolicyClass
from ..tasks import TaskSpec
from ..trainer import AgentConfig, Mode, RunConfig, WindowMode
from ..weighting import ClipConfig

# (alpha, delta, delta_step) per model pairing
PRESETS = {
    "qwen-instruct-pair": (3.0, 0.8, 0.01),
    "qwen-pair": (1.0, 0.8, 0.025),
    "qwen-large-pair": (3.0, 0.8, 0.025),
    "llama-pair": (1.0, 0.9, 0.01),
    "qwen-llama-small": (1.0, 0.8, 0.025),
    "qwen-llama-large": (1.0, 0.8, 0.025),
}

_SECTIONS = {"run", "task", "agents", "optimization", "capability", "clipping", "logging"}


def _section(doc: dict, name: str, allowed: set[str], required: bool = False) -> dict:
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"{name}: required section missing")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}: unknown field")
    return sec


def _need(sec: dict, path: str, key: str) -> Any:
    if key not in sec or sec[key] is None:
        raise ConfigError(f"{path}.{key}: required field missing")
    return sec[key]


def _typed(value, kind, path):
    try:
        if kind is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {value!r}") from None


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a mapping")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")

    run = _section(doc, "run", {"mode", "seed", "steps"})
    task_sec = _section(doc, "task", {"kind", "alphabet", "response_len", "target", "modulus"}, required=True)
    opt = _section(doc, "optimization", {"G", "batch_prompts", "minibatch_count", "lr"})
    cap = _section(doc, "capability", {"K", "floor", "window_mode"})
    clip = _section(doc, "clipping", {"preset", "alpha", "delta", "delta_step", "eps_low", "eps_high", "step_base"},
                    required=True)
    logging_sec = _section(doc, "logging", {"log_rollouts"})

    try:
        task = TaskSpec(
            kind=_need(task_sec, "task", "kind"),
            alphabet=str(_need(task_sec, "task", "alphabet")),
            response_len=_typed(_need(task_sec, "task", "response_len"), int, "task.response_len"),
            target=str(task_sec.get("target") or ""),
            modulus=_typed(task_sec.get("modulus") or 0, int, "task.modulus"),
        )
    except HacpoError as exc:
        raise ConfigError(f"task: {exc}") from None
    except ValueError:
        raise ConfigError(f"task.kind: unknown task kind {task_sec.get('kind')!r}") from None

    agents_doc = doc.get("agents")
    if not isinstance(agents_doc, list) or not agents_doc:
        raise ConfigError("agents: a non-empty list is required")
    allowed = {f.name for f in fields(AgentConfig)}
    agents = []
    for i, a in enumerate(agents_doc):
        path = f"agents[{i}]"
        if not isinstance(a, dict):
            raise ConfigError(f"{path}: expected a mapping")
        extra = set(a) - allowed
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}: unknown field")
        try:
            pc = PolicyClass(a.get("policy_class", PolicyClass.POSITIONAL.value))
        except ValueError:
            raise ConfigError(f"{path}.policy_class: unknown policy class {a.get('policy_class')!r}") from None
        if a.get("tokenizer", "Char") not in ("Char", "Pair"):
            raise ConfigError(f"{path}.tokenizer: expected Char or Pair")
        agents.append(AgentConfig(
            policy_class=pc,
            tokenizer=a.get("tokenizer", "Char"),
            init_seed=_typed(a.get("init_seed", i), int, f"{path}.init_seed"),
            init_scale=_typed(a.get("init_scale", 0.0), float, f"{path}.init_scale"),
            prior_text=str(a.get("prior_text") or ""),
            prior_strength=_typed(a.get("prior_strength", 0.0), float, f"{path}.prior_strength"),
            max_len=None if a.get("max_len") is None else _typed(a["max_len"], int, f"{path}.max_len"),
            length=None if a.get("length") is None else _typed(a["length"], int, f"{path}.length"),
        ))

    preset = clip.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"clipping.preset: unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
        alpha, delta, delta_step = PRESETS[preset]
        alpha = clip.get("alpha", alpha)
        delta = clip.get("delta", delta)
        delta_step = clip.get("delta_step", delta_step)
    else:
        alpha = _need(clip, "clipping", "alpha")
        delta = _need(clip, "clipping", "delta")
        delta_step = _need(clip, "clipping", "delta_step")
    try:
        clip_cfg = ClipConfig(
            eps_low=_typed(clip.get("eps_low", 0.0003), float, "clipping.eps_low"),
            eps_high=_typed(clip.get("eps_high", 0.0004), float, "clipping.eps_high"),
            delta=_typed(delta, float, "clipping.delta"),
            delta_step=_typed(delta_step, float, "clipping.delta_step"),
            alpha=_typed(alpha, float, "clipping.alpha"),
            step_base=_typed(clip.get("step_base", 0), int, "clipping.step_base"),
        )
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("clipping.") else f"clipping: {msg}") from None

    try:
        mode = Mode(run.get("mode", "HACPO"))
    except ValueError:
        raise ConfigError(f"run.mode: unknown mode {run.get('mode')!r}") from None
    try:
        window = WindowMode(cap.get("window_mode", "current"))
    except ValueError:
        raise ConfigError(f"capability.window_mode: expected current or lagged") from None

    cfg = RunConfig(
        agents=tuple(agents),
        task=task,
        G=_typed(opt.get("G", 8), int, "optimization.G"),
        batch_prompts=_typed(opt.get("batch_prompts", 16), int, "optimization.batch_prompts"),
        minibatch_count=_typed(opt.get("minibatch_count", 2), int, "optimization.minibatch_count"),
        clip=clip_cfg,
        K=_typed(cap.get("K", 5), int, "capability.K"),
        capability_floor=_typed(cap.get("floor", 1e-3), float, "capability.floor"),
        window_mode=window,
        lr=_typed(opt.get("lr", 0.5), float, "optimization.lr"),
        steps=_typed(run.get("steps", 100), int, "run.steps"),
        seed=_typed(run.get("seed", 0), int, "run.seed"),
        mode=mode,
        log_rollouts=bool(logging_sec.get("log_rollouts", False)),
    )
    try:
        cfg.validate()
    except ConfigError as exc:
        msg = str(exc)
        if msg.startswith("clipping.") or msg.startswith("agents"):
            raise
        if msg.startswith(("G:", "batch_prompts:", "minibatch_count:")):
            raise ConfigError(f"optimization.{msg}") from None
        if msg.startswith("steps:"):
            raise ConfigError(f"run.{msg}") from None
        raise
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_config(doc)


def to_document(cfg: RunConfig) -> dict:
    """Fully resolved document; parsing it back yields an identical ``RunConfig``."""
    return {
        "run": {"mode": cfg.mode.value, "seed": cfg.seed, "steps": cfg.steps},
        "task": {"kind": cfg.task.kind.value, "alphabet": cfg.task.alphabet, "response_len": cfg.task.response_len,
                 "target": cfg.task.target, "modulus": cfg.task.modulus},
        "agents": [
            {"policy_class": a.policy_class.value, "tokenizer": a.tokenizer, "init_seed": a.init_seed,
             "init_scale": a.init_scale, "prior_text": a.prior_text, "prior_strength": a.prior_strength,
             "max_len": a.max_len, "length": a.length}
            for a in cfg.agents
        ],
        "optimization": {"G": cfg.G, "batch_prompts": cfg.batch_prompts,
                         "minibatch_count": cfg.minibatch_count, "lr": cfg.lr},
        "capability": {"K": cfg.K, "floor": cfg.capability_floor, "window_mode": cfg.window_mode.value},
        "clipping": {"alpha": cfg.clip.alpha, "delta": cfg.clip.delta, "delta_step": cfg.clip.delta_step,
                     "eps_low": cfg.clip.eps_low, "eps_high": cfg.clip.eps_high, "step_base": cfg.clip.step_base},
        "logging": {"log_rollouts": cfg.log_rollouts},
    }


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(to_document(cfg), sort_keys=False))
