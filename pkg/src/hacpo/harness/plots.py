"""Matplotlib figures for the report command."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _curve(run, agent, key):
    xs, ys = [], []
    for r in run.reports:
        for p in r["per_agent"]:
            if p["agent"] == agent and p.get(key) is not None:
                xs.append(r["step"])
                ys.append(p[key])
    return xs, ys


def render_figures(runs, out_dir: Path) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    agents = sorted({a for run in runs for a in run.agents()})

    fig, axes = plt.subplots(1, len(agents), figsize=(5 * len(agents), 3.6), squeeze=False)
    for ax, agent in zip(axes[0], agents):
        for run in runs:
            key = "expected_reward" if run.reports[-1]["per_agent"][0].get("expected_reward") is not None else "mean_reward"
            xs, ys = _curve(run, agent, key)
            if xs:
                ax.plot(xs, ys, lw=1.0, label=run.name)
        ax.set_title(f"agent {agent}")
        ax.set_xlabel("step")
        ax.set_ylabel("reward")
        ax.set_ylim(-0.02, 1.02)
    if len(runs) <= 12:
        axes[0][-1].legend(fontsize=6, loc="lower right")
    fig.tight_layout()
    paths["fig_rewards"] = out_dir / "rewards.png"
    fig.savefig(paths["fig_rewards"], dpi=110)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.6))
    drawn = False
    for run in runs:
        for kind, style in (("homo", "-"), ("hete", "--")):
            pts = [(r["step"], r["ratio_stats"][f"s_{kind}_mean"]) for r in run.reports
                   if r["ratio_stats"].get(f"s_{kind}_mean") is not None]
            if pts:
                ax.plot(*zip(*pts), style, lw=1.0, label=f"{run.name} {kind}")
                drawn = True
    ax.set_xlabel("step")
    ax.set_ylabel("mean importance ratio")
    if drawn and len(runs) <= 6:
        ax.legend(fontsize=6)
    fig.tight_layout()
    paths["fig_ratios"] = out_dir / "ratios.png"
    fig.savefig(paths["fig_ratios"], dpi=110)
    plt.close(fig)
    return paths
