"""Aggregate run directories into CSV tables and figures."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path

import yaml

from ..core import HacpoError

log = logging.getLogger(__name__)

TAIL_FRACTION = 0.1  # final reward falls back to the mean over this tail of steps


class NoDataError(HacpoError):
    pass


@dataclass
class RunRecord:
    name: str
    path: Path
    config: dict
    reports: list[dict]

    @property
    def mode(self) -> str:
        return self.config.get("run", {}).get("mode", "unknown")

    @property
    def seed(self):
        return self.config.get("run", {}).get("seed")

    @property
    def pair_key(self) -> str:
        """Everything except mode and seed; runs sharing it are comparable."""
        doc = json.loads(json.dumps(self.config))
        doc.get("run", {}).pop("mode", None)
        doc.get("run", {}).pop("seed", None)
        return json.dumps(doc, sort_keys=True)

    def agents(self) -> list[int]:
        return [p["agent"] for p in self.reports[-1]["per_agent"]] if self.reports else []

    def final_reward(self, agent: int) -> float:
        last = _agent_row(self.reports[-1], agent)
        if last.get("expected_reward") is not None:
            return float(last["expected_reward"])
        tail = max(1, int(len(self.reports) * TAIL_FRACTION))
        return statistics.fmean(_agent_row(r, agent)["mean_reward"] for r in self.reports[-tail:])


def _agent_row(report: dict, agent: int) -> dict:
    for row in report["per_agent"]:
        if row["agent"] == agent:
            return row
    raise KeyError(agent)


def load_runs(runs_dir: str | Path) -> list[RunRecord]:
    root = Path(runs_dir)
    if not root.is_dir():
        raise NoDataError(f"{root}: not a directory")
    runs = []
    for metrics in sorted(root.rglob("metrics.jsonl")):
        lines = [ln for ln in metrics.read_text().splitlines() if ln.strip()]
        if not lines:
            log.warning("skipping %s: no steps recorded", metrics)
            continue
        cfg_path = metrics.parent / "config.yaml"
        config = yaml.safe_load(cfg_path.read_text()) if cfg_path.exists() else {}
        name = metrics.parent.relative_to(root).as_posix()
        runs.append(RunRecord(name if name != "." else root.name, metrics.parent, config or {},
                              [json.loads(ln) for ln in lines]))
    if not runs:
        raise NoDataError(f"{root}: no runs with metrics found")
    return runs


def summary_rows(runs: list[RunRecord]) -> list[dict]:
    rows = []
    for run in runs:
        for agent in run.agents():
            series = [_agent_row(r, agent)["mean_reward"] for r in run.reports]
            rows.append({
                "run": run.name,
                "mode": run.mode,
                "seed": run.seed,
                "agent": agent,
                "steps": len(run.reports),
                "final_reward": run.final_reward(agent),
                "mean_batch_reward": statistics.fmean(series),
                "final_p_hat": _agent_row(run.reports[-1], agent)["p_hat"],
            })
    return rows


def paired_deltas(runs: list[RunRecord], reference: str = "HACPO") -> list[dict]:
    """Per seed and agent: reference-mode final reward minus each other mode's."""
    groups: dict[str, dict[tuple, RunRecord]] = {}
    for run in runs:
        groups.setdefault(run.pair_key, {})[(run.mode, run.seed)] = run
    rows = []
    for members in groups.values():
        for (mode, seed), ref in sorted(members.items(), key=lambda kv: str(kv[0])):
            if mode != reference:
                continue
            for (other_mode, other_seed), other in sorted(members.items(), key=lambda kv: str(kv[0])):
                if other_seed != seed or other_mode == reference:
                    continue
                for agent in ref.agents():
                    if agent not in other.agents():
                        continue
                    a, b = ref.final_reward(agent), other.final_reward(agent)
                    rows.append({"baseline": other_mode, "seed": seed, "agent": agent,
                                 "reference": a, "baseline_reward": b, "delta": a - b})
    return rows


def delta_summary(deltas: list[dict]) -> list[dict]:
    out = {}
    for row in deltas:
        out.setdefault((row["baseline"], row["agent"]), []).append(row["delta"])
    return [
        {"baseline": b, "agent": agent, "pairs": len(ds), "median_delta": statistics.median(ds),
         "wins": sum(d > 0 for d in ds), "ties": sum(d == 0 for d in ds)}
        for (b, agent), ds in sorted(out.items())
    ]


def ratio_rows(runs: list[RunRecord]) -> list[dict]:
    """Mean/max/min/range of the per-step mean ratio, for own and shared samples."""
    rows = []
    for run in runs:
        for kind in ("homo", "hete"):
            vals = [r["ratio_stats"][f"s_{kind}_mean"] for r in run.reports
                    if r["ratio_stats"].get(f"s_{kind}_mean") is not None]
            if not vals:
                continue
            rows.append({"run": run.name, "mode": run.mode, "kind": kind, "mean": statistics.fmean(vals),
                         "max": max(vals), "min": min(vals), "range": max(vals) - min(vals)})
    return rows


def plot_rows(runs: list[RunRecord]) -> list[dict]:
    rows = []
    for run in runs:
        for r in run.reports:
            for p in r["per_agent"]:
                rows.append({"run": run.name, "step": r["step"], "series": f"agent{p['agent']}.mean_reward",
                             "value": p["mean_reward"]})
                if p.get("expected_reward") is not None:
                    rows.append({"run": run.name, "step": r["step"], "series": f"agent{p['agent']}.expected_reward",
                                 "value": p["expected_reward"]})
                rows.append({"run": run.name, "step": r["step"], "series": f"agent{p['agent']}.p_hat",
                             "value": p["p_hat"]})
            for kind in ("homo", "hete"):
                v = r["ratio_stats"].get(f"s_{kind}_mean")
                if v is not None:
                    rows.append({"run": run.name, "step": r["step"], "series": f"s_{kind}_mean", "value": v})
    return rows


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else v


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [[str(_fmt(r.get(c))) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


SUMMARY_COLUMNS = ["run", "mode", "seed", "agent", "steps", "final_reward", "mean_batch_reward", "final_p_hat"]
DELTA_COLUMNS = ["baseline", "seed", "agent", "reference", "baseline_reward", "delta"]
DELTA_SUMMARY_COLUMNS = ["baseline", "agent", "pairs", "median_delta", "wins", "ties"]
RATIO_COLUMNS = ["run", "mode", "kind", "mean", "max", "min", "range"]
PLOT_COLUMNS = ["run", "step", "series", "value"]


def build_report(runs_dir: str | Path, out_dir: str | Path | None = None, figures: bool = True) -> dict:
    """Write the CSV tables (and PNG figures) for every run under ``runs_dir``.

    Returns the written paths plus the summary text printed by the CLI.
    """
    runs = load_runs(runs_dir)
    out = Path(out_dir) if out_dir is not None else Path(runs_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)

    summary = summary_rows(runs)
    deltas = paired_deltas(runs)
    dsum = delta_summary(deltas)
    ratios = ratio_rows(runs)
    series = plot_rows(runs)

    paths = {
        "summary": out / "summary.csv",
        "deltas": out / "paired_deltas.csv",
        "delta_summary": out / "delta_summary.csv",
        "ratios": out / "ratio_stats.csv",
        "plot_data": out / "plot_data.csv",
    }
    write_csv(paths["summary"], summary, SUMMARY_COLUMNS)
    write_csv(paths["deltas"], deltas, DELTA_COLUMNS)
    write_csv(paths["delta_summary"], dsum, DELTA_SUMMARY_COLUMNS)
    write_csv(paths["ratios"], ratios, RATIO_COLUMNS)
    write_csv(paths["plot_data"], series, PLOT_COLUMNS)

    if figures:
        from .plots import render_figures
        paths.update(render_figures(runs, out / "figures"))

    text = [format_table(summary, SUMMARY_COLUMNS)]
    if dsum:
        text += ["", format_table(dsum, DELTA_SUMMARY_COLUMNS)]
    if ratios:
        text += ["", format_table(ratios, RATIO_COLUMNS)]
    return {"paths": paths, "text": "\n".join(text), "runs": len(runs)}
