"""Batches of runs: one config under several modes and seeds."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..core import ConfigError
from ..trainer import Mode, RunConfig, run
from .config import dump_config

log = logging.getLogger(__name__)


@dataclass
class ExperimentMatrix:
    runs: dict[str, RunConfig]  # name -> config; the seed is overridden per repeat
    repeats: int = 1
    output_dir: Path = Path("runs")
    seeds: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats: must be positive")
        if not self.seeds:
            self.seeds = tuple(range(self.repeats))
        if len(set(self.seeds)) != len(self.seeds) or len(self.seeds) != self.repeats:
            raise ConfigError("seeds: need one distinct seed per repeat")
        for name in self.runs:
            if not name or "/" in name:
                raise ConfigError(f"runs.{name!r}: invalid run name")

    @classmethod
    def four_way(cls, base: RunConfig, repeats: int, output_dir, seeds=()) -> "ExperimentMatrix":
        """HACPO against the three baselines on the same agents and task."""
        runs = {m.value: replace(base, mode=m) for m in Mode}
        return cls(runs, repeats, Path(output_dir), tuple(seeds))

    def jobs(self) -> list[tuple[str, RunConfig, Path]]:
        out = []
        for name, cfg in self.runs.items():
            for seed in self.seeds:
                out.append((f"{name}/seed_{seed}", replace(cfg, seed=seed), Path(self.output_dir) / name / f"seed_{seed}"))
        return out


def _execute(job) -> str:
    name, cfg, path = job
    path.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, path / "config.yaml")
    run(cfg, path)
    return name


def run_matrix(matrix: ExperimentMatrix, processes: int = 1) -> list[str]:
    """Run every (config, seed) pair; each run is deterministic so parallelism only changes wall time."""
    jobs = matrix.jobs()
    for _, cfg, _ in jobs:
        cfg.validate()
    if processes <= 1:
        return [_execute(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=processes) as pool:
        return list(pool.map(_execute, jobs))
