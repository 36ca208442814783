"""Wall-clock timing of the generation procedures.

A run times the whole generating process for one set of seeds: the encoder
pass over the seeds plus all ``t`` resamples or dropout passes. Training and
file output are never inside the timed region. One untimed warm-up run
precedes the measurements (it also triggers any JIT compilation).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .data import EncodedDataset
from .generate import GenerationRequest, generate
from .models import TrainedModel
from .utils import derive_seed

GENERATOR_ORDER = ("VAE", "MCD-VAE", "MCD-AE")


@dataclass
class TimingReport:
    generator_kind: str
    dataset: str
    repetitions: int
    t: int
    mean_seconds: float
    sd_seconds: float
    per_run_seconds: List[float] = field(default_factory=list)

    @classmethod
    def from_runs(cls, generator_kind: str, dataset: str, t: int, runs: Sequence[float]) -> "TimingReport":
        runs = [float(r) for r in runs]
        if not runs:
            raise ValueError("no timed runs")
        mean = statistics.fmean(runs)
        # sample standard deviation; a single run has none
        sd = statistics.stdev(runs) if len(runs) > 1 else 0.0
        return cls(generator_kind, dataset, len(runs), int(t), mean, sd, runs)


def _run_seeds(rng_seed: int, repetitions: int) -> List[int]:
    return [derive_seed(rng_seed, f"bench-run-{j}") for j in range(repetitions)]


def _time_once(model: TrainedModel, seeds: np.ndarray, t: int, seed: int) -> float:
    request = GenerationRequest(model, seeds, t, seed)
    start = time.perf_counter()
    generate(request)
    return time.perf_counter() - start


def time_generation(model: TrainedModel, seeds, t: int = 1000, repetitions: int = 100,
                    rng_seed: int = 0, dataset: str = "") -> TimingReport:
    """Time ``repetitions`` generation runs of ``model``, each with its own derived seed."""
    return time_generators({model.kind: model}, seeds, t, repetitions, rng_seed, dataset)[model.kind]


def time_generators(models: Mapping[str, TrainedModel], seeds, t: int = 1000, repetitions: int = 100,
                    rng_seed: int = 0, dataset: str = "") -> Dict[str, TimingReport]:
    """Time several generators on the same seeds.

    Runs are interleaved round-robin (run ``j`` of every generator, then run
    ``j + 1``), so slow drift in machine load hits all generators alike.
    Every run executes sequentially on the calling thread.
    """
    if int(repetitions) < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    if isinstance(seeds, EncodedDataset):
        seeds = seeds.matrix
    seeds = np.asarray(seeds, dtype=np.float64)
    run_seeds = _run_seeds(rng_seed, int(repetitions))
    for model in models.values():
        generate(GenerationRequest(model, seeds, t, derive_seed(rng_seed, "bench-warmup")))
    runs: Dict[str, List[float]] = {name: [] for name in models}
    for seed in run_seeds:
        for name, model in models.items():
            runs[name].append(_time_once(model, seeds, t, seed))
    return {name: TimingReport.from_runs(models[name].kind, dataset, t, r) for name, r in runs.items()}


TABLE_COLUMNS = ("dataset",) + tuple(f"{k} [s.d.]" for k in GENERATOR_ORDER)


def timing_table(reports: Sequence[TimingReport]) -> List[Dict[str, str]]:
    """One row per dataset; each generator cell reads ``mean [sd]`` in seconds."""
    rows: Dict[str, Dict[str, str]] = {}
    for r in reports:
        row = rows.setdefault(r.dataset, {c: "-" for c in TABLE_COLUMNS})
        row["dataset"] = r.dataset
        row[f"{r.generator_kind} [s.d.]"] = f"{r.mean_seconds:.4f} [{r.sd_seconds:.4f}]"
    return list(rows.values())


def format_timing_table(reports: Sequence[TimingReport]) -> str:
    rows = timing_table(reports)
    widths = [max(len(c), *(len(r[c]) for r in rows)) if rows else len(c) for c in TABLE_COLUMNS]
    lines = ["  ".join(c.ljust(w) for c, w in zip(TABLE_COLUMNS, widths))]
    lines += ["  ".join(r[c].ljust(w) for c, w in zip(TABLE_COLUMNS, widths)) for r in rows]
    return "\n".join(lines)


def write_timing(reports: Sequence[TimingReport], path) -> None:
    """Table rows followed by the raw per-run seconds, tab separated."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(TABLE_COLUMNS) + "\n")
        for row in timing_table(reports):
            f.write("\t".join(row[c] for c in TABLE_COLUMNS) + "\n")
        f.write("\n# per-run seconds\n")
        for r in reports:
            f.write(f"{r.dataset}\t{r.generator_kind}\t" + "\t".join(repr(s) for s in r.per_run_seconds) + "\n")
