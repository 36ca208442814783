import statistics

import numpy as np
import pytest

from synthgen import bench, models
from synthgen.models import ArchitectureConfig


@pytest.fixture(scope="module")
def trained():
    X = np.random.default_rng(0).uniform(size=(60, 6))
    out = {}
    for kind, mcd in (("VAE", False), ("VAE", True), ("AE", True)):
        cfg = ArchitectureConfig(6, model_kind=kind, mcd_decoder=mcd, epochs=2, seed=1)
        m = models.train(X, cfg)
        out[m.kind] = m
    return out, X


def test_report_arithmetic(trained):
    models_, X = trained
    rep = bench.time_generation(models_["MCD-AE"], X, t=20, repetitions=7, rng_seed=3, dataset="toy")
    assert rep.repetitions == len(rep.per_run_seconds) == 7
    assert rep.t == 20 and rep.dataset == "toy" and rep.generator_kind == "MCD-AE"
    assert abs(rep.mean_seconds - statistics.fmean(rep.per_run_seconds)) <= 1e-9
    assert abs(rep.sd_seconds - statistics.stdev(rep.per_run_seconds)) <= 1e-9
    assert all(s > 0 for s in rep.per_run_seconds)


def test_single_repetition_has_zero_sd(trained):
    models_, X = trained
    rep = bench.time_generation(models_["VAE"], X, t=5, repetitions=1)
    assert rep.sd_seconds == 0.0


def test_rejects_zero_repetitions(trained):
    models_, X = trained
    with pytest.raises(ValueError):
        bench.time_generation(models_["VAE"], X, repetitions=0)


def test_runs_use_distinct_seeds():
    seeds = bench._run_seeds(4, 50)
    assert len(set(seeds)) == 50
    assert seeds == bench._run_seeds(4, 50)


def test_doubling_t_takes_longer(trained):
    models_, X = trained
    seeds = np.repeat(X, 4, axis=0)
    for kind, model in models_.items():
        times = {}
        for t in (500, 1000):
            runs = [bench.time_generation(model, seeds, t=t, repetitions=3, rng_seed=r).per_run_seconds
                    for r in range(3)]
            times[t] = statistics.median(statistics.median(r) for r in runs)
        assert times[1000] > times[500], kind


def test_interleaved_timing_and_table(trained, tmp_path):
    models_, X = trained
    reports = bench.time_generators(models_, X, t=10, repetitions=3, dataset="toy")
    assert list(reports) == ["VAE", "MCD-VAE", "MCD-AE"]
    rows = bench.timing_table(list(reports.values()))
    assert len(rows) == 1 and rows[0]["dataset"] == "toy"
    assert rows[0]["MCD-AE [s.d.]"].count("[") == 1
    text = bench.format_timing_table(list(reports.values()))
    assert text.splitlines()[0].split() == ["dataset", "VAE", "[s.d.]", "MCD-VAE", "[s.d.]", "MCD-AE", "[s.d.]"]
    bench.write_timing(list(reports.values()), tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(bench.TABLE_COLUMNS)
    assert len(lines[-1].split("\t")) == 2 + 3
