import os

import pytest
import yaml

from synthgen import cli, data

from conftest import PIMA

TOY = "x,color,class\n1.0,red,a\n2.5,green,b\n3.0,blue,a\n4.5,red,b\n5.0,green,a\n6.5,?,b\n"


def test_ingest_toy_csv(tmp_path, capsys):
    src = tmp_path / "toy.csv"
    src.write_text(TOY)
    out = tmp_path / "enc" / "toy.csv"
    assert cli.main(["ingest", str(src), "--class-column", "class", "--out", str(out)]) == 0
    enc = data.read_encoded(out)
    assert enc.matrix.shape == (6, 1 + 3 + 2)
    assert os.path.exists(tmp_path / "enc" / "toy.schema.yaml")
    first = out.read_bytes(), (tmp_path / "enc" / "toy.schema.yaml").read_bytes()
    assert cli.main(["ingest", str(src), "--class-column", "class", "--out", str(out)]) == 0
    assert (out.read_bytes(), (tmp_path / "enc" / "toy.schema.yaml").read_bytes()) == first
    assert "6 rows" in capsys.readouterr().out


def test_ingest_missing_class_column(tmp_path, capsys):
    src = tmp_path / "toy.csv"
    src.write_text(TOY)
    with pytest.raises(SystemExit) as err:
        cli.main(["ingest", str(src), "--out", str(tmp_path / "o.csv")])
    assert err.value.code != 0
    assert cli.main(["ingest", str(src), "--class-column", "label", "--out", str(tmp_path / "o.csv")]) == 1
    assert "error in ingest" in capsys.readouterr().err


def write_config(tmp_path, **extra):
    cfg = {"dataset": PIMA, "class_column": "class", "architecture": {"epochs": 3}, "t": 2, "trees": 10,
           "seed": 5, "out": "run", "bench_t": 20, "bench_repetitions": 2}
    cfg.update(extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_run_writes_everything_and_is_reproducible(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["run", "--config", str(path)]) == 0
    out = tmp_path / "run"
    report = (out / "report.csv").read_text().splitlines()
    assert len(report) == 4
    assert [r.split(",")[1] for r in report[1:]] == ["VAE", "MCD-VAE", "MCD-AE"]
    for kind in ("VAE", "MCD-VAE", "MCD-AE"):
        assert (out / "models" / f"{kind}.model").exists()
        gen = data.read_table(out / "generated" / f"{kind}.csv", schema=data.read_schema(out / "schema.yaml"))
        # t=2 on the seeding quarter matches the evaluation half
        assert len(gen) == 384
    first = (out / "report.csv").read_bytes()
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "report.csv").read_bytes() == first


def test_run_flag_overrides(tmp_path):
    path = write_config(tmp_path, generators=["MCD-AE"])
    assert cli.main(["run", "--config", str(path), "--t", "1", "--k", "3", "--keep-rate", "0.8",
                     "--epochs", "2", "--trees", "5", "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    saved = yaml.safe_load((tmp_path / "o" / "config.yaml").read_text())
    assert saved["t"] == 1 and saved["k"] == 3 and saved["trees"] == 5 and saved["seed"] == 9
    assert saved["architecture"] == {"epochs": 2, "keep_rate": 0.8}
    rows = (tmp_path / "o" / "report.csv").read_text().splitlines()
    assert rows[1].split(",")[-1] == "3"


def test_bench_command(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli.main(["bench", "--config", str(path), "--repetitions", "2", "--t", "10"]) == 0
    text = (tmp_path / "run" / "timing.tsv").read_text().splitlines()
    assert text[0].startswith("dataset\tVAE [s.d.]")
    assert "pima_diabetes" in capsys.readouterr().out


def test_evaluate_command(tmp_path, capsys):
    path = write_config(tmp_path, generators=["VAE"])
    assert cli.main(["run", "--config", str(path)]) == 0
    out = tmp_path / "run"
    code = cli.main(["evaluate", PIMA, str(out / "generated" / "VAE.csv"), "--schema", str(out / "schema.yaml"),
                     "--trees", "10", "--out", str(tmp_path / "e.csv")])
    assert code == 0
    assert (tmp_path / "e.csv").read_text().startswith("dataset,generator")
    assert cli.main(["evaluate", PIMA, PIMA, "--schema", str(out / "schema.yaml"), "--trees", "10"]) == 0
    assert "1.000" in capsys.readouterr().out


@pytest.mark.parametrize("bad,stage", [({"generators": ["GAN"]}, "config"), ({"colour": 1}, "config"),
                                       ({"dataset": "/nonexistent.csv"}, "ingest"),
                                       ({"architecture": {"epochs": 3, "hidden1": 2}}, "train VAE")])
def test_errors_name_the_stage(tmp_path, capsys, bad, stage):
    path = write_config(tmp_path, **bad)
    assert cli.main(["run", "--config", str(path)]) == 1
    assert f"error in {stage}" in capsys.readouterr().err


def test_thread_cap_env(tmp_path, monkeypatch, capsys):
    path = write_config(tmp_path, generators=["MCD-AE"])
    monkeypatch.setenv("SYNTHGEN_THREADS", "0")
    assert cli.main(["run", "--config", str(path)]) == 1
    assert "SYNTHGEN_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("SYNTHGEN_THREADS", "1")
    assert cli.main(["run", "--config", str(path)]) == 0


def test_checked_in_configs_load():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    for name in ("pima_diabetes.yaml", "breast_wisc.yaml"):
        cfg = cli.ExperimentConfig.load(os.path.join(root, "configs", name))
        assert os.path.exists(cfg.dataset)
        assert cfg.generators == ["VAE", "MCD-VAE", "MCD-AE"]
