"""``synthgen`` command line: ingest, run, bench, evaluate.

Every stochastic stage takes a child seed derived from the single master seed
and a stage label, so a config file fully determines a run's outputs.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import yaml
from threadpoolctl import threadpool_limits

from . import bench, data, evaluation, generate, models
from .utils import derive_seed

log = logging.getLogger("synthgen")

ARCH_KEYS = ("hidden1", "hidden2", "latent", "keep_rate", "epochs", "lr", "batch_size", "loss")


class StageError(RuntimeError):
    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"{stage}: {error}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass
class ExperimentConfig:
    dataset: str
    class_column: Optional[str] = None
    name: str = ""
    missing: str = "?"
    categorical: List[str] = field(default_factory=list)
    generators: List[str] = field(default_factory=lambda: list(generate.GENERATORS))
    architecture: Dict[str, object] = field(default_factory=dict)
    t: int = 2
    k: Optional[int] = None
    trees: int = 100
    seed: int = 0
    out: str = "runs"
    bench_t: int = 1000
    bench_repetitions: int = 100

    def __post_init__(self):
        unknown = set(self.generators) - set(generate.GENERATORS)
        if unknown:
            raise ValueError(f"unknown generator kinds {sorted(unknown)}")
        bad = set(self.architecture) - set(ARCH_KEYS)
        if bad:
            raise ValueError(f"unknown architecture keys {sorted(bad)}")
        if not self.name:
            self.name = os.path.splitext(os.path.basename(self.dataset))[0]

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        """Read a YAML config; relative paths are taken relative to the file."""
        with open(path, encoding="utf-8") as f:
            doc = yaml.safe_load(f) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"{path}: unknown config keys {sorted(extra)}")
        if "dataset" not in doc:
            raise ValueError(f"{path}: 'dataset' is required")
        base = os.path.dirname(os.path.abspath(path))
        for key in ("dataset", "out"):
            if key in doc and not os.path.isabs(doc[key]):
                doc[key] = os.path.normpath(os.path.join(base, doc[key]))
        return cls(**doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Prepared:
    encoded: data.EncodedDataset
    split: data.SplitIndices

    def part(self, name: str) -> data.EncodedDataset:
        return self.encoded.take(getattr(self.split, name))


def _prepare(cfg: ExperimentConfig) -> Prepared:
    with stage("ingest"):
        table = data.read_table(cfg.dataset, class_column=cfg.class_column, missing=cfg.missing,
                                categorical=cfg.categorical)
        encoded = data.fit_encode(data.impute_missing(table))
    with stage("split"):
        split = data.split_25_25_50(len(encoded), derive_seed(cfg.seed, "split"))
    return Prepared(encoded, split)


def _train(cfg: ExperimentConfig, kind: str, train: data.EncodedDataset):
    with stage(f"train {kind}"):
        est = generate.GENERATORS[kind](**cfg.architecture, random_state=derive_seed(cfg.seed, f"train-{kind}"))
        return est.fit(train)


def cmd_ingest(csv_path: str, class_column: Optional[str], out: str, missing: str = "?",
               categorical: Sequence[str] = ()) -> data.EncodedDataset:
    """Infer the schema, impute, encode and write the encoded CSV plus its schema sidecar."""
    with stage("ingest"):
        table = data.read_table(csv_path, class_column=class_column, missing=missing, categorical=categorical)
        encoded = data.fit_encode(data.impute_missing(table))
    with stage("write"):
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        data.write_encoded(encoded, out)
    return encoded


def cmd_run(cfg: ExperimentConfig) -> List[evaluation.ComparisonReport]:
    """Split, train each generator, generate, decode and compare with the evaluation part."""
    prep = _prepare(cfg)
    train, seeds, held_out = prep.part("train"), prep.part("seed"), prep.part("eval")
    schema = prep.encoded.schema
    for sub in ("models", "generated"):
        os.makedirs(os.path.join(cfg.out, sub), exist_ok=True)
    with stage("write"):
        with open(os.path.join(cfg.out, "config.yaml"), "w", encoding="utf-8") as f:
            yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
        data.write_schema(schema, os.path.join(cfg.out, "schema.yaml"))

    reports = []
    for kind in cfg.generators:
        est = _train(cfg, kind, train)
        with stage(f"generate {kind}"):
            gen = est.generate_set(seeds, t=cfg.t, random_state=derive_seed(cfg.seed, f"generate-{kind}"))
            synthetic = data.encode(generate.materialize(gen, schema), schema)
        with stage("write"):
            models.save_model(est.model_, os.path.join(cfg.out, "models", f"{kind}.model"))
            generate.write_generated(gen, schema, os.path.join(cfg.out, "generated", f"{kind}.csv"),
                                     os.path.join(cfg.out, "generated", f"{kind}.provenance.csv"))
        with stage(f"evaluate {kind}"):
            # one comparison seed for every generator keeps their reports comparable
            reports.append(evaluation.compare(held_out, synthetic, cfg.k, derive_seed(cfg.seed, "evaluate"),
                                              cfg.trees, label=kind))
        log.info("%s done", kind)
    with stage("write"):
        evaluation.write_reports(reports, os.path.join(cfg.out, "report.csv"), cfg.name)
        with open(os.path.join(cfg.out, "report.txt"), "w", encoding="utf-8") as f:
            f.write(evaluation.format_reports(reports, cfg.name) + "\n")
    return reports


def cmd_bench(cfg: ExperimentConfig) -> Dict[str, bench.TimingReport]:
    """Train every configured generator, then time generation on the seeding part."""
    prep = _prepare(cfg)
    train, seeds = prep.part("train"), prep.part("seed")
    trained = {kind: _train(cfg, kind, train).model_ for kind in cfg.generators}
    with stage("bench"):
        reports = bench.time_generators(trained, seeds, cfg.bench_t, cfg.bench_repetitions,
                                        derive_seed(cfg.seed, "bench"), cfg.name)
    with stage("write"):
        os.makedirs(cfg.out, exist_ok=True)
        bench.write_timing(list(reports.values()), os.path.join(cfg.out, "timing.tsv"))
    return reports


def cmd_evaluate(d1_path: str, d2_path: str, schema_path: str, seed: int = 0, k: Optional[int] = None,
                 trees: int = 100) -> evaluation.ComparisonReport:
    """Compare two raw tables that share one fitted schema."""
    with stage("ingest"):
        schema = data.read_schema(schema_path)
        d1 = data.encode(data.impute_missing(data.read_table(d1_path, schema=schema)), schema)
        d2 = data.encode(data.impute_missing(data.read_table(d2_path, schema=schema)), schema)
    with stage("evaluate"):
        return evaluation.compare(d1, d2, k, derive_seed(seed, "evaluate"), trees,
                                  label=os.path.splitext(os.path.basename(d2_path))[0])


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for attr in ("seed", "out", "t", "k", "trees"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, attr, value)
    if args.keep_rate is not None:
        cfg.architecture["keep_rate"] = args.keep_rate
    if args.epochs is not None:
        cfg.architecture["epochs"] = args.epochs
    if getattr(args, "repetitions", None) is not None:
        cfg.bench_repetitions = args.repetitions
    if getattr(args, "t", None) is not None and args.command == "bench":
        cfg.bench_t = args.t
    return cfg


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synthgen", description="Seeded tabular data generators and their evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="infer schema, impute and encode a CSV")
    ing.add_argument("csv")
    ing.add_argument("--class-column", required=True)
    ing.add_argument("--out", required=True, help="encoded CSV; the schema goes next to it")
    ing.add_argument("--missing", default="?")
    ing.add_argument("--categorical", default="", help="comma separated columns to force categorical")

    for name, text in (("run", "full experiment"), ("bench", "generation timing")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--t", type=int)
        sp.add_argument("--k", type=int)
        sp.add_argument("--trees", type=int)
        sp.add_argument("--keep-rate", type=float)
        sp.add_argument("--epochs", type=int)
        if name == "bench":
            sp.add_argument("--repetitions", type=int)

    ev = sub.add_parser("evaluate", help="compare two tables over one schema")
    ev.add_argument("d1")
    ev.add_argument("d2")
    ev.add_argument("--schema", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--k", type=int)
    ev.add_argument("--trees", type=int, default=100)
    ev.add_argument("--out")
    return p


def _threads() -> Optional[int]:
    raw = os.environ.get("SYNTHGEN_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"SYNTHGEN_THREADS must be >= 1, got {raw!r}")
    return n


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with stage("config"):
            threads = _threads()
        with threadpool_limits(limits=threads):
            return _dispatch(args)
    except StageError as e:
        print(f"synthgen: error in {e}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "ingest":
        cats = [c for c in args.categorical.split(",") if c]
        enc = cmd_ingest(args.csv, args.class_column, args.out, args.missing, cats)
        print(f"{len(enc)} rows, {enc.schema.width} encoded columns -> {args.out}")
        return 0
    if args.command == "evaluate":
        report = cmd_evaluate(args.d1, args.d2, args.schema, args.seed, args.k, args.trees)
        print(evaluation.format_reports([report]))
        if args.out:
            with stage("write"):
                evaluation.write_reports([report], args.out)
        return 0

    with stage("config"):
        cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
    if args.command == "run":
        print(evaluation.format_reports(cmd_run(cfg), cfg.name))
    else:
        print(bench.format_timing_table(list(cmd_bench(cfg).values())))
    return 0


if __name__ == "__main__":
    sys.exit(main())
