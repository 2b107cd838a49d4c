"""Command line entry point: ``tvmf-lab run | gen-data | curves``.

Exit codes: 0 success, 1 configuration error, 2 training fault.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import (
    ConfigError,
    CurveSpec,
    ExperimentSuite,
    build_curve_spec,
    build_dataclass,
    check_keys,
    expect_mapping,
    load_suite,
    load_yaml,
)
from .evaluate import pca_project, write_embedding_dump
from .net import forward
from .optim import TrainingFault
from .shiftgen import DomainConfig, SubpopConfig, gen_domains, gen_subpop
from .simcore import margin_curve, similarity_curve
from .trainer import RunHistory, TrainConfig, train

log = logging.getLogger("tvmf_lab")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAULT = 2

DESK_QUEUE_CAP = 1024
DESK_EPOCH_CAP = 10

AGGREGATE_METRICS = ("final_overall", "final_worst_group", "best_overall", "best_worst_group")


def desk_scale(cfg: TrainConfig) -> TrainConfig:
    """Smaller queue and fewer epochs, for smoke runs."""
    queue = min(cfg.queue_size, DESK_QUEUE_CAP)
    return dataclasses.replace(
        cfg,
        queue_size=queue,
        epochs=min(cfg.epochs, DESK_EPOCH_CAP),
        batch_size=min(cfg.batch_size, queue),
    )


def run_stem(name: str, seed: int) -> str:
    return f"{name}_seed{seed}"


def write_curves(out_dir: Path, spec: CurveSpec, similarity: bool = True, margin: bool = True) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if similarity:
        path = out_dir / "similarity_curves.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["angle_rad", "kappa", "similarity"])
            for row in similarity_curve(spec.kappas, spec.resolution):
                w.writerow([repr(v) for v in row])
        written.append(path)
    if margin:
        path = out_dir / "margin_curves.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["psi_p_rad", "kappa_p", "kappa_n", "epsilon"])
            for row in margin_curve(spec.pairs, spec.resolution):
                w.writerow([repr(v) for v in row])
        written.append(path)
    return written


def aggregate(summaries: Sequence[dict]) -> list[tuple[str, str, str, float, float, int]]:
    """``(config, split, metric, mean, std, n)`` over seeds; std is the
    population standard deviation, so identical seeds give exactly 0."""
    by_key: dict[tuple[str, str, str], list[float]] = {}
    for s in summaries:
        for split, entry in s["splits"].items():
            for metric in AGGREGATE_METRICS:
                by_key.setdefault((s["config"], split, metric), []).append(entry[metric])
    rows = []
    for (config, split, metric), values in by_key.items():
        mean = math.fsum(values) / len(values)
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))
        rows.append((config, split, metric, mean, std, len(values)))
    return rows


def write_aggregate(path: Path, summaries: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "split", "metric", "mean", "std", "n_seeds"])
        for config, split, metric, mean, std, n in aggregate(summaries):
            w.writerow([config, split, metric, repr(mean), repr(std), n])


def _dump_pca(out_dir: Path, stem: str, cfg: TrainConfig, history: RunHistory) -> Path:
    data = cfg.make_data()
    idx = np.flatnonzero(data.split != "train")
    feats = forward(history.final_params, data.X[idx]).features
    coords, _ = pca_project(feats, 2)
    path = out_dir / f"{stem}_pca.csv"
    write_embedding_dump(path, coords, data.split[idx], data.domain[idx], data.group[idx], data.y[idx], source="backbone")
    return path


def run_suite(suite: ExperimentSuite, out_dir: Path, seeds: Sequence[int] | None = None, desk: bool = False) -> int:
    """Train every (config, seed) pair and write the artifacts.

    On a training fault the runs finished so far are listed in
    ``manifest.json`` next to their files and 2 is returned.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(suite.seeds if seeds is None else seeds)
    summaries = []
    completed = []
    for base in suite.configs:
        cfg_base = desk_scale(base) if desk else base
        for seed in seeds:
            cfg = dataclasses.replace(cfg_base, seed=seed)
            stem = run_stem(cfg.name, seed)
            log.info("training %s", stem)
            try:
                history = train(cfg)
            except TrainingFault as exc:
                log.error("%s: %s", stem, exc)
                manifest = {"completed": completed, "failed": {"config": cfg.name, "seed": seed, "error": str(exc)}}
                (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
                return EXIT_FAULT
            files = []
            if suite.emit.history:
                (out_dir / f"{stem}_history.csv").write_text(history.to_csv())
                files.append(f"{stem}_history.csv")
            summary = history.summary()
            if suite.emit.summary:
                (out_dir / f"{stem}_summary.json").write_text(history.summary_json() + "\n")
                files.append(f"{stem}_summary.json")
            if suite.emit.pca:
                files.append(_dump_pca(out_dir, stem, cfg, history).name)
            summaries.append(summary)
            completed.append({"config": cfg.name, "seed": seed, "files": files})
    write_aggregate(out_dir / "aggregate.csv", summaries)
    write_curves(out_dir, suite.curves, suite.emit.similarity_curves, suite.emit.margin_curves)
    return EXIT_OK


def _data_config(data):
    data = expect_mapping(data, "")
    check_keys(data, {"task", "subpop", "domain"}, "")
    task = data.get("task", "subpop")
    if task == "subpop":
        if "domain" in data:
            raise ConfigError("domain", "given for task subpop")
        return build_dataclass(SubpopConfig, data.get("subpop"), "subpop")
    if task == "domain":
        if "subpop" in data:
            raise ConfigError("subpop", "given for task domain")
        return build_dataclass(DomainConfig, data.get("domain"), "domain")
    raise ConfigError("task", f"{task!r} is not one of subpop, domain")


def _parse_seeds(text: str) -> tuple[int, ...]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return tuple(seeds)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvmf-lab", description="Contrastive learning with heterogeneous t-vMF similarity.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every config of a suite file over its seeds")
    run.add_argument("suite")
    run.add_argument("--out-dir", type=Path)
    run.add_argument("--seeds", type=_parse_seeds, help="e.g. 0,1,2 or 0-4; overrides the suite")
    run.add_argument("--desk", action="store_true", help=f"cap queue at {DESK_QUEUE_CAP} and epochs at {DESK_EPOCH_CAP}")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    gen.add_argument("config")
    gen.add_argument("out_csv", type=Path)

    curves = sub.add_parser("curves", help="write similarity and margin curves as CSV")
    curves.add_argument("spec")
    curves.add_argument("--out-dir", type=Path, default=Path("."))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            suite = load_suite(args.suite)
            out_dir = args.out_dir or Path(suite.out_dir or "results")
            return run_suite(suite, out_dir, args.seeds, args.desk)
        if args.command == "gen-data":
            cfg = _data_config(load_yaml(args.config))
            data = gen_subpop(cfg) if isinstance(cfg, SubpopConfig) else gen_domains(cfg)
            args.out_csv.parent.mkdir(parents=True, exist_ok=True)
            data.to_csv(args.out_csv)
            return EXIT_OK
        spec = build_curve_spec(load_yaml(args.spec), "")
        write_curves(args.out_dir, spec)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
