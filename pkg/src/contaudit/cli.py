"""Command-line pipeline: prepare, scenario, run, evaluate, full.

Each stage persists its outputs so later stages (and re-runs) can pick up
where things left off. Identical configs and seeds produce byte-identical
report files.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

from contaudit.errors import InputError
from contaudit.evaluate import emit_report, evaluate_run
from contaudit.ingest import EncodedDataset, SchemaConfig, prepare_dataset
from contaudit.nn import TrainConfig
from contaudit.scenario import (
    DecaySchedule,
    apply_decay,
    build_stream,
    inject_global_anomalies,
    inject_local_anomalies,
    load_stream,
    save_stream,
)
from contaudit.strategies import (
    STRATEGIES,
    StrategyConfig,
    load_run,
    run_strategy_persistent,
)

log = logging.getLogger("contaudit")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3

DEFAULT_FORMATS = ("json", "csv", "figures")


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InputError(f"--set path {key!r} crosses a non-object value")
        node[parts[-1]] = value
    return config


def _setup_logging(level: str | None) -> None:
    chosen = level or os.environ.get("CONTAUDIT_LOG", "INFO")
    logging.basicConfig(
        level=getattr(logging, chosen.upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def cmd_prepare(args) -> int:
    schema = SchemaConfig.from_json(args.schema)
    dataset = prepare_dataset(args.csv, schema, tau=args.tau, eta=args.eta, seed=args.seed)
    dataset.meta["config_hash"] = config_hash(
        {"csv": str(args.csv), "schema": str(args.schema), "tau": args.tau,
         "eta": args.eta, "seed": args.seed}
    )
    dataset.save(args.out)
    print(
        f"prepared {dataset.n} rows across {len(dataset.departments)} departments, "
        f"encoded width d={dataset.d} -> {args.out}"
    )
    return EXIT_OK


def build_scenario_stream(dataset: EncodedDataset, config: dict):
    """build_stream -> apply_decay -> inject anomalies, per the scenario config."""
    seed = int(config.get("seed", 0))
    stream = build_stream(
        dataset,
        m=int(config.get("experiences", 10)),
        rho_range=tuple(config.get("rho_range", (0.9, 1.0))),
        seed=seed,
    )
    schedule = DecaySchedule.from_json(config.get("schedule", {"kind": "none"}))
    target = config.get("target_department")
    if target is None:
        raise InputError("scenario config needs a target_department")
    stream = apply_decay(stream, target, schedule)
    alpha2 = int(config.get("global_anomalies", 10))
    if alpha2 > 0:
        stream = inject_global_anomalies(
            stream, alpha2=alpha2, seed=seed,
            n_perturb=int(config.get("perturb_columns", 2)),
        )
    alpha1 = int(config.get("local_anomalies", 10))
    if alpha1 > 0:
        stream = inject_local_anomalies(stream, alpha1=alpha1, seed=seed)
    return stream


def cmd_scenario(args) -> int:
    config = load_config(args.config, args.set)
    dataset = EncodedDataset.load(args.dataset)
    stream = build_scenario_stream(dataset, config)
    save_stream(stream, args.out, extra_meta={"config_hash": config_hash(config)})
    anomalies = int((stream.final.anomaly_label > 0).sum())
    print(
        f"built stream of {stream.m} experiences ({sum(e.n for e in stream.experiences)} rows,"
        f" {anomalies} labeled anomalies in the final experience) -> {args.out}"
    )
    return EXIT_OK


def _strategy_config(run_config: dict, strategy: str, seed: int) -> StrategyConfig:
    train_cfg = TrainConfig(**run_config.get("train", {}))
    hidden = run_config.get("hidden_widths")
    return StrategyConfig(
        strategy=strategy,
        seed=seed,
        train=train_cfg,
        ewc_lambda=float(run_config.get("ewc_lambda", 50.0)),
        buffer_capacity=int(run_config.get("buffer_capacity", 500)),
        hidden_widths=tuple(hidden) if hidden else None,
    )


def _run_one(stream_dir: str, run_config: dict, strategy: str, seed: int,
             out_dir: str, chash: str) -> str:
    stream = load_stream(stream_dir)
    config = _strategy_config(run_config, strategy, seed)
    run_strategy_persistent(stream, config, out_dir, config_hash=chash)
    return out_dir


def run_all_strategies(stream_dir: Path, run_config: dict, out_root: Path, jobs: int) -> list[Path]:
    """Execute every (strategy, seed) pair, isolating per-run failures."""
    strategies = run_config.get("strategies", list(STRATEGIES))
    seeds = run_config.get("seeds", [0])
    if not seeds:
        raise InputError("run config needs a nonempty seed list")
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    chash = config_hash(run_config)
    pairs = [(strategy, seed) for strategy in strategies for seed in seeds]
    out_dirs: list[Path] = []
    failures: list[tuple[str, int, str]] = []
    if jobs > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(
                    _run_one, str(stream_dir), run_config, strategy, seed,
                    str(out_root / f"{strategy}_{seed}"), chash,
                ): (strategy, seed)
                for strategy, seed in pairs
            }
            for future in as_completed(futures):
                strategy, seed = futures[future]
                try:
                    out_dirs.append(Path(future.result()))
                except Exception as exc:  # isolate per-run failures
                    log.error("run %s seed=%d failed: %s", strategy, seed, exc)
                    failures.append((strategy, seed, str(exc)))
    else:
        for strategy, seed in pairs:
            try:
                out_dirs.append(
                    Path(
                        _run_one(
                            str(stream_dir), run_config, strategy, seed,
                            str(out_root / f"{strategy}_{seed}"), chash,
                        )
                    )
                )
            except Exception as exc:
                log.error("run %s seed=%d failed: %s", strategy, seed, exc)
                failures.append((strategy, seed, str(exc)))
    if failures:
        raise RuntimeError(f"{len(failures)} of {len(pairs)} runs failed: {failures}")
    return sorted(out_dirs)


def cmd_run(args) -> int:
    config = load_config(args.config, args.set)
    out_dirs = run_all_strategies(Path(args.stream), config, Path(args.out), args.jobs)
    print(f"completed {len(out_dirs)} runs -> {args.out}")
    return EXIT_OK


def evaluate_dirs(stream_dir: Path, run_dirs: list[Path], scenario_name: str | None = None):
    stream = load_stream(stream_dir)
    if scenario_name is None:
        scenario_name = stream.schedule.kind if stream.schedule else "none"
    metrics = []
    for run_dir in run_dirs:
        result = load_run(run_dir)
        metrics.append(evaluate_run(stream, result, scenario=scenario_name))
    return stream, metrics


def cmd_evaluate(args) -> int:
    run_dirs = [Path(p) for p in args.runs]
    for run_dir in run_dirs:
        if not (run_dir / "manifest.json").exists():
            raise InputError(f"missing run manifest: {run_dir}")
    stream, metrics = evaluate_dirs(Path(args.stream), run_dirs, args.scenario_name)
    chash = config_hash(
        {"stream": str(args.stream), "runs": sorted(str(p) for p in run_dirs)}
    )
    written = emit_report(
        metrics,
        args.out,
        dataset_name=args.dataset_name,
        departments=stream.departments,
        target=stream.target_department,
        formats=tuple(args.formats.split(",")),
        config_hash=chash,
    )
    print(f"wrote {len(written)} report files -> {args.out}")
    return EXIT_OK


def cmd_full(args) -> int:
    config = load_config(args.config, args.set)
    chash = config_hash(config)
    out_root = Path(args.out)
    dataset_cfg = config.get("dataset")
    if not dataset_cfg:
        raise InputError("pipeline config needs a 'dataset' section")
    dataset_name = dataset_cfg.get("name", "dataset")

    dataset_dir = out_root / "dataset"
    if (dataset_dir / "meta.json").exists():
        dataset = EncodedDataset.load(dataset_dir)
        log.info("reusing prepared dataset at %s", dataset_dir)
    else:
        schema = SchemaConfig.from_json(dataset_cfg["schema"])
        dataset = prepare_dataset(
            dataset_cfg["csv"],
            schema,
            tau=int(dataset_cfg.get("tau", 10)),
            eta=int(dataset_cfg.get("eta", 10_000)),
            seed=int(dataset_cfg.get("seed", 0)),
        )
        dataset.meta["config_hash"] = chash
        dataset.save(dataset_dir)

    scenarios = config.get("scenarios")
    if not scenarios:
        raise InputError("pipeline config needs a nonempty 'scenarios' list")
    run_config = config.get("runs", {})
    all_metrics = []
    departments = None
    target = None
    for scenario_cfg in scenarios:
        name = scenario_cfg.get("name") or scenario_cfg.get("schedule", {}).get("kind", "none")
        stream_dir = out_root / "streams" / name
        if (stream_dir / "meta.json").exists():
            log.info("reusing stream %s", stream_dir)
        else:
            stream = build_scenario_stream(dataset, scenario_cfg)
            save_stream(stream, stream_dir, extra_meta={"config_hash": chash})
        run_dirs = run_all_strategies(stream_dir, run_config, out_root / "runs" / name, args.jobs)
        stream, metrics = evaluate_dirs(stream_dir, run_dirs, scenario_name=name)
        departments = stream.departments
        if target is not None and target != stream.target_department:
            raise InputError("all scenarios in one pipeline must share a target department")
        target = stream.target_department
        all_metrics.extend(metrics)

    formats = tuple(config.get("report", {}).get("formats", DEFAULT_FORMATS))
    written = emit_report(
        all_metrics,
        out_root / "report",
        dataset_name=dataset_name,
        departments=departments,
        target=target,
        formats=formats,
        config_hash=chash,
    )
    print(f"pipeline complete: {len(written)} report files -> {out_root / 'report'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from contaudit.synth import generate_payments_csv

    path = generate_payments_csv(
        args.out, seed=args.seed, n_departments=args.departments,
        rows_per_department=args.rows_per_department,
    )
    print(f"wrote synthetic payments -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contaudit",
        description="Continual anomaly detection over journal-entry style payment data.",
    )
    parser.add_argument("--log-level", help="DEBUG/INFO/WARNING/ERROR (or env CONTAUDIT_LOG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="encode a raw CSV into a dataset directory")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True, help="schema config JSON")
    p.add_argument("--tau", type=int, default=10, help="number of departments to keep")
    p.add_argument("--eta", type=int, default=10_000, help="samples per department")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("scenario", help="build an experience stream from a dataset")
    p.add_argument("--dataset", required=True, help="prepared dataset directory")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("run", help="train strategies over a stream")
    p.add_argument("--stream", required=True, help="stream directory")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score runs and emit report artifacts")
    p.add_argument("--stream", required=True)
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    p.add_argument("--dataset-name", default="dataset")
    p.add_argument("--scenario-name", default=None)
    p.add_argument("--formats", default=",".join(DEFAULT_FORMATS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("full", help="chain prepare -> scenario -> run -> evaluate")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_full)

    p = sub.add_parser("synth", help="generate a synthetic payments CSV for demos")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--departments", type=int, default=10)
    p.add_argument("--rows-per-department", type=int, default=2000)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - surface runtime failures as exit 3
        log.exception("pipeline failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
