"""``flsim`` command line: run, sweep and bench.

Errors are reported as a single ``error: <kind>: <message>`` line on stderr
with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from pathlib import Path

from .bench import bench_aggregators, bench_csv
from .config import ExperimentConfig, apply_overrides, load_config
from .engine import MetricsLog, run_experiment
from .errors import FLSimError, UsageError

SWEEPABLE = (
    "aggregator.log_size",
    "attack.sigma",
    "attack.epsilon",
    "aggregator.kind",
    "data.partition",
)

EXIT_ERROR = 2
EXIT_PARTIAL = 3


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resolve_config(config_path, overrides, seed) -> ExperimentConfig:
    cfg = load_config(config_path, overrides) if config_path else apply_overrides(
        ExperimentConfig(), overrides
    )
    if seed is not None:
        cfg = cfg.with_value("seed", seed)
    cfg.validate()
    return cfg


def write_run(out: Path, metrics: MetricsLog, timing: bool) -> None:
    write_atomic(out / "metrics.json", metrics.to_json())
    write_atomic(out / "metrics.csv", metrics.to_csv(timing=timing))


def cmd_run(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    metrics = run_experiment(cfg)
    write_run(Path(args.out), metrics, cfg.output.timing)
    return 0


def parse_values(raw: str) -> list[str]:
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise UsageError("--values must list at least one value")
    return values


def _dir_name(key: str, value: str) -> str:
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in value)
    return f"{key.split('.')[-1]}={safe}"


def cmd_sweep(args) -> int:
    if args.sweep not in SWEEPABLE:
        raise UsageError(f"key {args.sweep!r} is not sweepable; choose from {', '.join(SWEEPABLE)}")
    values = parse_values(args.values)
    base = resolve_config(args.config, args.set, args.seed)
    out = Path(args.out)
    rows = []
    failures = 0
    for value in values:
        child = out / _dir_name(args.sweep, value)
        try:
            cfg = base.with_value(args.sweep, value)
            cfg.validate()
            metrics = run_experiment(cfg)
            write_run(child, metrics, cfg.output.timing)
            final = metrics.final_accuracy
            rows.append([value, str(child.name), "" if final is None else repr(final), "ok"])
        except FLSimError as exc:
            failures += 1
            report_error(exc, prefix=f"{args.sweep}={value}")
            rows.append([value, str(child.name), "", "failed"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([args.sweep, "directory", "final_accuracy", "status"])
    writer.writerows(rows)
    write_atomic(out / "summary.csv", buf.getvalue())
    return EXIT_PARTIAL if failures else 0


def cmd_bench(args) -> int:
    n_values = [int(v) for v in parse_values(args.n_values)]
    rows = bench_aggregators(n_values, args.dim, args.log_size, args.repetitions)
    write_atomic(Path(args.out) / "bench.csv", bench_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file (defaults apply if omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key; repeatable")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per value of a key")
    common(sweep)
    sweep.add_argument("--sweep", required=True, metavar="KEY")
    sweep.add_argument("--values", required=True, metavar="CSV")
    sweep.set_defaults(func=cmd_sweep)

    bench = sub.add_parser("bench", help="time aggregators against worker count")
    bench.add_argument("--out", required=True)
    bench.add_argument("--n-values", default="8,16,32,64")
    bench.add_argument("--dim", type=int, default=1000)
    bench.add_argument("--log-size", type=int, default=10)
    bench.add_argument("--repetitions", type=int, default=15)
    bench.set_defaults(func=cmd_bench)
    return parser


def report_error(exc: BaseException, prefix: str = "") -> None:
    message = " ".join(str(exc).split())
    head = f"{prefix}: " if prefix else ""
    print(f"error: {type(exc).__name__}: {head}{message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FLSimError, OSError) as exc:
        report_error(exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
