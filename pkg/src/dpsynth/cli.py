"""Command-line entry point: ``dpsynth <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attack import blackbox_attack
from .dataset import LabeledTable, PlantedSpec, generate_planted, load_csv, save_csv
from .exceptions import ConfigError, DpsynthError
from .harness import ExperimentConfig, MetricOptions, default_planted_spec, evaluate, run

logger = logging.getLogger("dpsynth")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _load_table(path, label_col) -> LabeledTable:
    try:
        return load_csv(path, label_col)
    except FileNotFoundError:
        raise ConfigError(f"{path} not found") from None


def cmd_gen_data(args) -> int:
    spec = PlantedSpec.from_dict(_read_json(args.config)) if args.config else default_planted_spec()
    table, ann = generate_planted(spec, args.seed)
    save_csv(table, args.out, args.label_col)
    if args.annotations:
        payload = {
            "spec": spec.to_dict(),
            "modules": [sorted(m) for m in ann.modules],
            "de_up": {f"{a},{b}": sorted(v) for (a, b), v in sorted(ann.de_up.items())},
            "de_down": {f"{a},{b}": sorted(v) for (a, b), v in sorted(ann.de_down.items())},
        }
        Path(args.annotations).write_text(json.dumps(payload, indent=2) + "\n")
    logger.info("wrote %d x %d table to %s", table.n, table.d, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.label_col and "csv" in config.data:
        config.data = {**config.data, "label_col": args.label_col}
    return run(config, args.out, args.threads, args.accountant_trace)


def cmd_evaluate(args) -> int:
    train = _load_table(args.train, args.label_col)
    test = _load_table(args.test, args.label_col)
    synth = _load_table(args.synth, args.label_col)
    if synth.class_names != train.class_names:
        # align synthetic labels to the training class order
        index = {name: i for i, name in enumerate(train.class_names)}
        missing = set(synth.class_names) - set(index)
        if missing:
            raise ConfigError(f"synthetic table has unknown classes {sorted(missing)}")
        labels = [index[synth.class_names[c]] for c in synth.labels]
        synth = LabeledTable(synth.features, labels, synth.feature_names, train.class_names)
    values, skipped = evaluate(train, test, synth, MetricOptions())
    out = {"metrics": values, "skipped": skipped}
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_attack(args) -> int:
    res = blackbox_attack(
        _load_table(args.synth, args.label_col),
        _load_table(args.members, args.label_col),
        _load_table(args.nonmembers, args.label_col),
    )
    sys.stdout.write(json.dumps(res.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    report = _read_json(Path(args.out) / "report.json")
    rows = []
    for a in report["aggregates"]:
        for name in args.metrics or sorted(a["metrics"]):
            st = a["metrics"].get(name)
            if st:
                rows.append((a["model"], a["epsilon"], a["split_seed"], name, st["mean"], st["std"]))
    w = sys.stdout.write
    w(f"{'model':<10}{'epsilon':>9}{'split':>7}  {'metric':<22}{'mean':>12}{'std':>12}\n")
    for m, e, s, name, mean, std in rows:
        w(f"{m:<10}{e:>9}{s:>7}  {name:<22}{mean:>12.4f}{std:>12.4f}\n")
    failed = [c for c in report["cells"] if c["status"] != "ok"]
    if failed:
        w(f"\n{len(failed)} failed cell(s)\n")
    return EXIT_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpsynth", description="Private synthetic expression data: generation and evaluation.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a planted-structure benchmark table")
    g.add_argument("--config", help="planted spec JSON (default: the desk-scale benchmark)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--label-col", default="label")
    g.add_argument("--annotations", help="also write ground-truth DE sets and modules here")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run an experiment grid")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="report directory (default: config 'out')")
    r.add_argument("--threads", type=int, default=1, help="worker processes")
    r.add_argument("--label-col", help="label column of a CSV data source")
    r.add_argument("--accountant-trace", help="write per-cell privacy accounting to this JSON file")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="score one synthetic table against real train/test tables")
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--synth", required=True)
    e.add_argument("--label-col", default="label")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("attack", help="distance-based membership inference AUC")
    a.add_argument("--synth", required=True)
    a.add_argument("--members", required=True)
    a.add_argument("--nonmembers", required=True)
    a.add_argument("--label-col", default="label")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("report", help="print aggregated results of a finished run")
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--metrics", nargs="*")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (DpsynthError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
