"""Command-line entry point: ``vischunk <command> [options]``.

Exit codes: 0 success, 2 a verification check failed, 3 bad configuration
or arguments (including missing input files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .config import ConfigError, forest_config, load_config, synth_config, verify_settings, write_effective
from .learner import load_forest
from .plots import write_plots
from .verify import SUITES, run_suites

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("vischunk")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="master synthesis seed (synth.seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="vischunk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--split", choices=["train", "test"], default="train")
    g.add_argument("--count", type=int, help="number of scenes (defaults to pipeline.n_train / n_test)")

    g = sub.add_parser("grow", parents=[common], help="grow candidate chunks per scene")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--predictor", choices=["oracle", "perturbed", "learned"], default="oracle")
    g.add_argument("--forest", type=Path, help="grower forest for --predictor learned")
    g.add_argument("--eps", type=float, default=0.05, help="noise bound for --predictor perturbed")

    g = sub.add_parser("train-grower", parents=[common], help="fit the grower forest")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True, help="forest file to write")
    g.add_argument("--dataset-csv", type=Path, help="also write the imitation rows")

    g = sub.add_parser("train-list", parents=[common], help="fit the list forest")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--candidates", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True, help="forest file to write")
    g.add_argument("--dataset-csv", type=Path, help="also write the imitation rows")

    g = sub.add_parser("predict", parents=[common], help="predict a list per scene")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--candidates", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True)
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--forest", type=Path, help="learned list forest")
    src.add_argument("--oracle", action="store_true", help="greedy list with ground truth")

    g = sub.add_parser("eval", parents=[common], help="score lists and baselines")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--candidates", type=Path, required=True)
    g.add_argument("--predictions", type=Path, required=True, help="lists.csv or its directory")
    g.add_argument("--out", type=Path, required=True)

    g = sub.add_parser("verify", parents=[common], help="run the guarantee harnesses")
    g.add_argument("--suite", action="append", choices=list(SUITES), help="run only these suites")
    g.add_argument("--out", type=Path, help="directory for verify.csv")

    g = sub.add_parser("plot", parents=[common], help="SVG charts from an eval directory")
    g.add_argument("--report", type=Path, required=True)
    g.add_argument("--out", type=Path)

    g = sub.add_parser("run", parents=[common], help="gen, train, grow, predict, eval and plot in one go")
    g.add_argument("--out", type=Path, required=True)
    return p


def _config(args) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"synth.seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_gen(args, cfg):
    p = cfg["pipeline"]
    if args.split == "train":
        start, count = 0, p["n_train"]
    else:
        start, count = p["test_offset"], p["n_test"]
    if args.count is not None:
        count = args.count
    path = pl.generate(synth_config(cfg), range(start, start + count), args.out)
    write_effective(cfg, args.out)
    log.info("wrote %d scenes, manifest %s", count, path)
    return EXIT_OK


def cmd_grow(args, cfg):
    p = cfg["pipeline"]
    records = pl.load_dataset(args.data)
    forest = None
    if args.predictor == "learned":
        if args.forest is None:
            raise ConfigError("--predictor learned needs --forest")
        forest = load_forest(args.forest)
    cands = pl.grow_dataset(records, args.predictor, p["seed_interval"], p["max_chunk_size"], forest,
                            eps=args.eps, seed=cfg["synth"]["seed"], workers=p["workers"])
    pl.write_candidates(args.out, cands)
    write_effective(cfg, args.out)
    log.info("grew candidates for %d scenes", len(cands))
    return EXIT_OK


def cmd_train_grower(args, cfg):
    p = cfg["pipeline"]
    forest, data = pl.train_grower(pl.load_dataset(args.data), forest_config(cfg, "grower_forest"),
                                   p["seed_interval"], p["max_chunk_size"], p["grower_rows_per_step"])
    _save_training(args, cfg, forest, data)
    return EXIT_OK


def cmd_train_list(args, cfg):
    p = cfg["pipeline"]
    records = pl.load_dataset(args.data)
    cands = pl.read_candidates(args.candidates, records)
    forest, data = pl.train_list(records, cands, p["k"], forest_config(cfg, "list_forest"), p["list_rows_per_round"])
    _save_training(args, cfg, forest, data)
    return EXIT_OK


def _save_training(args, cfg, forest, data):
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(forest.dumps())
    if args.dataset_csv:
        args.dataset_csv.write_text(data.to_csv())
    write_effective(cfg, args.out.parent)
    log.info("fit %d trees on %d rows -> %s", len(forest.trees), len(data), args.out)


def cmd_predict(args, cfg):
    p = cfg["pipeline"]
    records = pl.load_dataset(args.data)
    cands = pl.read_candidates(args.candidates, records)
    forest = None if args.oracle else load_forest(args.forest)
    lists = pl.predict_dataset(records, cands, forest, p["k"], p["workers"])
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "lists.csv").write_text(pl.dumps_lists(lists))
    write_effective(cfg, args.out)
    return EXIT_OK


def cmd_eval(args, cfg):
    p = cfg["pipeline"]
    records = pl.load_dataset(args.data)
    cands = pl.read_candidates(args.candidates, records)
    pred = args.predictions / "lists.csv" if args.predictions.is_dir() else args.predictions
    lists = pl.loads_lists(pred.read_text(), cands)
    report = pl.evaluate(records, cands, lists, p["k"], p["oracle_mode"], cfg["synth"]["target_class"],
                         p["workers"])
    report.write(args.out)
    write_effective(cfg, args.out)
    _log_summary(report)
    return EXIT_OK


def _log_summary(report):
    for method, vals in report.mean_slots().items():
        log.info("%-10s %s", method, " ".join(f"{float(v):.3f}" for v in vals))


def cmd_verify(args, cfg):
    results = run_suites(verify_settings(cfg), args.suite)
    for r in results:
        print(r.line())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        lines = ["suite,checked,violations,seconds"]
        lines += [f"{r.name},{r.checked},{r.violations},{r.seconds:.3f}" for r in results]
        (args.out / "verify.csv").write_text("\n".join(lines) + "\n")
        write_effective(cfg, args.out)
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


def cmd_plot(args, cfg):
    for path in write_plots(args.report, args.out):
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_run(args, cfg):
    report = pl.run_experiment(cfg, args.out)
    write_plots(args.out / "report")
    _log_summary(report)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "grow": cmd_grow, "train-grower": cmd_train_grower, "train-list": cmd_train_list,
    "predict": cmd_predict, "eval": cmd_eval, "verify": cmd_verify, "plot": cmd_plot, "run": cmd_run,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"vischunk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"vischunk: missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
