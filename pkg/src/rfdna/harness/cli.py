"""Command line entry point: generate, train, evaluate, grid-search, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, full_config, load_config
from .dataset import generate_dataset
from .metrics import MetricsRecord, report
from .pipelines import ModelStore, run_cgan, run_experiment, train_models

log = logging.getLogger("rfdna")


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.full:
        cfg = full_config()
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "pipelines", None):
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "pipelines": args.pipelines})
    return cfg


def _prepare(args) -> tuple[ExperimentConfig, Path]:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    return cfg, out


def cmd_generate(args) -> None:
    cfg, out = _prepare(args)
    ds = generate_dataset(cfg)
    np.savez_compressed(out / "dataset.npz", labels=ds.labels, clean=ds.clean, coeffs=ds.coeffs,
                        train_idx=ds.train_idx, test_idx=ds.test_idx,
                        stats_lo=ds.stats.lo, stats_hi=ds.stats.hi)
    log.info("wrote %d preambles (%d train / %d test) to %s", len(ds.labels), len(ds.train_idx),
             len(ds.test_idx), out)


def cmd_train(args) -> None:
    cfg, out = _prepare(args)
    ds = generate_dataset(cfg)
    store = ModelStore(args.models or out / "models")
    train_models(ds, store, curves_dir=out)
    log.info("models in %s", store.directory)


def _save_metrics(path: Path, res: dict) -> None:
    data = {"clean_accuracy": res["clean_accuracy"],
            "metrics": {k: [r.to_dict() for r in v] for k, v in sorted(res["metrics"].items())}}
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def cmd_evaluate(args) -> None:
    cfg, out = _prepare(args)
    ds = generate_dataset(cfg)
    store = ModelStore(args.models) if args.models else ModelStore()
    res = run_experiment(ds, store, curves_dir=out)
    _save_metrics(out / "metrics.json", res)
    report(res["metrics"], out, plots=not args.no_plots)
    for name, recs in sorted(res["metrics"].items()):
        log.info("%s: %s", name, ", ".join(f"{r.snr_db:g} dB {100 * r.accuracy:.2f}%" for r in recs))


def cmd_grid_search(args) -> None:
    cfg, out = _prepare(args)
    ds = generate_dataset(cfg)
    store = ModelStore(args.models) if args.models else ModelStore()
    _, grid = run_cgan(ds, store, curves_dir=out)
    with open(out / "grid_search.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train_snr_db", "test_snr_db", "accuracy", "best_for_test"])
        for i, sr in enumerate(grid.train_snrs):
            for j, st in enumerate(grid.test_snrs):
                w.writerow([f"{sr:g}", f"{st:g}", f"{grid.accuracy[i, j]:.6f}",
                            int(grid.best_train_for_test[st] == sr)])
    log.info("best training SNR overall: %g dB", grid.best_overall)


def cmd_report(args) -> None:
    src = Path(args.metrics) if args.metrics else Path(args.out) / "metrics.json"
    data = json.loads(src.read_text())
    metrics = {k: [MetricsRecord.from_dict(d) for d in v] for k, v in data["metrics"].items()}
    for p in report(metrics, args.out, plots=not args.no_plots):
        log.info("wrote %s", p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rfdna", description="Emitter identification experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("generate", cmd_generate, "synthesise the fleet and dataset"),
                            ("train", cmd_train, "train every network the pipelines need"),
                            ("evaluate", cmd_evaluate, "run the pipelines over the SNR grid"),
                            ("grid-search", cmd_grid_search, "search the CGAN training SNR"),
                            ("report", cmd_report, "write CSVs and plots from metrics.json")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML or JSON experiment config")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default="rfdna_out", help="output directory")
        p.add_argument("--full", action="store_true", help="protocol-scale defaults when no --config")
        p.add_argument("--models", help="model directory to reuse or fill")
        p.add_argument("--pipelines", nargs="+", help="subset of trad cgan jcaecnn o-jcaecnn")
        p.add_argument("--no-plots", action="store_true")
        if name == "report":
            p.add_argument("--metrics", help="metrics.json (default: <out>/metrics.json)")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - report any failure as one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
