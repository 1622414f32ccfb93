"""Command-line entry point: ``dgrcl <subcommand> [--config FILE] [--set key=value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as pl
from .config import load_config
from .data import write_panel, write_relations
from .errors import DGRCLError, StageFailed
from .evaluation import run_ablation, run_sweep, synth_generate

log = logging.getLogger("dgrcl")

SUBCOMMANDS = ("ingest", "build-graphs", "enhance", "train", "evaluate", "sweep", "ablate",
               "synth", "pipeline")


def build_parser():
    parser = argparse.ArgumentParser(prog="dgrcl", description="Dynamic-graph stock movement classifier.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    parser.add_argument("--workers", type=int, default=1, help="processes for sweep/ablate")
    parser.add_argument("-q", "--quiet", action="store_true")
    return parser


def _synth(cfg):
    ws = pl.Workspace(cfg)
    panel, rel = synth_generate(cfg["synth.n_nodes"], cfg["synth.n_days"], cfg["run.seed"],
                                cfg["synth.strength"], cfg["synth.communities"], cfg["graph.delta"])
    d = ws.root / "synth"
    write_panel(panel, d / "panel")
    write_relations(rel, panel.tickers, d / "relations.csv")
    ws.write_manifest({"subcommand": "synth"})
    print(f"synthetic panel written to {d / 'panel'}; relations to {d / 'relations.csv'}")


def _stage(cfg, stage, force):
    ws = pl.Workspace(cfg)
    ws.write_manifest({"subcommand": stage})
    hit = pl.run_stage(ws, stage, force)
    print(f"{stage}: {'cached' if hit else 'done'} -> {ws.stage_dir(stage)}")
    if stage == "evaluate":
        print((ws.stage_dir(stage) / "metrics.csv").read_text(encoding="utf-8"), end="")


def _loaded_data(cfg):
    ws = pl.Workspace(cfg)
    pl.run_stage(ws, "ingest")
    panel = ws.panel()
    return ws, panel, ws.relations(panel)


def _sweep(cfg, workers):
    ws, panel, rel = _loaded_data(cfg)
    result = run_sweep(panel, rel, cfg, workers=workers)
    path = ws.root / "sweep.csv"
    result.to_csv(path)
    ws.write_manifest({"subcommand": "sweep", "failed_cells": {str(k): v for k, v in result.errors.items()}})
    print(f"sweep: {len(result)} cells -> {path}")


def _ablate(cfg, workers):
    ws, panel, rel = _loaded_data(cfg)
    table = run_ablation(cfg, data=(panel, rel), workers=workers)
    path = ws.root / "ablation.csv"
    table.to_csv(path)
    ws.write_manifest({"subcommand": "ablate"})
    print(f"ablation -> {path}")
    for row in table.rows:
        print(f"  {row['variant']:<14} acc {row['accuracy']:.4f}±{row['accuracy_std']:.4f}  "
              f"f1 {row['f1']:.4f}±{row['f1_std']:.4f}  mcc {row['mcc']:.4f}±{row['mcc_std']:.4f}")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        if args.subcommand == "synth":
            _synth(cfg)
        elif args.subcommand == "sweep":
            _sweep(cfg, args.workers)
        elif args.subcommand == "ablate":
            _ablate(cfg, args.workers)
        elif args.subcommand == "pipeline":
            ws, hits = pl.run_pipeline(cfg)
            print(f"pipeline complete -> {ws.root}; cache hits: {json.dumps(hits)}")
            print((ws.stage_dir("evaluate") / "metrics.csv").read_text(encoding="utf-8"), end="")
        else:
            _stage(cfg, args.subcommand, args.force)
    except StageFailed as exc:
        print(f"dgrcl: error: {exc}", file=sys.stderr)
        return 3
    except (DGRCLError, OSError, ValueError) as exc:
        print(f"dgrcl: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
