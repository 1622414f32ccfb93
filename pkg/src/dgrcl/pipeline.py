"""Stage runners over an artifact directory, with content-hash caching.

Layout under the output directory::

    ingest/panel/*.csv, ingest/relations.csv
    graphs/edges_*.csv, graphs/manifest.json
    enhance/features.bin, enhance/features.json
    train/model.bin, train/model.json, train/train_log.csv
    evaluate/metrics.csv
    cache/<stage>.json          input key + output file hashes
    manifest.json               resolved config, seed, version

A stage is skipped when its cache record matches the current input key and
every recorded output file still hashes to the recorded value.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

from . import __version__
from . import model as mdl
from .config import RunConfig
from .data import load_panel, load_relations, write_panel, write_relations
from .enhance import EnhancedPanel
from .errors import ConfigInvalid, DGRCLError, StageFailed
from .evaluation import (build_features, contrastive_config, label_matrix, plan_splits, score_days,
                         train_config, write_history_csv, write_metrics_csv, zipf_exponent)
from .graphs import DynamicGraphSequence, build_graph_sequence

log = logging.getLogger(__name__)

STAGES = ("ingest", "build-graphs", "enhance", "train", "evaluate")

# config keys each stage depends on (besides its upstream artifacts)
STAGE_KEYS = {
    "ingest": ("data.panel_dir", "data.relations"),
    "build-graphs": ("graph.delta", "graph.s", "graph.target_nodes", "graph.target_edges",
                     "graph.band", "graph.volume_cap"),
    "enhance": ("enhance.enabled", "enhance.k0", "enhance.min_len", "enhance.max_len",
                "enhance.metric", "enhance.m", "enhance.eps", "enhance.grid",
                "split.train", "split.valid", "split.test", "graph.delta", "model.window"),
    "train": None,  # everything that is not bookkeeping
    "evaluate": ("split.train", "split.valid", "split.test", "model.window", "graph.delta"),
}
_BOOKKEEPING = ("run.out_dir", "synth.", "sweep.", "ablation.", "data.")

STAGE_DIRS = {"ingest": "ingest", "build-graphs": "graphs", "enhance": "enhance",
              "train": "train", "evaluate": "evaluate"}
UPSTREAM = {"ingest": (), "build-graphs": ("ingest",), "enhance": ("ingest",),
            "train": ("ingest", "build-graphs", "enhance"),
            "evaluate": ("ingest", "build-graphs", "enhance", "train")}


def out_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get("DGRCL_OUT") or cfg["run.out_dir"])


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hashes(root) -> dict:
    root = Path(root)
    return {str(p.relative_to(root)): file_hash(p) for p in sorted(root.rglob("*")) if p.is_file()}


def _stage_config(cfg: RunConfig, stage):
    keys = STAGE_KEYS[stage]
    if keys is None:
        keys = [k for k in cfg.values if not k.startswith(_BOOKKEEPING)]
    return {k: cfg[k] for k in sorted(keys)}


class Workspace:
    """Artifact directory plus cache bookkeeping for one config."""

    def __init__(self, cfg: RunConfig, root=None):
        self.cfg = cfg
        self.root = Path(root) if root is not None else out_dir(cfg)
        self.root.mkdir(parents=True, exist_ok=True)

    def stage_dir(self, stage) -> Path:
        return self.root / STAGE_DIRS[stage]

    def _record_path(self, stage):
        return self.root / "cache" / f"{stage}.json"

    def input_key(self, stage) -> str:
        h = hashlib.sha256()
        h.update(stage.encode())
        h.update(json.dumps(_stage_config(self.cfg, stage), sort_keys=True).encode())
        if stage == "ingest":
            for path in self._raw_inputs():
                h.update(str(path.name).encode())
                h.update(file_hash(path).encode())
        for up in UPSTREAM[stage]:
            rec = self._read_record(up)
            h.update(json.dumps(rec["outputs"] if rec else None, sort_keys=True).encode())
        return h.hexdigest()

    def _raw_inputs(self):
        panel_dir = self.cfg["data.panel_dir"]
        if not panel_dir:
            raise ConfigInvalid("data.panel_dir must be set (run `dgrcl synth` for a fixture)")
        files = sorted(Path(panel_dir).glob("*.csv"))
        rel = self.cfg["data.relations"]
        return files + ([Path(rel)] if rel else [])

    def _read_record(self, stage):
        p = self._record_path(stage)
        if not p.exists():
            return None
        try:
            return json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return None

    def is_cached(self, stage, key) -> bool:
        rec = self._read_record(stage)
        if rec is None or rec.get("key") != key:
            return False
        d = self.stage_dir(stage)
        if not d.exists():
            return False
        return tree_hashes(d) == rec["outputs"]

    def commit(self, stage, key):
        p = self._record_path(stage)
        p.parent.mkdir(parents=True, exist_ok=True)
        rec = {"stage": stage, "key": key, "outputs": tree_hashes(self.stage_dir(stage))}
        p.write_text(json.dumps(rec, indent=2) + "\n", encoding="utf-8")

    # artifact readers
    def panel(self):
        return load_panel(self.stage_dir("ingest") / "panel")

    def relations(self, panel):
        return load_relations(self.stage_dir("ingest") / "relations.csv", panel.tickers)

    def graphs(self):
        return DynamicGraphSequence.load(self.stage_dir("build-graphs"))

    def features(self):
        return EnhancedPanel.load(self.stage_dir("enhance") / "features.bin")

    def write_manifest(self, extra=None):
        manifest = {"version": __version__, "seed": self.cfg["run.seed"],
                    "config_hash": self.cfg.digest(), "config": self.cfg.as_dict(), **(extra or {})}
        (self.root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return manifest


# ------------------------------------------------------------------ stages

def _clean(d: Path):
    d.mkdir(parents=True, exist_ok=True)
    for p in sorted(d.rglob("*"), reverse=True):
        if p.is_file():
            p.unlink()
        elif p.is_dir():
            p.rmdir()


def _ingest(ws: Workspace):
    cfg = ws.cfg
    panel = load_panel(cfg["data.panel_dir"])
    d = ws.stage_dir("ingest")
    write_panel(panel, d / "panel")
    if cfg["data.relations"]:
        rel = load_relations(cfg["data.relations"], panel.tickers)
        write_relations(rel, panel.tickers, d / "relations.csv")
    else:
        (d / "relations.csv").write_text("ticker_a,ticker_b,relation\n", encoding="utf-8")


def _build_graphs(ws: Workspace):
    cfg = ws.cfg
    panel = ws.panel()
    seq = build_graph_sequence(panel, cfg["graph.delta"], zipf_exponent(cfg), cfg["graph.band"],
                               cfg["graph.volume_cap"])
    seq.save(ws.stage_dir("build-graphs"))


def _enhance(ws: Workspace):
    panel = ws.panel()
    splits = plan_splits(panel.n_days, ws.cfg)
    feats = build_features(panel, ws.cfg, splits.train.stop)
    feats.save(ws.stage_dir("enhance") / "features.bin")
    splits.to_json(ws.stage_dir("enhance") / "splits.json")


def _training_data(ws: Workspace):
    panel = ws.panel()
    relations = ws.relations(panel)
    splits = plan_splits(panel.n_days, ws.cfg)
    data = mdl.prepare_training_data(ws.graphs(), ws.features().values, relations,
                                     label_matrix(panel), splits.train.stop, contrastive_config(ws.cfg))
    return data, splits


def _train(ws: Workspace):
    from .data import split_days
    cfg = ws.cfg
    data, splits = _training_data(ws)
    state = mdl.ModelState(data.features.shape[2], train_config(cfg))
    d = ws.stage_dir("train")
    log_path = d / "train_log.csv"
    history = []

    def record(m):
        history.append(m)
        log.info("epoch %d L_pred=%.4f L_cl=%.4f total=%.4f (%.2fs)",
                 m["epoch"], m["L_pred"], m["L_cl"], m["total"], m["seconds"])

    mdl.fit(state, data, split_days(splits, "train"), cfg["train.epochs"], cfg["model.window"], record)
    write_history_csv(history, log_path)
    state.save(d / "model.bin", {"seed": cfg["run.seed"], "epoch": cfg["train.epochs"],
                                 "lambda": train_config(cfg).lam})


def _evaluate(ws: Workspace):
    from .data import split_days
    data, splits = _training_data(ws)
    state = mdl.ModelState.load(ws.stage_dir("train") / "model.bin")
    window = ws.cfg["model.window"]
    scores = {name: score_days(state, data, split_days(splits, name), window)
              for name in ("train", "valid", "test")}
    write_metrics_csv(scores, ws.stage_dir("evaluate") / "metrics.csv")
    return scores


_RUNNERS = {"ingest": _ingest, "build-graphs": _build_graphs, "enhance": _enhance,
            "train": _train, "evaluate": _evaluate}


def run_stage(ws: Workspace, stage, force=False):
    """Run one stage unless its cached outputs are still valid; returns True on a cache hit."""
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    for up in UPSTREAM[stage]:
        if ws._read_record(up) is None:
            raise StageFailed(stage, FileNotFoundError(f"stage {up!r} has not been run"))
    try:
        key = ws.input_key(stage)
        if not force and ws.is_cached(stage, key):
            log.info("cache hit: %s", stage)
            return True
        log.info("running stage: %s", stage)
        _clean(ws.stage_dir(stage))
        _RUNNERS[stage](ws)
        ws.commit(stage, key)
    except StageFailed:
        raise
    except (DGRCLError, OSError, ValueError) as exc:
        raise StageFailed(stage, exc) from exc
    return False


def run_pipeline(cfg: RunConfig, root=None):
    """ingest -> build-graphs -> enhance -> train -> evaluate; stops at the first failure."""
    ws = Workspace(cfg, root)
    ws.write_manifest()
    hits = {}
    for stage in STAGES:
        hits[stage] = run_stage(ws, stage)
    metrics_path = ws.stage_dir("evaluate") / "metrics.csv"
    ws.write_manifest({"cache_hits": hits, "metrics_sha256": file_hash(metrics_path)})
    return ws, hits

