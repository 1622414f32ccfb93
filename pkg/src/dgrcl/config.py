"""Flat dotted-key run configuration.

The on-disk format is one ``key = value`` per line; ``#`` starts a comment.
Values are JSON literals (numbers, true/false, null, quoted strings, lists);
anything that does not parse as JSON is taken as a bare string.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigInvalid

DEFAULTS = {
    "data.panel_dir": "",
    "data.relations": "",
    "split.train": 0.65,
    "split.valid": 0.1,
    "split.test": 0.25,
    "graph.delta": 20,
    "graph.s": None,
    "graph.target_nodes": 1026,
    "graph.target_edges": 164,
    "graph.band": None,
    "graph.volume_cap": 10.0,
    "enhance.enabled": True,
    "enhance.k0": 5,
    "enhance.min_len": 10,
    "enhance.max_len": None,
    "enhance.metric": "euclidean",
    "enhance.m": 8,
    "enhance.eps": 0.02,
    "enhance.grid": 5,
    "cct.enabled": True,
    "cct.p_e": 0.3,
    "cct.p_tau": 0.7,
    "cct.tau": 0.4,
    "cct.euler_factor": False,
    "cct.p_f": 0.1,
    "model.hidden_width": 64,
    "model.embed_width": 64,
    "model.cell_kind": "lstm",
    "model.cell_layers": 2,
    "model.evolve_variant": "input_summarized",
    "model.window": None,
    "train.lambda": 0.1,
    "train.learning_rate": 0.01,
    "train.epochs": 50,
    "train.batch_days": 8,
    "train.clip_norm": 5.0,
    "train.cl_all_steps": False,
    "run.seed": 0,
    "run.out_dir": "out",
    "synth.n_nodes": 20,
    "synth.n_days": 120,
    "synth.strength": 0.8,
    "synth.communities": 4,
    "sweep.values": [0.1, 0.3, 0.5, 0.7, 0.9],
    "ablation.seeds": [0, 1, 2, 3, 4],
}

_POSITIVE = {"graph.delta", "graph.target_nodes", "graph.target_edges", "graph.volume_cap",
             "enhance.k0", "enhance.m", "enhance.grid", "model.hidden_width",
             "model.embed_width", "model.cell_layers", "train.learning_rate",
             "train.batch_days", "train.clip_norm", "synth.n_nodes", "synth.n_days",
             "synth.communities", "cct.tau"}
_UNIT_OPEN = {"cct.p_e", "cct.p_tau", "split.train", "split.valid", "split.test"}
_CHOICES = {"enhance.metric": ("euclidean", "js"), "model.cell_kind": ("gru", "lstm"),
            "model.evolve_variant": ("state_only", "input_summarized")}


def _leaf_aliases():
    leaves = {}
    for key in DEFAULTS:
        leaves.setdefault(key.split(".", 1)[1], []).append(key)
    return {leaf: keys[0] for leaf, keys in leaves.items() if len(keys) == 1}


_ALIASES = _leaf_aliases()


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_key(key: str) -> str:
    key = key.strip()
    if key in DEFAULTS:
        return key
    if key in _ALIASES:
        return _ALIASES[key]
    raise ConfigInvalid(f"unknown config key {key!r}")


class RunConfig:
    """Validated mapping from dotted keys to values."""

    def __init__(self, values=None):
        self.values = copy.deepcopy(DEFAULTS)
        for k, v in (values or {}).items():
            self.values[resolve_key(k)] = v
        self.validate()

    def __getitem__(self, key):
        return self.values[resolve_key(key)]

    def get(self, key, default=None):
        try:
            return self[key]
        except ConfigInvalid:
            return default

    def replace(self, **overrides):
        """Copy with overrides; keyword names use ``__`` for dots (cct__p_e)."""
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[resolve_key(k.replace("__", "."))] = v
        return RunConfig(vals)

    def with_values(self, mapping):
        vals = dict(self.values)
        for k, v in mapping.items():
            vals[resolve_key(k)] = v
        return RunConfig(vals)

    def section(self, prefix):
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def digest(self, keys=None):
        sub = {k: self.values[k] for k in (keys or sorted(self.values))}
        return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()

    def to_text(self):
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(self.values.items()))

    def as_dict(self):
        return dict(self.values)

    def validate(self):
        v = self.values
        for key in _POSITIVE:
            val = v[key]
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
                raise ConfigInvalid(f"{key} must be a positive number, got {val!r}")
        for key in _UNIT_OPEN:
            val = v[key]
            if not isinstance(val, (int, float)) or not 0 < val < 1:
                raise ConfigInvalid(f"{key} must lie in (0, 1), got {val!r}")
        for key, options in _CHOICES.items():
            if v[key] not in options:
                raise ConfigInvalid(f"{key} must be one of {options}, got {v[key]!r}")
        if abs(v["split.train"] + v["split.valid"] + v["split.test"] - 1) > 1e-9:
            raise ConfigInvalid("split fractions must sum to 1")
        if not 0 <= v["cct.p_f"] < 1:
            raise ConfigInvalid("cct.p_f must lie in [0, 1)")
        if v["train.lambda"] < 0:
            raise ConfigInvalid("train.lambda must be >= 0")
        if v["train.epochs"] < 0:
            raise ConfigInvalid("train.epochs must be >= 0")
        if v["graph.s"] is not None and not v["graph.s"] > 0:
            raise ConfigInvalid("graph.s must be positive")
        if v["enhance.min_len"] < 1:
            raise ConfigInvalid("enhance.min_len must be >= 1")
        if not 0 <= v["synth.strength"] <= 1:
            raise ConfigInvalid("synth.strength must lie in [0, 1]")
        for key in ("graph.band", "model.window", "enhance.max_len"):
            if v[key] is not None and not v[key] > 0:
                raise ConfigInvalid(f"{key} must be positive or null")
        for key in ("sweep.values",):
            if not v[key] or any(not 0 < x < 1 for x in v[key]):
                raise ConfigInvalid(f"{key} must be a non-empty list of values in (0, 1)")
        for key in ("enhance.enabled", "cct.enabled", "cct.euler_factor", "train.cl_all_steps"):
            if not isinstance(v[key], bool):
                raise ConfigInvalid(f"{key} must be true or false")
        return self


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            values[resolve_key(key)] = parse_value(val)
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        values[resolve_key(key)] = parse_value(val)
    return RunConfig(values)
