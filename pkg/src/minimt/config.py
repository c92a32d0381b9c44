"""Configuration files.

A config is a nested ``key: value`` document (a YAML subset): sections are
mappings, leaves are strings, numbers or booleans, and ``#`` starts a
comment. Lists are rejected, unknown keys are errors, and every missing key
takes the default listed in ``SCHEMA``.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .model import ConfigError

REQUIRED = object()

# key -> (accepted types, default); nested dicts are sections
SCHEMA: dict = {
    "name": ((str,), "minimt"),
    "data": {
        "src": ((str,), REQUIRED),
        "trg": ((str,), REQUIRED),
        "train": ((str,), None),
        "dev": ((str,), None),
        "test": ((str,), None),
        "level": ((str,), "word"),
        "lowercase": ((bool,), False),
        "max_sent_length": ((int,), None),
        "src_voc_limit": ((int,), 1_000_000_000),
        "trg_voc_limit": ((int,), 1_000_000_000),
        "src_min_freq": ((int,), 1),
        "trg_min_freq": ((int,), 1),
        "src_vocab": ((str,), None),
        "trg_vocab": ((str,), None),
    },
    "model": {
        "tied_embeddings": ((bool,), False),
        "tied_softmax": ((bool,), False),
        "encoder": {
            "type": ((str,), "recurrent"),
            "rnn_type": ((str,), "gru"),
            "embeddings": {
                "embedding_dim": ((int,), 16),
                "freeze": ((bool,), False),
            },
            "hidden_size": ((int,), 32),
            "bidirectional": ((bool,), True),
            "num_layers": ((int,), 1),
            "dropout": ((float,), 0.0),
            "num_heads": ((int,), 4),
            "ff_size": ((int,), None),
        },
        "decoder": {
            "type": ((str,), "recurrent"),
            "rnn_type": ((str,), "gru"),
            "embeddings": {
                "embedding_dim": ((int,), 16),
                "freeze": ((bool,), False),
            },
            "hidden_size": ((int,), 32),
            "num_layers": ((int,), 1),
            "dropout": ((float,), 0.0),
            "attention": ((str,), "bahdanau"),
            "init_hidden": ((str,), "bridge"),
            "num_heads": ((int,), 4),
            "ff_size": ((int,), None),
        },
    },
    "training": {
        "optimizer": ((str,), "adam"),
        "learning_rate": ((float,), 3.0e-4),
        "learning_rate_min": ((float,), 1.0e-8),
        "clip_grad_norm": ((float,), None),
        "batch_size": ((int,), 10),
        "scheduling": ((str,), None),
        "patience": ((int,), 5),
        "decrease_factor": ((float,), 0.5),
        "early_stopping_metric": ((str,), "eval_metric"),
        "eval_metric": ((str,), "bleu"),
        "epochs": ((int,), 1),
        "validation_freq": ((int,), 1000),
        "logging_freq": ((int,), 100),
        "model_dir": ((str,), REQUIRED),
        "max_output_length": ((int,), 100),
        "keep_last_ckpts": ((int,), 5),
        "label_smoothing": ((float,), 0.0),
        "weight_decay": ((float,), 0.0),
        "seed": ((int,), 42),
        "load_model": ((str,), None),
        "dump_attention": ((bool,), True),
    },
    "testing": {
        "beam_size": ((int,), 5),
        "alpha": ((float,), 0.0),
        "ckpt": ((str,), None),
        "merge_subwords": ((bool,), True),
    },
}


def _check_value(path: str, value, types: tuple):
    if value is None:
        return None
    if isinstance(value, (list, tuple, dict)):
        raise ConfigError(f"{path}: expected a scalar of type {types[0].__name__}, got {type(value).__name__}")
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if float in types and isinstance(value, str):
        # PyYAML reads exponent forms without a dot ("1e-8") as strings
        try:
            return float(value)
        except ValueError:
            pass
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{path}: expected {types[0].__name__}, got boolean {value}")
    if not isinstance(value, types):
        raise ConfigError(f"{path}: expected {types[0].__name__}, got {type(value).__name__} {value!r}")
    return value


def _apply(schema: dict, raw: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a section, got {type(raw).__name__}")
    for key in raw:
        if key not in schema:
            where = f"section '{path}'" if path else "top level"
            raise ConfigError(f"unknown key '{key}' in {where}")
    out = {}
    for key, spec in schema.items():
        full = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _apply(spec, raw.get(key) or {}, full)
            continue
        types, default = spec
        if key in raw:
            out[key] = _check_value(full, raw[key], types)
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{full}'")
        else:
            out[key] = copy.copy(default)
    return out


def parse_config(text: str) -> dict:
    """Parse config text into a nested dict with all defaults filled in."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config syntax error: {e}") from None
    return _apply(SCHEMA, raw or {}, "")


def load_config(path) -> dict:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def render_config(cfg: dict) -> str:
    def strip(d):
        return {k: strip(v) if isinstance(v, dict) else v for k, v in d.items() if v is not None}

    return yaml.safe_dump(strip(cfg), sort_keys=False, default_flow_style=False, indent=2)


def data_path(stem: str, lang: str) -> Path:
    """``my_data`` + ``en`` -> ``my_data.en``."""
    return Path(f"{stem}.{lang}")
