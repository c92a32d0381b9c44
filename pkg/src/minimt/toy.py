"""Synthetic reverse task: the target is the source digit sequence reversed.

    python -m minimt.toy OUT_DIR [--train N] [--seed S]

writes ``train``/``dev``/``test`` files with ``.src``/``.trg`` endings and a
ready-to-run ``reverse.yaml`` config into OUT_DIR.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from .tensor import RngState

DIGITS = [str(i) for i in range(10)]

REVERSE_CONFIG = """\
name: "reverse"

data:
  src: "src"
  trg: "trg"
  train: "{root}/train"
  dev: "{root}/dev"
  test: "{root}/test"
  level: "word"
  lowercase: False
  max_sent_length: 25

testing:
  beam_size: 5
  alpha: 0.0

training:
  optimizer: "adam"
  learning_rate: {learning_rate}
  clip_grad_norm: 1.0
  batch_size: {batch_size}
  scheduling: "plateau"
  patience: 5
  decrease_factor: 0.5
  early_stopping_metric: "eval_metric"
  epochs: {epochs}
  validation_freq: {validation_freq}
  logging_freq: 100
  model_dir: "{model_dir}"
  max_output_length: 30
  keep_last_ckpts: 3
  seed: {seed}

model:
  encoder:
    rnn_type: "gru"
    embeddings:
      embedding_dim: 16
    hidden_size: 64
    bidirectional: True
  decoder:
    rnn_type: "gru"
    embeddings:
      embedding_dim: 16
    hidden_size: 64
    attention: "bahdanau"
    init_hidden: "bridge"
"""


def reverse_pairs(n: int, rng: RngState, min_len: int = 1, max_len: int = 25) -> list[tuple[list[str], list[str]]]:
    pairs = []
    for _ in range(n):
        length = min_len + rng.randbelow(max_len - min_len + 1)
        seq = [DIGITS[rng.randbelow(len(DIGITS))] for _ in range(length)]
        pairs.append((seq, seq[::-1]))
    return pairs


def write_split(stem: Path, pairs) -> None:
    stem.with_name(stem.name + ".src").write_text("".join(" ".join(s) + "\n" for s, _ in pairs), encoding="utf-8")
    stem.with_name(stem.name + ".trg").write_text("".join(" ".join(t) + "\n" for _, t in pairs), encoding="utf-8")


def make_reverse_task(out_dir, n_train: int = 20000, n_dev: int = 200, n_test: int = 100, seed: int = 1,
                      model_dir: str | None = None, batch_size: int = 32, learning_rate: float = 0.002,
                      epochs: int = 10, validation_freq: int = 500) -> Path:
    """Write the corpus and a config; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngState(seed)
    write_split(out / "train", reverse_pairs(n_train, rng))
    write_split(out / "dev", reverse_pairs(n_dev, rng))
    write_split(out / "test", reverse_pairs(n_test, rng))
    cfg = out / "reverse.yaml"
    cfg.write_text(REVERSE_CONFIG.format(
        root=out.as_posix(), model_dir=model_dir or (out / "model").as_posix(), batch_size=batch_size,
        learning_rate=learning_rate, epochs=epochs, validation_freq=validation_freq, seed=42), encoding="utf-8")
    return cfg


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    print(make_reverse_task(args.out_dir, n_train=args.train, seed=args.seed))


if __name__ == "__main__":
    main()
