"""Attention matrix dumps: a TSV table and an 8-bit grayscale PGM image."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


def attention_pixels(weights: np.ndarray) -> np.ndarray:
    """Fixed scale vmin=0, vmax=1: weight 1 is black (0), weight 0 white (255)."""
    return np.floor(255.0 * (1.0 - weights) + 0.5).astype(np.uint8)


def dump_attention(weights, src_tokens: Sequence[str], trg_tokens: Sequence[str], out_stem) -> tuple[Path, Path]:
    """Write ``<stem>.tsv`` (rows = target tokens, columns = source tokens)
    and ``<stem>.pgm``. Values outside [0, 1] are clamped."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(trg_tokens), len(src_tokens)):
        raise ValueError(f"attention shape {w.shape} does not match "
                         f"{len(trg_tokens)} target x {len(src_tokens)} source tokens")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        logger.warning("attention weights outside [0, 1] clamped")
        w = np.clip(w, 0.0, 1.0)
    stem = Path(out_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    tsv, pgm = stem.with_name(stem.name + ".tsv"), stem.with_name(stem.name + ".pgm")
    lines = ["\t" + "\t".join(src_tokens)]
    lines += [tok + "\t" + "\t".join(f"{v:.6f}" for v in row) for tok, row in zip(trg_tokens, w)]
    tsv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    pixels = attention_pixels(w)
    header = f"P5\n{w.shape[1]} {w.shape[0]}\n255\n".encode("ascii")
    pgm.write_bytes(header + pixels.tobytes())
    return tsv, pgm
