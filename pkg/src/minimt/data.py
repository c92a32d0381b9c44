"""Parallel corpora, batching and output post-processing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import RngState
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary

BPE_MARKER = "@@"


class AlignmentError(ValueError):
    pass


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]] = field(default_factory=list)
    level: str = "word"
    lowercased: bool = False

    def __len__(self):
        return len(self.pairs)

    @property
    def src(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def trg(self) -> list[list[str]]:
        return [t for _, t in self.pairs]


def tokenize(line: str, level: str = "word", lowercase: bool = False) -> list[str]:
    line = line.strip()
    if lowercase:
        line = line.lower()
    if level == "word":
        return line.split()
    if level == "char":
        return list(line)
    raise ValueError(f"unknown level {level!r}; expected 'word' or 'char'")


def read_lines(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_corpus(src_path, trg_path, level: str = "word", lowercase: bool = False) -> ParallelCorpus:
    src_lines, trg_lines = read_lines(src_path), read_lines(trg_path)
    if len(src_lines) != len(trg_lines):
        raise AlignmentError(
            f"{src_path} has {len(src_lines)} lines but {trg_path} has {len(trg_lines)}")
    pairs = [(tokenize(s, level, lowercase), tokenize(t, level, lowercase))
             for s, t in zip(src_lines, trg_lines)]
    return ParallelCorpus(pairs, level=level, lowercased=lowercase)


def filter_by_length(corpus: ParallelCorpus, max_sent_length: int) -> ParallelCorpus:
    """Drop pairs where either side is longer than ``max_sent_length`` tokens."""
    kept = [(s, t) for s, t in corpus.pairs if len(s) <= max_sent_length and len(t) <= max_sent_length]
    return ParallelCorpus(kept, level=corpus.level, lowercased=corpus.lowercased)


@dataclass
class Batch:
    """Padded id matrices for one minibatch.

    ``src`` rows end in eos. ``trg_input`` is ``<s> y_1 .. y_n`` and ``trg`` is
    ``y_1 .. y_n </s>``, both padded to the same width.
    """

    src: np.ndarray
    src_lengths: np.ndarray
    trg_input: np.ndarray | None = None
    trg: np.ndarray | None = None
    indices: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @property
    def src_mask(self) -> np.ndarray:
        return self.src != PAD_ID

    @property
    def trg_mask(self) -> np.ndarray | None:
        return None if self.trg is None else self.trg != PAD_ID

    @property
    def ntokens(self) -> int:
        return 0 if self.trg is None else int((self.trg != PAD_ID).sum())


def _pad(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def make_batch(src_ids: Sequence[Sequence[int]], trg_ids: Sequence[Sequence[int]] | None = None,
               indices: Sequence[int] | None = None) -> Batch:
    src = [list(s) + [EOS_ID] for s in src_ids]
    batch = Batch(src=_pad(src), src_lengths=np.array([len(s) for s in src], dtype=np.int64),
                  indices=list(indices) if indices is not None else list(range(len(src))))
    if trg_ids is not None:
        batch.trg_input = _pad([[BOS_ID] + list(t) for t in trg_ids])
        batch.trg = _pad([list(t) + [EOS_ID] for t in trg_ids])
    return batch


def make_iterator(corpus: ParallelCorpus, src_vocab: Vocabulary, trg_vocab: Vocabulary,
                  batch_size: int, mode: str = "eval", rng: RngState | None = None,
                  max_sent_length: int | None = None) -> list[Batch]:
    """Split a corpus into batches of ``batch_size`` sentences.

    train: length filter, shuffle with ``rng``, sort each batch by descending
    source length. eval: corpus order, untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and max_sent_length is not None:
        corpus = filter_by_length(corpus, max_sent_length)
    order = list(range(len(corpus)))
    if mode == "train" and rng is not None:
        rng.shuffle(order)
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if mode == "train":
            idx.sort(key=lambda i: -len(corpus.pairs[i][0]))
        src = [src_vocab.encode(corpus.pairs[i][0]) for i in idx]
        trg = [trg_vocab.encode(corpus.pairs[i][1]) for i in idx]
        batches.append(make_batch(src, trg, idx))
    return batches


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def post_process(tokens: Sequence[str], merge_subwords: bool = True) -> str:
    """Join tokens with spaces, undoing ``@@`` subword splits when asked."""
    if not merge_subwords:
        return " ".join(tokens)
    out: list[str] = []
    glue = False
    for tok in tokens:
        piece = tok[:-len(BPE_MARKER)] if tok.endswith(BPE_MARKER) else tok
        if glue and out:
            out[-1] += piece
        else:
            out.append(piece)
        glue = tok.endswith(BPE_MARKER)
    return " ".join(out)
