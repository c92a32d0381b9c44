"""Greedy and beam-search decoding for either architecture."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import make_batch, post_process
from .model import ConfigError, Model
from .tensor import no_grad
from .vocab import BOS_ID, EOS_ID, Vocabulary


@dataclass
class DecodeConfig:
    beam_size: int = 0
    max_output_length: int = 100
    alpha: float = 0.0

    def __post_init__(self):
        if self.beam_size < 0:
            raise ConfigError(f"beam_size must be >= 0, got {self.beam_size}")
        if self.max_output_length < 1:
            raise ConfigError("max_output_length must be positive")
        if self.alpha < 0:
            raise ConfigError("length penalty alpha must be >= 0")


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    logprob: float = 0.0
    finished: bool = False
    score: float = 0.0

    @property
    def output(self) -> list[int]:
        """Tokens without the trailing eos."""
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS_ID else list(self.tokens)


def length_penalty(length: int, alpha: float) -> float:
    return 1.0 if alpha == 0 else ((5.0 + length) / 6.0) ** alpha


def greedy_batch(model: Model, src: np.ndarray, src_lengths: np.ndarray, max_output_length: int):
    """Argmax decoding for a padded batch.

    Returns per-row id lists (eos excluded) and attention matrices with one
    row per emitted token (eos included) and one column per source position.
    """
    B = src.shape[0]
    with no_grad():
        state = model.start(src, src_lengths)
        prev = np.full(B, BOS_ID, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        outputs = [[] for _ in range(B)]
        atts = [[] for _ in range(B)]
        for _ in range(max_output_length):
            log_probs, att, state = model.step(state, prev)
            # np.argmax returns the first maximum, i.e. the lowest id on ties
            prev = log_probs.argmax(axis=-1)
            for i in np.flatnonzero(~done):
                atts[i].append(att[i])
                if prev[i] == EOS_ID:
                    done[i] = True
                else:
                    outputs[i].append(int(prev[i]))
            if done.all():
                break
    # drop the padding columns: row i attends over src_lengths[i] positions
    return outputs, [np.array(a).reshape(len(a), src.shape[1])[:, :int(n)] for a, n in zip(atts, src_lengths)]


def greedy_decode(model: Model, src_ids: Sequence[int], max_output_length: int):
    """Decode one source sentence (ids without eos). Returns (ids, attention)."""
    batch = make_batch([src_ids])
    outs, atts = greedy_batch(model, batch.src, batch.src_lengths, max_output_length)
    return outs[0], atts[0]


def _rank(scores: np.ndarray, seqs: np.ndarray) -> np.ndarray:
    """Indices ordered by score descending, then id sequence ascending."""
    keys = [seqs[:, j] for j in range(seqs.shape[1] - 1, -1, -1)] + [-scores]
    return np.lexsort(keys)


def beam_search(model: Model, src_ids: Sequence[int], cfg: DecodeConfig) -> Hypothesis:
    """Beam search for one sentence; ``beam_size == 0`` falls back to greedy.

    Each step expands every live hypothesis over the whole vocabulary and
    keeps the ``beam_size`` best candidates. Candidates ending in eos leave
    the beam as finished; at the length cap the remaining live ones finish
    too. The final answer is the best finished hypothesis by
    ``logprob / ((5 + len) / 6) ** alpha``.
    """
    if cfg.beam_size == 0:
        ids, _ = greedy_decode(model, src_ids, cfg.max_output_length)
        with no_grad():
            lp = _sequence_logprob(model, src_ids, ids, cfg.max_output_length)
        toks = ids + ([EOS_ID] if len(ids) < cfg.max_output_length else [])
        return Hypothesis(toks, lp, True, lp / length_penalty(len(toks), cfg.alpha))

    batch = make_batch([src_ids])
    finished: list[Hypothesis] = []
    with no_grad():
        state = model.start(batch.src, batch.src_lengths)
        seqs = np.zeros((1, 0), dtype=np.int64)
        logprobs = np.zeros(1)
        for t in range(cfg.max_output_length):
            prev = seqs[:, -1] if t else np.full(len(seqs), BOS_ID, dtype=np.int64)
            step_lp, _, state = model.step(state, prev)
            V = step_lp.shape[1]
            cand_lp = (logprobs[:, None] + step_lp).reshape(-1)
            parents = np.repeat(np.arange(len(seqs)), V)
            cand_seqs = np.concatenate([seqs[parents], np.tile(np.arange(V), len(seqs))[:, None]], axis=1)
            cand_scores = cand_lp / length_penalty(t + 1, cfg.alpha)
            top = _rank(cand_scores, cand_seqs)[:cfg.beam_size]
            last_step = t == cfg.max_output_length - 1
            keep = []
            for c in top:
                if cand_seqs[c, -1] == EOS_ID or last_step:
                    finished.append(Hypothesis(cand_seqs[c].tolist(), float(cand_lp[c]), True,
                                               float(cand_scores[c])))
                else:
                    keep.append(c)
            if not keep:
                break
            keep = np.array(keep)
            seqs, logprobs = cand_seqs[keep], cand_lp[keep]
            state = model.select(state, parents[keep])
    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished[0]


def _sequence_logprob(model: Model, src_ids, ids: Sequence[int], max_output_length: int) -> float:
    batch = make_batch([src_ids])
    state = model.start(batch.src, batch.src_lengths)
    toks = list(ids) + ([EOS_ID] if len(ids) < max_output_length else [])
    prev, total = BOS_ID, 0.0
    for tok in toks:
        lp, _, state = model.step(state, np.array([prev]))
        total += float(lp[0, tok])
        prev = tok
    return total


def translate_corpus(model: Model, sentences: Sequence[Sequence[str]], cfg: DecodeConfig,
                     src_vocab: Vocabulary, trg_vocab: Vocabulary, merge_subwords: bool = True) -> list[str]:
    """Translate tokenised sentences in order, returning post-processed strings."""
    out = []
    for tokens in sentences:
        src_ids = src_vocab.encode(tokens)
        if cfg.beam_size == 0:
            ids, _ = greedy_decode(model, src_ids, cfg.max_output_length)
        else:
            ids = beam_search(model, src_ids, cfg).output
        out.append(post_process(trg_vocab.decode(ids), merge_subwords))
    return out
