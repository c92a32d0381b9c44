"""Corpus BLEU, perplexity and accuracy."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

logger = logging.getLogger(__name__)

MAX_ORDER = 4


@dataclass
class EvalResult:
    bleu: float = 0.0
    perplexity: float = float("inf")
    sequence_accuracy: float = 0.0
    token_accuracy: float = 0.0


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_statistics(hypotheses, references):
    """Clipped matches and totals per order, plus hypothesis/reference lengths."""
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """BLEU-4 in [0, 1] with exponential smoothing of zero-match orders.

    Orders for which the hypotheses contain no n-grams at all (corpus
    shorter than n tokens per sentence) are left out of the geometric mean,
    so "a b c" against "a b c d" scores exp(1 - 4/3).
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        logger.warning("BLEU of an empty corpus is 0")
        return 0.0
    matches, totals, hyp_len, ref_len = bleu_statistics(hypotheses, references)
    if hyp_len == 0:
        return 0.0
    smooth = 1.0
    log_p = 0.0
    order = 0
    for m, t in zip(matches, totals):
        if t == 0:
            break
        order += 1
        if m == 0:
            smooth *= 2.0
            p = 1.0 / (smooth * t)
        else:
            p = m / t
        log_p += math.log(p)
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return bp * math.exp(log_p / order)


def perplexity(total_nll: float, ntokens: int) -> float:
    if ntokens <= 0:
        raise ValueError("perplexity needs at least one token")
    return math.exp(total_nll / ntokens)


def sequence_accuracy(hypotheses, references) -> float:
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    if not hypotheses:
        return 0.0
    return sum(list(h) == list(r) for h, r in zip(hypotheses, references)) / len(hypotheses)


def token_accuracy(hypotheses, references) -> float:
    """Position-wise matches over reference tokens."""
    total = sum(len(r) for r in references)
    if total == 0:
        return 0.0
    hits = sum(a == b for h, r in zip(hypotheses, references) for a, b in zip(h, r))
    return hits / total
