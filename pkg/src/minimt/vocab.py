"""Token vocabularies with four fixed special tokens."""
from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
SPECIALS = (UNK_TOKEN, PAD_TOKEN, BOS_TOKEN, EOS_TOKEN)
UNK_ID, PAD_ID, BOS_ID, EOS_ID = range(4)


class Vocabulary:
    """Bidirectional token/id mapping. Ids 0-3 are unk, pad, bos, eos."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    unk_id, pad_id, bos_id, eos_id = UNK_ID, PAD_ID, BOS_ID, EOS_ID

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int], cut_at_eos: bool = True) -> list[str]:
        """Ids to surface tokens; all four specials are dropped."""
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.itos):
                raise IndexError(f"id {i} outside vocabulary of size {len(self.itos)}")
            if i == EOS_ID and cut_at_eos:
                break
            if i < len(SPECIALS):
                continue
            out.append(self.itos[i])
        return out

    def to_file(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != SPECIALS:
            raise ValueError(f"{path}: first four lines must be {SPECIALS}")
        return cls(lines[4:])


def build_vocabulary(counts: Mapping[str, int], limit: int, min_freq: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times, then the ``limit`` most
    frequent; equal counts are ordered lexicographically."""
    bad = set(SPECIALS) & set(counts)
    if bad:
        raise ValueError(f"counts must not contain special tokens: {sorted(bad)}")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(kept[:max(limit, 0)])


def count_tokens(sentences: Iterable[Sequence[str]]) -> Counter:
    c = Counter()
    for s in sentences:
        c.update(s)
    for sp in SPECIALS:
        c.pop(sp, None)
    return c
