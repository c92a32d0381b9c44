import numpy as np
import pytest
from conftest import tiny_rnn, tiny_transformer
from oracles import enumerate_best, sequence_logprob

from minimt.data import make_batch
from minimt.model import ConfigError, Model
from minimt.search import (DecodeConfig, Hypothesis, beam_search, greedy_batch, greedy_decode, length_penalty,
                           translate_corpus)
from minimt.tensor import no_grad
from minimt.vocab import BOS_ID, EOS_ID, Vocabulary


class ScriptedModel(Model):
    """Log-probabilities are a fixed function of the emitted prefix."""

    def __init__(self, table, vocab_size):
        super().__init__(4, vocab_size)
        self.table = table

    def start(self, src, src_lengths):
        B = src.shape[0]
        return {"prefix": np.zeros((B, 0), dtype=np.int64), "t": np.zeros(B, dtype=np.int64),
                "att": np.full(src.shape, 1.0 / src.shape[1])}

    def step(self, state, prev_ids):
        prefix = state["prefix"]
        if state["t"][0] > 0:
            # the first call sees bos, later calls the previously emitted token
            prefix = np.concatenate([prefix, np.asarray(prev_ids, dtype=np.int64)[:, None]], axis=1)
        rows = np.array([self.table(tuple(int(x) for x in row)) for row in prefix], dtype=float)
        return np.log(rows), state["att"], {**state, "prefix": prefix, "t": state["t"] + 1}


def scripted(table, V):
    return ScriptedModel(table, V)


def probs(V, favourite, p=0.6):
    out = np.full(V, (1 - p) / (V - 1))
    out[favourite] = p
    return out


def test_greedy_first_step_eos_gives_empty():
    m = scripted(lambda prefix: probs(6, EOS_ID), 6)
    ids, att = greedy_decode(m, [4, 5], 10)
    assert ids == [] and att.shape[0] == 1


def test_greedy_never_eos_hits_cap():
    m = scripted(lambda prefix: probs(6, 5), 6)
    ids, att = greedy_decode(m, [4], 7)
    assert ids == [5] * 7 and att.shape[0] == 7


def test_greedy_ties_pick_lowest_id():
    m = scripted(lambda prefix: np.array([0.1, 0.1, 0.1, 0.1, 0.3, 0.3]) if len(prefix) < 2
                 else probs(6, EOS_ID), 6)
    assert greedy_decode(m, [4], 5)[0] == [4, 4]


@pytest.mark.parametrize("seed", range(5))
def test_greedy_matches_argmax_replay(seed):
    m = tiny_rnn(seed, src_vocab=9, trg_vocab=9)
    src = [4, 5, 6, 7][: 1 + seed % 4]
    ids, _ = greedy_decode(m, src, 6)
    batch = make_batch([src])
    with no_grad():
        state = m.start(batch.src, batch.src_lengths)
        prev, replay = BOS_ID, []
        for _ in range(6):
            lp, _, state = m.step(state, np.array([prev]))
            prev = int(np.argmax(lp[0]))
            if prev == EOS_ID:
                break
            replay.append(prev)
    assert ids == replay


def test_greedy_batch_equals_single():
    m = tiny_transformer(2, src_vocab=9, trg_vocab=9)
    srcs = [[4, 5, 6], [7], [8, 8]]
    batch = make_batch(srcs)
    outs, atts = greedy_batch(m, batch.src, batch.src_lengths, 5)
    for s, o, a in zip(srcs, outs, atts):
        single, att = greedy_decode(m, s, 5)
        assert o == single
        assert a.shape == att.shape == (len(o) + (len(o) < 5), len(s) + 1)
        np.testing.assert_allclose(a, att, atol=1e-12)


def test_decode_config_validation():
    with pytest.raises(ConfigError):
        DecodeConfig(beam_size=-1)
    with pytest.raises(ConfigError):
        DecodeConfig(max_output_length=0)


def test_length_penalty():
    assert length_penalty(7, 0.0) == 1.0
    assert length_penalty(7, 1.0) == 2.0


@pytest.mark.parametrize("make", [tiny_rnn, tiny_transformer])
def test_beam_zero_dispatches_to_greedy(make):
    m = make(1, src_vocab=9, trg_vocab=9)
    ids, _ = greedy_decode(m, [4, 5], 6)
    hyp = beam_search(m, [4, 5], DecodeConfig(beam_size=0, max_output_length=6))
    assert hyp.output == ids
    assert hyp.logprob == pytest.approx(sequence_logprob(m, [4, 5], hyp.tokens), abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_beam_one_equals_greedy(seed):
    m = tiny_rnn(seed, src_vocab=9, trg_vocab=9, rnn_type="lstm")
    ids, _ = greedy_decode(m, [4, 6, 8], 8)
    assert beam_search(m, [4, 6, 8], DecodeConfig(beam_size=1, max_output_length=8)).output == ids


@pytest.mark.parametrize("seed", range(3))
def test_full_width_beam_is_exhaustive(seed):
    m = tiny_transformer(seed, src_vocab=7, trg_vocab=7, d=8)
    best, argmaxes = enumerate_best(m, [4, 5], 7, 3)
    hyp = beam_search(m, [4, 5], DecodeConfig(beam_size=7 ** 3, max_output_length=3))
    assert abs(hyp.logprob - best) < 1e-9
    assert hyp.tokens in argmaxes


def test_beam_hypotheses_never_continue_after_eos():
    m = tiny_rnn(3, src_vocab=9, trg_vocab=9)
    for k in (2, 3, 5):
        hyp = beam_search(m, [4, 5, 6], DecodeConfig(beam_size=k, max_output_length=5))
        assert EOS_ID not in hyp.tokens[:-1]
        assert hyp.finished


def test_beam_tie_break_is_lexicographic():
    # tokens 4 and 5 tie at every step; eos follows the first token
    def table(prefix):
        return np.array([0.0, 0.0, 0.0, 0.0, 0.5, 0.5]) + 1e-300 if not prefix else probs(6, EOS_ID, 0.9)

    hyp = beam_search(scripted(table, 6), [4], DecodeConfig(beam_size=3, max_output_length=4))
    assert hyp.tokens == [4, EOS_ID]


def test_length_penalty_changes_choice():
    # [eos] has p = 0.3; [4, eos] has p = 0.6 * 0.45 = 0.27
    def table(prefix):
        if not prefix:
            return np.array([0.025, 0.025, 0.025, 0.3, 0.6, 0.025])
        if prefix == (4,):
            return probs(6, EOS_ID, 0.45)
        return probs(6, EOS_ID, 0.99)

    m = scripted(table, 6)
    plain = beam_search(m, [4], DecodeConfig(beam_size=3, max_output_length=4, alpha=0.0))
    assert plain.tokens == [EOS_ID]
    penalised = beam_search(m, [4], DecodeConfig(beam_size=3, max_output_length=4, alpha=2.0))
    assert penalised.tokens == [4, EOS_ID]
    assert penalised.score == pytest.approx(np.log(0.27) / length_penalty(2, 2.0), abs=1e-12)


def test_hypothesis_output_strips_eos():
    assert Hypothesis([5, 6, EOS_ID]).output == [5, 6]
    assert Hypothesis([5, 6]).output == [5, 6]


def test_translate_corpus_order_and_empty():
    vocab = Vocabulary(["a", "b@@", "c", "d", "e"])
    m = tiny_rnn(0, src_vocab=len(vocab), trg_vocab=len(vocab))
    cfg = DecodeConfig(beam_size=2, max_output_length=4)
    assert translate_corpus(m, [], cfg, vocab, vocab) == []
    sents = [["a"], ["b@@", "c"], ["d", "e", "a"]]
    out = translate_corpus(m, sents, cfg, vocab, vocab)
    assert len(out) == 3
    assert out == [translate_corpus(m, [s], cfg, vocab, vocab)[0] for s in sents]
    assert all("@@ " not in line for line in out)
