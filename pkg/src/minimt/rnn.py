"""Recurrent encoder-decoder with attention and input feeding.

Shapes are batch-major throughout: B batch, Lx source length, Ly target
length, H hidden size. Row vectors are multiplied from the left, so a weight
written ``W`` in an equation ``W h`` is stored transposed as ``(in, out)``.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .model import ConfigError, Model
from .tensor import RngState, Tensor
from .vocab import PAD_ID

BRIDGE_KINDS = ("bridge", "last", "zero")
ATTENTION_KINDS = {"mlp": "mlp", "bahdanau": "mlp", "bilinear": "bilinear", "luong": "bilinear"}
GATES = {"gru": 3, "lstm": 4}


def gru_cell(x: Tensor, h: Tensor, W_ih, W_hh, b_ih, b_hh) -> Tensor:
    """One GRU step; gate order in the stacked weights is reset, update, new."""
    H = h.shape[-1]
    gi = T.add(T.matmul(x, W_ih), b_ih)
    gh = T.add(T.matmul(h, W_hh), b_hh)
    rz = T.sigmoid(T.add(gi[:, :2 * H], gh[:, :2 * H]))
    r, z = rz[:, :H], rz[:, H:]
    n = T.tanh(T.add(gi[:, 2 * H:], T.mul(r, gh[:, 2 * H:])))
    # (1 - z) * n + z * h
    return T.add(n, T.mul(z, T.sub(h, n)))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W_ih, W_hh, b):
    """One LSTM step; gate order is input, forget, cell, output."""
    H = h.shape[-1]
    gates = T.add(T.add(T.matmul(x, W_ih), T.matmul(h, W_hh)), b)
    ifo = T.sigmoid(T.concat([gates[:, :2 * H], gates[:, 3 * H:]], axis=-1))
    i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
    g = T.tanh(gates[:, 2 * H:3 * H])
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    return T.mul(o, T.tanh(c_new)), c_new


class RnnModel(Model):
    arch = "rnn"

    def __init__(self, src_vocab_size: int, trg_vocab_size: int, *,
                 rnn_type: str = "gru", emb_size: int = 16, trg_emb_size: int | None = None,
                 enc_hidden: int = 32, enc_layers: int = 1, bidirectional: bool = True,
                 dec_hidden: int = 32, dec_layers: int = 1, attention: str = "mlp",
                 bridge: str = "bridge", dropout: float = 0.0):
        super().__init__(src_vocab_size, trg_vocab_size)
        if rnn_type not in GATES:
            raise ConfigError(f"rnn_type must be one of {sorted(GATES)}, got {rnn_type!r}")
        if attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {sorted(ATTENTION_KINDS)}, got {attention!r}")
        if bridge not in BRIDGE_KINDS:
            raise ConfigError(f"init_hidden must be one of {BRIDGE_KINDS}, got {bridge!r}")
        if enc_layers < 1 or dec_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        self.rnn_type = rnn_type
        self.emb_size = emb_size
        self.trg_emb_size = trg_emb_size or emb_size
        self.enc_hidden = enc_hidden
        self.enc_layers = enc_layers
        self.bidirectional = bidirectional
        self.enc_out = enc_hidden * (2 if bidirectional else 1)
        self.dec_hidden = dec_hidden
        self.dec_layers = dec_layers
        self.attention = ATTENTION_KINDS[attention]
        self.bridge = bridge
        self.dropout = dropout
        if bridge == "last" and self.enc_out != dec_hidden:
            raise ConfigError(
                f"init_hidden 'last' needs encoder output size ({self.enc_out}) == decoder hidden ({dec_hidden})")

        self.add_param("src_embed.weight", (src_vocab_size, emb_size), kind="embedding")
        dirs = ("fw", "bw") if bidirectional else ("fw",)
        for layer in range(enc_layers):
            in_size = emb_size if layer == 0 else self.enc_out
            for d in dirs:
                self._add_rnn(f"encoder.l{layer}.{d}", in_size, enc_hidden)

        self.add_param("trg_embed.weight", (trg_vocab_size, self.trg_emb_size), kind="embedding")
        for layer in range(dec_layers):
            in_size = self.trg_emb_size + dec_hidden if layer == 0 else dec_hidden
            self._add_rnn(f"decoder.l{layer}", in_size, dec_hidden)
        if bridge == "bridge":
            self.add_param("decoder.bridge.W", (self.enc_out, dec_hidden))
            self.add_param("decoder.bridge.b", (dec_hidden,), kind="bias")
        if self.attention == "mlp":
            self.add_param("decoder.attention.W_q", (dec_hidden, dec_hidden))
            self.add_param("decoder.attention.W_k", (self.enc_out, dec_hidden))
            self.add_param("decoder.attention.v", (dec_hidden, 1))
        else:
            # score(s, h) = h^T W s
            self.add_param("decoder.attention.W", (self.enc_out, dec_hidden))
        self.add_param("decoder.att_vector.W", (dec_hidden + self.enc_out, dec_hidden))
        self.add_param("decoder.att_vector.b", (dec_hidden,), kind="bias")
        self.add_param("decoder.output.W", (dec_hidden, trg_vocab_size))

    def _add_rnn(self, prefix: str, in_size: int, hidden: int) -> None:
        g = GATES[self.rnn_type]
        self.add_param(f"{prefix}.W_ih", (in_size, g * hidden), gates=g)
        self.add_param(f"{prefix}.W_hh", (hidden, g * hidden), gates=g)
        if self.rnn_type == "gru":
            self.add_param(f"{prefix}.b_ih", (g * hidden,), kind="bias")
            self.add_param(f"{prefix}.b_hh", (g * hidden,), kind="bias")
        else:
            self.add_param(f"{prefix}.b", (g * hidden,), kind="lstm_bias")

    def _cell(self, prefix: str, x: Tensor, h: Tensor, c: Tensor | None):
        P = self.params
        if self.rnn_type == "gru":
            return gru_cell(x, h, P[prefix + ".W_ih"], P[prefix + ".W_hh"],
                            P[prefix + ".b_ih"], P[prefix + ".b_hh"]), None
        return lstm_cell(x, h, c, P[prefix + ".W_ih"], P[prefix + ".W_hh"], P[prefix + ".b"])

    # -- encoder ------------------------------------------------------------

    def _run_direction(self, prefix: str, inputs: Tensor, lengths: np.ndarray, reverse: bool):
        B, L, _ = inputs.shape
        H = self.enc_hidden
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H))) if self.rnn_type == "lstm" else None
        outputs = [None] * L
        steps = range(L - 1, -1, -1) if reverse else range(L)
        for t in steps:
            h_new, c_new = self._cell(prefix, inputs[:, t], h, c)
            valid = t < lengths
            if valid.all():
                h, c = h_new, c_new
                outputs[t] = h
            else:
                m = valid[:, None].astype(np.float64)
                # padded rows keep their previous state and emit zeros
                h = T.add(h, T.mul(T.sub(h_new, h), m))
                if c is not None:
                    c = T.add(c, T.mul(T.sub(c_new, c), m))
                outputs[t] = T.mul(h_new, m)
        return T.stack(outputs, axis=1), h

    def encode(self, src: np.ndarray, src_lengths: np.ndarray, rng: RngState | None = None):
        """Returns (states (B, Lx, enc_out), last state (B, enc_out))."""
        src_lengths = np.asarray(src_lengths)
        if (src_lengths < 1).any():
            raise ValueError("cannot encode an empty source sentence")
        x = T.dropout(T.lookup(self.params["src_embed.weight"], src), self.dropout, rng)
        for layer in range(self.enc_layers):
            if layer > 0:
                x = T.dropout(x, self.dropout, rng)
            fw, fw_last = self._run_direction(f"encoder.l{layer}.fw", x, src_lengths, reverse=False)
            if self.bidirectional:
                bw, bw_last = self._run_direction(f"encoder.l{layer}.bw", x, src_lengths, reverse=True)
                x = T.concat([fw, bw], axis=-1)
                last = T.concat([fw_last, bw_last], axis=-1)
            else:
                x, last = fw, fw_last
        return x, last

    # -- decoder ------------------------------------------------------------

    def init_hidden(self, last: Tensor) -> Tensor:
        """Initial decoder state s_0 from the last encoder state."""
        if self.bridge == "bridge":
            return T.tanh(T.add(T.matmul(last, self.params["decoder.bridge.W"]),
                                self.params["decoder.bridge.b"]))
        if self.bridge == "last":
            return last
        return Tensor(np.zeros((last.shape[0], self.dec_hidden)))

    def project_keys(self, states: Tensor) -> Tensor:
        """Key projections, computed once per source sentence."""
        name = "decoder.attention.W_k" if self.attention == "mlp" else "decoder.attention.W"
        return T.matmul(states, self.params[name])

    def attend(self, query: Tensor, states: Tensor, keys: Tensor, src_mask: np.ndarray):
        """Context vector (B, enc_out) and weights (B, Lx) for query s_{t-1}."""
        B, L = src_mask.shape
        if not src_mask.any(axis=1).all():
            raise ValueError("attention row with every source position masked")
        if self.attention == "mlp":
            q = T.reshape(T.matmul(query, self.params["decoder.attention.W_q"]), (B, 1, -1))
            scores = T.matmul(T.tanh(T.add(keys, q)), self.params["decoder.attention.v"])
        else:
            scores = T.matmul(keys, T.reshape(query, (B, -1, 1)))
        scores = T.masked_fill(T.reshape(scores, (B, L)), ~src_mask)
        weights = T.softmax(scores, axis=-1)
        context = T.matmul(T.reshape(weights, (B, 1, L)), states)
        return T.reshape(context, (B, -1)), weights

    def decoder_step(self, emb: Tensor, state: dict, rng: RngState | None = None) -> dict:
        """Advance the decoder by one token given its embedding (B, e)."""
        hidden, cells = state["hidden"], state["cells"]
        context, weights = self.attend(hidden[-1], state["states"], state["keys"], state["src_mask"])
        x = T.concat([emb, state["feed"]], axis=-1)
        new_hidden, new_cells = [], []
        for layer in range(self.dec_layers):
            if layer > 0:
                x = T.dropout(x, self.dropout, rng)
            h, c = self._cell(f"decoder.l{layer}", x, hidden[layer],
                              cells[layer] if cells is not None else None)
            new_hidden.append(h)
            new_cells.append(c)
            x = h
        att_vec = T.tanh(T.add(T.matmul(T.concat([x, context], axis=-1), self.params["decoder.att_vector.W"]),
                               self.params["decoder.att_vector.b"]))
        att_vec = T.dropout(att_vec, self.dropout, rng)
        return {**state, "hidden": new_hidden, "cells": new_cells if cells is not None else None,
                "feed": att_vec, "att": weights}

    def _initial_state(self, states: Tensor, last: Tensor, src_mask: np.ndarray) -> dict:
        s0 = self.init_hidden(last)
        hidden = [s0] * self.dec_layers
        cells = [s0] * self.dec_layers if self.rnn_type == "lstm" else None
        return {"states": states, "keys": self.project_keys(states), "src_mask": src_mask,
                "hidden": hidden, "cells": cells,
                "feed": Tensor(np.zeros((states.shape[0], self.dec_hidden))), "att": None}

    def forward(self, src, src_lengths, trg_input, rng: RngState | None = None):
        """Teacher-forced pass.

        Returns decoder outputs (B, Ly, V), the decoder's last hidden state
        (B, H), attention probabilities (B, Ly, Lx) and attentional vectors
        (B, Ly, H).
        """
        src_mask = src != PAD_ID
        states, last = self.encode(src, src_lengths, rng)
        state = self._initial_state(states, last, src_mask)
        emb = T.dropout(T.lookup(self.params["trg_embed.weight"], trg_input), self.dropout, rng)
        att_vecs, atts = [], []
        for t in range(trg_input.shape[1]):
            state = self.decoder_step(emb[:, t], state, rng)
            att_vecs.append(state["feed"])
            atts.append(state["att"])
        att_vectors = T.stack(att_vecs, axis=1)
        outputs = T.matmul(att_vectors, self.output_matrix("trg_embed.weight", "decoder.output.W"))
        return outputs, state["hidden"][-1], T.stack(atts, axis=1), att_vectors

    # -- search interface ---------------------------------------------------

    def start(self, src, src_lengths) -> dict:
        src_mask = src != PAD_ID
        states, last = self.encode(src, src_lengths)
        return self._initial_state(states, last, src_mask)

    def step(self, state: dict, prev_ids):
        emb = T.lookup(self.params["trg_embed.weight"], np.asarray(prev_ids))
        state = self.decoder_step(emb, state)
        logits = T.matmul(state["feed"], self.output_matrix("trg_embed.weight", "decoder.output.W"))
        return T.log_softmax(logits).data, state["att"].data, state
