"""Transformer encoder-decoder.

Each head holds three matrices A, B (d x d_a) and C (d x d_o) and computes
``softmax((Q A)(K B)^T) V C`` with masked scores set to a large negative
value; there is no 1/sqrt(d_a) scaling. Layers are composed as

    encoder:  H' = layer_norm(H) + X;         H_enc = ff(H') + H'
    decoder:  H' = H + Y;  Z = src-trg(H', H_enc);  H_dec = ff(layer_norm(H' + Z))

which is not the usual post-norm layout; it is kept deliberately. No final
layer norm follows the last layer.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .model import ConfigError, Model
from .tensor import RngState, Tensor
from .vocab import PAD_ID


def positional_encoding(max_len: int, d: int) -> np.ndarray:
    """Sinusoids: even columns sin(pos / 10000^(2i/d)), odd columns cos."""
    pos = np.arange(max_len)[:, None]
    div = np.power(10000.0, np.arange(0, d, 2) / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div[: d // 2])
    return pe


def causal_mask(n: int) -> np.ndarray:
    """True where query t may attend to key j, i.e. j <= t."""
    return np.tril(np.ones((n, n), dtype=bool))


def attention_head(A, B, C, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask: np.ndarray | None,
                   dropout: float = 0.0, rng: RngState | None = None):
    """Single head. ``mask`` is true at allowed (query, key) pairs and
    broadcasts to (batch, Lq, Lk). Returns (output, weights)."""
    if k_in.shape[-2] != v_in.shape[-2]:
        raise T.ShapeError(f"attention_head: keys {k_in.shape} and values {v_in.shape} differ in length")
    scores = T.matmul(T.matmul(q_in, A), T.transpose(T.matmul(k_in, B)))
    if mask is not None:
        scores = T.masked_fill(scores, ~mask)
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(T.dropout(weights, dropout, rng), T.matmul(v_in, C))
    return out, weights


class TransformerModel(Model):
    arch = "transformer"

    def __init__(self, src_vocab_size: int, trg_vocab_size: int, *, d: int = 32, num_heads: int = 4,
                 enc_layers: int = 1, dec_layers: int = 1, ff_size: int | None = None,
                 att_size: int | None = None, dropout: float = 0.0, max_len: int = 512):
        super().__init__(src_vocab_size, trg_vocab_size)
        if num_heads < 1 or d % num_heads:
            raise ConfigError(f"num_heads ({num_heads}) must divide the model size ({d})")
        self.d = d
        self.num_heads = num_heads
        self.d_o = d // num_heads
        self.d_a = att_size or self.d_o
        self.ff_size = ff_size or 4 * d
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.dropout = dropout
        self.max_len = max_len
        self.pe = positional_encoding(max_len, d)

        self.add_param("src_embed.weight", (src_vocab_size, d), kind="embedding")
        self.add_param("trg_embed.weight", (trg_vocab_size, d), kind="embedding")
        for i in range(enc_layers):
            p = f"encoder.layers.{i}"
            self._add_heads(p + ".self_att")
            self._add_norm(p + ".norm")
            self._add_ff(p + ".ff")
        for i in range(dec_layers):
            p = f"decoder.layers.{i}"
            self._add_heads(p + ".self_att")
            self._add_heads(p + ".src_att")
            self._add_norm(p + ".norm")
            self._add_ff(p + ".ff")
        self.add_param("output.W", (d, trg_vocab_size))

    def _add_heads(self, prefix: str) -> None:
        for h in range(self.num_heads):
            self.add_param(f"{prefix}.heads.{h}.A", (self.d, self.d_a))
            self.add_param(f"{prefix}.heads.{h}.B", (self.d, self.d_a))
            self.add_param(f"{prefix}.heads.{h}.C", (self.d, self.d_o))

    def _add_norm(self, prefix: str) -> None:
        self.add_param(prefix + ".gain", (self.d,), kind="gain")
        self.add_param(prefix + ".bias", (self.d,), kind="bias")

    def _add_ff(self, prefix: str) -> None:
        self.add_param(prefix + ".W1", (self.d, self.ff_size))
        self.add_param(prefix + ".b1", (self.ff_size,), kind="bias")
        self.add_param(prefix + ".W2", (self.ff_size, self.d))
        self.add_param(prefix + ".b2", (self.d,), kind="bias")

    # -- building blocks ----------------------------------------------------

    def multi_head(self, prefix: str, q_in, kv_in, mask, rng=None):
        outs, weights = [], []
        for h in range(self.num_heads):
            hp = f"{prefix}.heads.{h}"
            o, w = attention_head(self.params[hp + ".A"], self.params[hp + ".B"], self.params[hp + ".C"],
                                  q_in, kv_in, kv_in, mask, self.dropout, rng)
            outs.append(o)
            weights.append(w)
        return T.concat(outs, axis=-1), weights

    def feed_forward(self, prefix: str, x: Tensor, rng=None) -> Tensor:
        P = self.params
        inner = T.relu(T.add(T.matmul(x, P[prefix + ".W1"]), P[prefix + ".b1"]))
        out = T.add(T.matmul(inner, P[prefix + ".W2"]), P[prefix + ".b2"])
        return T.dropout(out, self.dropout, rng)

    def layer_norm(self, prefix: str, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.params[prefix + ".gain"], self.params[prefix + ".bias"])

    def embed(self, name: str, ids: np.ndarray, rng=None) -> Tensor:
        """Scaled embeddings plus positional encodings, (B, L, d)."""
        ids = np.asarray(ids)
        if ids.shape[-1] > self.max_len:
            raise IndexError(f"sequence length {ids.shape[-1]} exceeds max_len {self.max_len}")
        x = T.mul(T.lookup(self.params[name], ids), math.sqrt(self.d))
        x = T.add(x, self.pe[: ids.shape[-1]])
        return T.dropout(x, self.dropout, rng)

    def encoder_layer(self, i: int, x: Tensor, src_mask: np.ndarray, rng=None) -> Tensor:
        p = f"encoder.layers.{i}"
        h, _ = self.multi_head(p + ".self_att", x, x, src_mask[:, None, :], rng)
        h1 = T.add(self.layer_norm(p + ".norm", h), x)
        return T.add(self.feed_forward(p + ".ff", h1, rng), h1)

    def decoder_layer(self, i: int, y: Tensor, enc: Tensor, src_mask: np.ndarray, rng=None):
        p = f"decoder.layers.{i}"
        L = y.shape[-2]
        h, _ = self.multi_head(p + ".self_att", y, y, causal_mask(L)[None], rng)
        h1 = T.add(h, y)
        z, src_weights = self.multi_head(p + ".src_att", h1, enc, src_mask[:, None, :], rng)
        out = self.feed_forward(p + ".ff", self.layer_norm(p + ".norm", T.add(h1, z)), rng)
        return out, src_weights

    # -- full passes --------------------------------------------------------

    def encode(self, src, src_mask, rng=None) -> Tensor:
        x = self.embed("src_embed.weight", src, rng)
        for i in range(self.enc_layers):
            x = self.encoder_layer(i, x, src_mask, rng)
        return x

    def decode(self, trg_input, enc: Tensor, src_mask, rng=None):
        y = self.embed("trg_embed.weight", trg_input, rng)
        weights = None
        for i in range(self.dec_layers):
            y, weights = self.decoder_layer(i, y, enc, src_mask, rng)
        # mean over the heads of the last layer's src-trg attention
        att = np.mean([w.data for w in weights], axis=0)
        return y, att

    def predict_logits(self, h_dec: Tensor) -> Tensor:
        return T.matmul(h_dec, self.output_matrix("trg_embed.weight", "output.W"))

    def forward(self, src, src_lengths, trg_input, rng: RngState | None = None):
        """Returns logits (B, Ly, V), None (no recurrent state), src-trg
        attention (B, Ly, Lx) and the decoder output H_dec (B, Ly, d)."""
        src_mask = src != PAD_ID
        enc = self.encode(src, src_mask, rng)
        h_dec, att = self.decode(trg_input, enc, src_mask, rng)
        return self.predict_logits(h_dec), None, Tensor(att), h_dec

    # -- search interface ---------------------------------------------------

    def start(self, src, src_lengths) -> dict:
        src_mask = src != PAD_ID
        return {"enc": self.encode(src, src_mask), "src_mask": src_mask,
                "prefix": np.zeros((src.shape[0], 0), dtype=np.int64)}

    def step(self, state: dict, prev_ids):
        prefix = np.concatenate([state["prefix"], np.asarray(prev_ids, dtype=np.int64)[:, None]], axis=1)
        h_dec, att = self.decode(prefix, state["enc"], state["src_mask"])
        logits = self.predict_logits(h_dec[:, -1])
        return T.log_softmax(logits).data, att[:, -1], {**state, "prefix": prefix}
