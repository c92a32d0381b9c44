"""Build models from a parsed ``model`` config section."""
from __future__ import annotations

from .model import ConfigError, Model
from .rnn import RnnModel
from .tensor import RngState
from .training import freeze_params, init_parameters, tie_weights
from .transformer import TransformerModel


def build_model(model_cfg: dict, src_vocab_size: int, trg_vocab_size: int,
                rng: RngState | None = None) -> Model:
    """Construct, tie, initialise (when ``rng`` is given) and freeze."""
    enc, dec = model_cfg["encoder"], model_cfg["decoder"]
    if enc["type"] != dec["type"]:
        raise ConfigError(f"encoder type {enc['type']!r} and decoder type {dec['type']!r} must match")
    if enc["type"] == "recurrent":
        if enc["rnn_type"] != dec["rnn_type"]:
            raise ConfigError("encoder and decoder rnn_type must match")
        model = RnnModel(
            src_vocab_size, trg_vocab_size,
            rnn_type=enc["rnn_type"],
            emb_size=enc["embeddings"]["embedding_dim"],
            trg_emb_size=dec["embeddings"]["embedding_dim"],
            enc_hidden=enc["hidden_size"], enc_layers=enc["num_layers"], bidirectional=enc["bidirectional"],
            dec_hidden=dec["hidden_size"], dec_layers=dec["num_layers"],
            attention=dec["attention"], bridge=dec["init_hidden"],
            dropout=max(enc["dropout"], dec["dropout"]),
        )
    elif enc["type"] == "transformer":
        d = enc["hidden_size"]
        for part in (enc, dec):
            if part["embeddings"]["embedding_dim"] != d or part["hidden_size"] != d:
                raise ConfigError("transformer embedding_dim and hidden_size must all be equal")
        if enc["num_heads"] != dec["num_heads"] or enc["ff_size"] != dec["ff_size"]:
            raise ConfigError("transformer encoder and decoder need the same num_heads and ff_size")
        model = TransformerModel(
            src_vocab_size, trg_vocab_size, d=d, num_heads=enc["num_heads"],
            enc_layers=enc["num_layers"], dec_layers=dec["num_layers"], ff_size=enc["ff_size"],
            dropout=max(enc["dropout"], dec["dropout"]),
        )
    else:
        raise ConfigError(f"unknown encoder type {enc['type']!r}; expected 'recurrent' or 'transformer'")

    tie_weights(model, model_cfg["tied_embeddings"], model_cfg["tied_softmax"])
    if rng is not None:
        init_parameters(model, rng)
    if enc["embeddings"]["freeze"]:
        freeze_params(model, "src_embed")
    if dec["embeddings"]["freeze"]:
        freeze_params(model, "trg_embed")
    return model
