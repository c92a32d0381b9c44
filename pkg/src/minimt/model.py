"""Parameter container shared by both architectures."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class Model:
    """Holds named parameters and the decoding interface used by search.

    Subclasses create their weights through ``add_param``; ``param_info``
    records what each tensor is (weight, bias, embedding, lstm_bias, gain)
    so initialisation can treat them accordingly. Several names may point
    at the same ``Parameter`` after weight tying.
    """

    arch = "base"

    def __init__(self, src_vocab_size: int, trg_vocab_size: int):
        self.src_vocab_size = src_vocab_size
        self.trg_vocab_size = trg_vocab_size
        self.params: dict[str, Parameter] = {}
        self.param_info: dict[str, dict] = {}
        self.tied_softmax = False

    def add_param(self, name: str, shape, kind: str = "weight", gates: int = 1) -> Parameter:
        p = Parameter(name, np.zeros(shape))
        self.params[name] = p
        self.param_info[name] = {"kind": kind, "gates": gates}
        return p

    def p(self, name: str) -> Parameter:
        return self.params[name]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        seen, out = set(), []
        for name, p in self.params.items():
            if id(p) not in seen:
                seen.add(id(p))
                out.append((name, p))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.parameters())

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()], dtype=np.int64))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise ConfigError(f"parameter mismatch; missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ConfigError(f"parameter {name}: checkpoint shape {state[name].shape} != model {p.shape}")
            p.data[...] = state[name]

    def output_matrix(self, embed_name: str, out_name: str) -> Tensor:
        if self.tied_softmax:
            return T.transpose(self.params[embed_name])
        return self.params[out_name]

    # -- decoding interface -------------------------------------------------
    # start(src, src_lengths) -> state; step(state, prev_ids) ->
    # (log_probs ndarray (B, V), attention ndarray (B, Lx), new state);
    # select(state, indices) -> state restricted to the given rows.

    def start(self, src: np.ndarray, src_lengths: np.ndarray) -> dict:
        raise NotImplementedError

    def step(self, state: dict, prev_ids: np.ndarray):
        raise NotImplementedError

    @staticmethod
    def select(state: dict, indices) -> dict:
        idx = np.asarray(indices, dtype=np.int64)
        out = {}
        for k, v in state.items():
            if isinstance(v, Tensor):
                out[k] = Tensor(v.data[idx])
            elif isinstance(v, np.ndarray):
                out[k] = v[idx]
            elif isinstance(v, list):
                out[k] = [Tensor(t.data[idx]) if isinstance(t, Tensor) else t[idx] for t in v]
            else:
                out[k] = v
        return out

