"""Loss, initialisation, optimisation, checkpoints and the training loop."""
from __future__ import annotations

import json
import logging
import math
import re
import shutil
import struct
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import ParallelCorpus, make_iterator
from .metrics import corpus_bleu, perplexity
from .model import ConfigError, Model
from .plotting import dump_attention
from .search import greedy_batch
from .tensor import Parameter, RngState, Tensor, no_grad
from .vocab import PAD_ID, Vocabulary

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 3.0e-4
    learning_rate_min: float = 1.0e-8
    clip_grad_norm: float | None = None
    batch_size: int = 10
    scheduling: str | None = None
    patience: int = 5
    decrease_factor: float = 0.5
    early_stopping_metric: str = "eval_metric"
    eval_metric: str = "bleu"
    epochs: int = 1
    validation_freq: int = 1000
    logging_freq: int = 100
    model_dir: str = "model"
    max_output_length: int = 100
    keep_last_ckpts: int = 5
    label_smoothing: float = 0.0
    weight_decay: float = 0.0
    seed: int = 42
    load_model: str | None = None
    dump_attention: bool = True

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if not 0.0 < self.decrease_factor < 1.0:
            raise ConfigError(f"decrease_factor must be in (0, 1), got {self.decrease_factor}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.scheduling not in (None, "none", "plateau"):
            raise ConfigError(f"scheduling must be 'plateau' or absent, got {self.scheduling!r}")
        if self.early_stopping_metric not in ("eval_metric", "loss", "ppl"):
            raise ConfigError(f"early_stopping_metric must be eval_metric, loss or ppl, "
                              f"got {self.early_stopping_metric!r}")
        if self.eval_metric != "bleu":
            raise ConfigError(f"eval_metric must be 'bleu', got {self.eval_metric!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; valid: {sorted(OPTIMIZERS)}")
        for name in ("batch_size", "epochs", "validation_freq", "logging_freq", "max_output_length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.keep_last_ckpts < 0:
            raise ConfigError("keep_last_ckpts must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def metric_mode(self) -> str:
        return "max" if self.early_stopping_metric == "eval_metric" else "min"


# ---------------------------------------------------------------------------
# loss


def smoothed_xent_loss(log_probs: Tensor, targets, pad_id: int = PAD_ID, eps: float = 0.0) -> Tensor:
    """Summed cross-entropy against label-smoothed targets.

    The gold id gets ``1 - eps`` and every other non-pad id ``eps / (V - 2)``.
    Positions whose target is ``pad_id`` contribute nothing.
    """
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {eps}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    v = log_probs.shape[-1]
    lp = T.reshape(log_probs, (-1, v))
    if eps > 0.0:
        dist = np.full((targets.size, v), eps / (v - 2))
        dist[:, pad_id] = 0.0
    else:
        dist = np.zeros((targets.size, v))
    dist[np.arange(targets.size), targets] = 1.0 - eps
    dist[targets == pad_id] = 0.0
    return T.neg(T.sum(T.mul(lp, dist)))


def batch_loss(model: Model, batch, eps: float = 0.0, rng: RngState | None = None):
    """Summed smoothed loss (Tensor) and summed gold NLL (float) for a batch."""
    logits, _, _, _ = model.forward(batch.src, batch.src_lengths, batch.trg_input, rng)
    log_probs = T.log_softmax(logits, axis=-1)
    loss = smoothed_xent_loss(log_probs, batch.trg, PAD_ID, eps)
    if eps == 0.0:
        return loss, loss.item()
    tgt = batch.trg.reshape(-1)
    lp = log_probs.data.reshape(-1, log_probs.shape[-1])
    nll = -float(lp[np.arange(tgt.size), tgt][tgt != PAD_ID].sum())
    return loss, nll


# ---------------------------------------------------------------------------
# initialisation, tying, freezing


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_parameters(model: Model, rng: RngState) -> Model:
    """Xavier-uniform weights and embeddings, zero biases, unit layer-norm
    gains, and LSTM forget-gate biases of 1. Stacked gate matrices get one
    Xavier draw per gate block."""
    for name, p in model.named_parameters():
        info = model.param_info[name]
        kind = info["kind"]
        if kind in ("weight", "embedding"):
            gates = info["gates"]
            rows, cols = p.shape
            bound = xavier_bound(rows, cols // gates)
            p.data[...] = (2.0 * rng.uniform_array(p.shape) - 1.0) * bound
        elif kind == "gain":
            p.data[...] = 1.0
        elif kind == "lstm_bias":
            H = p.shape[0] // 4
            p.data[...] = 0.0
            p.data[H:2 * H] = 1.0
        else:
            p.data[...] = 0.0
    return model


def tie_weights(model: Model, tie_embeddings: bool = False, tie_softmax: bool = False) -> Model:
    """Share storage between source and target embeddings and/or between
    the target embeddings and the output projection."""
    P = model.params
    if tie_embeddings:
        src, trg = P["src_embed.weight"], P["trg_embed.weight"]
        if src.shape != trg.shape:
            raise ConfigError(f"tied_embeddings needs equal vocab sizes and dims, got {src.shape} vs {trg.shape}")
        P["trg_embed.weight"] = src
    if tie_softmax:
        out_name = next(n for n in ("decoder.output.W", "output.W") if n in P)
        out, emb = P[out_name], P["trg_embed.weight"]
        if out.shape != emb.shape[::-1]:
            raise ConfigError(f"tied_softmax needs output size == embedding size, got {out.shape} vs {emb.shape}")
        del P[out_name]
        model.tied_softmax = True
    return model


def freeze_params(model: Model, path_prefix: str) -> list[str]:
    matched = [n for n, p in model.params.items() if n.startswith(path_prefix)]
    if not matched:
        logger.warning("freeze_params: no parameter matches %r", path_prefix)
    for n in matched:
        model.params[n].frozen = True
    return matched


# ---------------------------------------------------------------------------
# optimisation


def clip_gradients(params: Sequence[Parameter], clip_grad_norm: float | None) -> float:
    """Rescale gradients so their global L2 norm is at most ``clip_grad_norm``.
    Returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None and not p.frozen]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if clip_grad_norm is not None and norm > clip_grad_norm:
        scale = clip_grad_norm / norm
        for g in grads:
            g *= scale
    return norm


class SGD:
    name = "sgd"

    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.steps = 0

    def step(self, named_params: Sequence[tuple[str, Parameter]]) -> None:
        self.steps += 1
        for _, p in named_params:
            if p.frozen or p.grad is None:
                continue
            p.data -= self.lr * (p.grad + self.weight_decay * p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class Adam(SGD):
    """Adam with bias correction; weight decay is added to the gradient."""

    name = "adam"

    def __init__(self, lr: float, weight_decay: float = 0.0):
        super().__init__(lr, weight_decay)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named_params):
        self.steps += 1
        b1, b2 = ADAM_BETAS
        c1 = 1.0 - b1 ** self.steps
        c2 = 1.0 - b2 ** self.steps
        for name, p in named_params:
            if p.frozen or p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    def state_arrays(self):
        out = {f"adam_m/{k}": v for k, v in self.m.items()}
        out.update({f"adam_v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays):
        self.m = {k[len("adam_m/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam_m/")}
        self.v = {k[len("adam_v/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam_v/")}


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def build_optimizer(name: str, lr: float, weight_decay: float = 0.0):
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ConfigError(f"unknown optimizer {name!r}; valid: {sorted(OPTIMIZERS)}") from None
    return cls(lr, weight_decay)


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once more than ``patience``
    consecutive validations fail to strictly improve the metric."""

    patience: int = 5
    factor: float = 0.5
    mode: str = "min"
    best: float | None = None
    bad: int = 0

    def is_improvement(self, value: float) -> bool:
        if self.best is None:
            return True
        return value < self.best if self.mode == "min" else value > self.best

    def step(self, value: float, lr: float) -> float:
        if self.is_improvement(value):
            self.best = value
            self.bad = 0
            return lr
        self.bad += 1
        if self.bad > self.patience:
            self.bad = 0
            return lr * self.factor
        return lr


def scheduler_update(state: PlateauScheduler, metric_value: float, lr: float) -> float:
    return state.step(metric_value, lr)


def should_stop(epoch: int, epochs: int, lr: float, learning_rate_min: float,
                interrupted: bool) -> tuple[bool, str]:
    """``epoch`` counts completed epochs."""
    if interrupted:
        return True, "interrupt"
    if lr < learning_rate_min:
        return True, "min lr"
    if epoch >= epochs:
        return True, "epochs"
    return False, ""


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"MNMT"
CKPT_VERSION = 1
_F64_TAG = 1


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-identically."""

    params: dict[str, np.ndarray]
    optimizer: dict = field(default_factory=dict)
    optimizer_arrays: dict[str, np.ndarray] = field(default_factory=dict)
    scheduler: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    best_score: float | None = None
    best_step: int = 0
    rng_state: int = 0


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    """Binary layout (little-endian):

    magic b"MNMT", u32 version, u32 record count, then per record:
    u32 name length, UTF-8 name, u8 dtype tag (1 = f64), u32 rank,
    rank x u32 dims, raw f64 payload. Parameter records are named
    ``param/<name>``, optimizer moments ``adam_m/<name>`` / ``adam_v/<name>``.
    The trailer is u32 length plus a UTF-8 JSON object with the counters,
    optimizer and scheduler scalars, and the dropout generator state.
    """
    records = {f"param/{k}": v for k, v in ckpt.params.items()}
    records.update(ckpt.optimizer_arrays)
    buf = bytearray(CKPT_MAGIC)
    buf += struct.pack("<II", CKPT_VERSION, len(records))
    for name, arr in records.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<BI", _F64_TAG, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    meta = {
        "step": ckpt.step, "epoch": ckpt.epoch, "batch_in_epoch": ckpt.batch_in_epoch,
        "best_score": ckpt.best_score, "best_step": ckpt.best_step, "rng_state": ckpt.rng_state,
        "optimizer": ckpt.optimizer, "scheduler": ckpt.scheduler,
    }
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(raw)) + raw
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(buf))
    tmp.replace(path)


def read_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    records = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode("utf-8")
        off += n
        tag, rank = struct.unpack_from("<BI", data, off)
        off += 5
        if tag != _F64_TAG:
            raise ValueError(f"{path}: unknown dtype tag {tag} for {name}")
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        records[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    (n,) = struct.unpack_from("<I", data, off)
    meta = json.loads(data[off + 4:off + 4 + n].decode("utf-8"))
    params = {k[len("param/"):]: v for k, v in records.items() if k.startswith("param/")}
    opt_arrays = {k: v for k, v in records.items() if not k.startswith("param/")}
    return Checkpoint(params=params, optimizer=meta["optimizer"], optimizer_arrays=opt_arrays,
                      scheduler=meta["scheduler"], step=meta["step"], epoch=meta["epoch"],
                      batch_in_epoch=meta["batch_in_epoch"], best_score=meta["best_score"],
                      best_step=meta["best_step"], rng_state=meta["rng_state"])


_CKPT_RE = re.compile(r"^(\d+)\.ckpt$")


def list_checkpoints(model_dir) -> list[Path]:
    """Numbered checkpoints in ``model_dir``, oldest step first."""
    found = []
    for p in Path(model_dir).glob("*.ckpt"):
        m = _CKPT_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return [p for _, p in sorted(found)]


def save_checkpoint(model_dir, ckpt: Checkpoint, keep_last_ckpts: int, is_best: bool) -> Path | None:
    """Write ``<step>.ckpt``, prune to the newest ``keep_last_ckpts`` and copy
    to ``best.ckpt`` on a new best. ``keep_last_ckpts == 0`` writes nothing."""
    if keep_last_ckpts == 0:
        return None
    model_dir = Path(model_dir)
    path = model_dir / f"{ckpt.step}.ckpt"
    write_checkpoint(path, ckpt)
    existing = list_checkpoints(model_dir)
    for old in existing[:max(len(existing) - keep_last_ckpts, 0)]:
        old.unlink()
    if is_best:
        shutil.copyfile(path, model_dir / "best.ckpt")
    return path


def average_checkpoints(paths: Sequence) -> Checkpoint:
    """Elementwise mean of parameters; all other state from the newest step."""
    if not paths:
        raise ValueError("no checkpoints to average")
    ckpts = [read_checkpoint(p) if not isinstance(p, Checkpoint) else p for p in paths]
    ref = ckpts[0].params
    for c in ckpts[1:]:
        if set(c.params) != set(ref):
            raise ValueError(f"checkpoints disagree on parameter names: {sorted(set(c.params) ^ set(ref))}")
        for name, arr in c.params.items():
            if arr.shape != ref[name].shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} vs {ref[name].shape}")
    newest = max(ckpts, key=lambda c: c.step)
    params = {name: np.mean([c.params[name] for c in ckpts], axis=0) for name in ref}
    return Checkpoint(params=params, optimizer=dict(newest.optimizer),
                      optimizer_arrays=dict(newest.optimizer_arrays), scheduler=dict(newest.scheduler),
                      step=newest.step, epoch=newest.epoch, batch_in_epoch=newest.batch_in_epoch,
                      best_score=newest.best_score, best_step=newest.best_step, rng_state=newest.rng_state)


# ---------------------------------------------------------------------------
# training loop


def epoch_rng(seed: int, epoch: int) -> RngState:
    """Shuffling generator for one epoch; a pure function of (seed, epoch)."""
    return RngState((seed * 0x9E3779B97F4A7C15 + epoch + 1) & ((1 << 64) - 1))


def dropout_rng(seed: int) -> RngState:
    return RngState(seed ^ 0xD1B54A32D192ED03)


class TrainManager:
    """Runs epochs over the training data, validating and checkpointing on a
    fixed step interval."""

    def __init__(self, model: Model, cfg: TrainConfig, src_vocab: Vocabulary, trg_vocab: Vocabulary,
                 max_sent_length: int | None = None, interrupt: threading.Event | None = None):
        self.model = model
        self.cfg = cfg
        self.src_vocab = src_vocab
        self.trg_vocab = trg_vocab
        self.max_sent_length = max_sent_length
        self.interrupt = interrupt or threading.Event()
        self.model_dir = Path(cfg.model_dir)
        self.model_dir.mkdir(parents=True, exist_ok=True)
        self.optimizer = build_optimizer(cfg.optimizer, cfg.learning_rate, cfg.weight_decay)
        self.scheduler = PlateauScheduler(cfg.patience, cfg.decrease_factor, cfg.metric_mode)
        self.rng = dropout_rng(cfg.seed)
        self.step = 0
        self.epoch = 0
        self.batch_in_epoch = 0
        self.best_score: float | None = None
        self.best_step = 0
        self.stop_reason = ""
        self.report_path = self.model_dir / "validations.txt"

    # -- state --------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.model.state_dict(),
            optimizer={"name": self.optimizer.name, "steps": self.optimizer.steps, "lr": self.optimizer.lr},
            optimizer_arrays={k: v.copy() for k, v in self.optimizer.state_arrays().items()},
            scheduler={"best": self.scheduler.best, "bad": self.scheduler.bad, "mode": self.scheduler.mode},
            step=self.step, epoch=self.epoch, batch_in_epoch=self.batch_in_epoch,
            best_score=self.best_score, best_step=self.best_step, rng_state=self.rng.get_state())

    def restore(self, ckpt: Checkpoint) -> None:
        self.model.load_state_dict(ckpt.params)
        if ckpt.optimizer.get("name") == self.optimizer.name:
            self.optimizer.steps = ckpt.optimizer["steps"]
            self.optimizer.lr = ckpt.optimizer["lr"]
            self.optimizer.load_state_arrays(ckpt.optimizer_arrays)
        self.scheduler.best = ckpt.scheduler.get("best")
        self.scheduler.bad = ckpt.scheduler.get("bad", 0)
        self.step, self.epoch, self.batch_in_epoch = ckpt.step, ckpt.epoch, ckpt.batch_in_epoch
        self.best_score, self.best_step = ckpt.best_score, ckpt.best_step
        self.rng.set_state(ckpt.rng_state)

    # -- steps --------------------------------------------------------------

    def train_step(self, batch) -> float:
        named = self.model.named_parameters()
        T.zero_grads(p for _, p in named)
        loss, _ = batch_loss(self.model, batch, self.cfg.label_smoothing, self.rng)
        mean_loss = T.mul(loss, 1.0 / batch.ntokens)
        value = mean_loss.item()
        if not math.isfinite(value):
            T.clear_tape()
            raise TrainingError(f"non-finite loss {value} at step {self.step + 1}")
        T.backward(mean_loss)
        clip_gradients([p for _, p in named], self.cfg.clip_grad_norm)
        self.optimizer.step(named)
        return value

    def validate(self, dev: ParallelCorpus) -> dict:
        batches = make_iterator(dev, self.src_vocab, self.trg_vocab, self.cfg.batch_size, mode="eval")
        total_loss = total_nll = 0.0
        ntokens = 0
        hyps = [None] * len(dev)
        atts = [None] * len(dev)
        with no_grad():
            for batch in batches:
                loss, nll = batch_loss(self.model, batch, self.cfg.label_smoothing)
                total_loss += loss.item()
                total_nll += nll
                ntokens += batch.ntokens
                outs, att = greedy_batch(self.model, batch.src, batch.src_lengths, self.cfg.max_output_length)
                for i, o, a in zip(batch.indices, outs, att):
                    hyps[i] = self.trg_vocab.decode(o)
                    atts[i] = a
        refs = [t for _, t in dev.pairs]
        return {
            "loss": total_loss / max(ntokens, 1),
            "ppl": perplexity(total_nll, ntokens) if ntokens else float("inf"),
            "bleu": corpus_bleu(hyps, refs) if hyps else 0.0,
            "hypotheses": hyps,
            "attention": atts,
        }

    def _metric(self, result: dict) -> float:
        m = self.cfg.early_stopping_metric
        return result["bleu"] if m == "eval_metric" else result[m]

    def _is_better(self, value: float) -> bool:
        if self.best_score is None:
            return True
        return value > self.best_score if self.cfg.metric_mode == "max" else value < self.best_score

    def _report(self, result: dict, lr: float, is_best: bool) -> None:
        line = (f"Steps: {self.step}\tloss: {result['loss']:.5f}\t"
                f"{self.cfg.eval_metric}: {100 * result['bleu']:.2f}\tlr: {lr:.8f}")
        if is_best:
            line += " *"
        with open(self.report_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    # -- loop ---------------------------------------------------------------

    def train_and_validate(self, train: ParallelCorpus, dev: ParallelCorpus) -> str:
        cfg = self.cfg
        start_epoch, skip = self.epoch, self.batch_in_epoch
        processed_tokens, last_log = 0, time.perf_counter()
        stop, self.stop_reason = should_stop(start_epoch, cfg.epochs, self.optimizer.lr,
                                             cfg.learning_rate_min, self.interrupt.is_set())
        for epoch_no in range(start_epoch, cfg.epochs):
            if stop:
                break
            logger.info("EPOCH %d", epoch_no + 1)
            batches = make_iterator(train, self.src_vocab, self.trg_vocab, cfg.batch_size, mode="train",
                                    rng=epoch_rng(cfg.seed, epoch_no), max_sent_length=self.max_sent_length)
            first = skip if epoch_no == start_epoch else 0
            for b_i in range(first, len(batches)):
                batch = batches[b_i]
                loss = self.train_step(batch)
                self.step += 1
                self.epoch, self.batch_in_epoch = epoch_no, b_i + 1
                if self.batch_in_epoch == len(batches):
                    self.epoch, self.batch_in_epoch = epoch_no + 1, 0
                processed_tokens += batch.ntokens
                if self.step % cfg.logging_freq == 0:
                    elapsed = max(time.perf_counter() - last_log, 1e-9)
                    logger.info("Epoch %3d Step: %8d Batch Loss: %12.6f tokens/sec: %8.0f lr: %.8f",
                                epoch_no + 1, self.step, loss, processed_tokens / elapsed, self.optimizer.lr)
                    processed_tokens, last_log = 0, time.perf_counter()
                if self.step % cfg.validation_freq == 0:
                    self._validation_round(dev)
                # epoch_no counts completed epochs here, so only lr and interrupt can fire
                stop, self.stop_reason = should_stop(epoch_no, cfg.epochs, self.optimizer.lr,
                                                     cfg.learning_rate_min, self.interrupt.is_set())
                if stop:
                    break
            if not stop:
                self.epoch, self.batch_in_epoch = epoch_no + 1, 0
                stop, self.stop_reason = should_stop(epoch_no + 1, cfg.epochs, self.optimizer.lr,
                                                     cfg.learning_rate_min, self.interrupt.is_set())
        logger.info("Training ended (%s) after %d steps. Best %s: %s at step %d", self.stop_reason,
                    self.step, cfg.early_stopping_metric, self.best_score, self.best_step)
        return self.stop_reason

    def _validation_round(self, dev: ParallelCorpus) -> dict:
        start = time.perf_counter()
        result = self.validate(dev)
        value = self._metric(result)
        is_best = self._is_better(value)
        if is_best:
            self.best_score, self.best_step = value, self.step
        lr = self.optimizer.lr
        if self.cfg.scheduling == "plateau":
            self.optimizer.lr = scheduler_update(self.scheduler, value, lr)
        self._report(result, lr, is_best)
        path = save_checkpoint(self.model_dir, self.checkpoint(), self.cfg.keep_last_ckpts, is_best)
        if path is not None:
            logger.info("Saved checkpoint %s%s", path, " (new best)" if is_best else "")
        if self.cfg.dump_attention and dev.pairs and result["attention"][0] is not None:
            hyp = result["hypotheses"][0]
            src_tokens = list(dev.pairs[0][0]) + ["</s>"]
            att = result["attention"][0]
            # no eos row when decoding stopped at max_output_length
            trg_tokens = hyp + ["</s>"] if att.shape[0] == len(hyp) + 1 else hyp
            if att.shape == (len(trg_tokens), len(src_tokens)):
                dump_attention(att, src_tokens, trg_tokens, self.model_dir / "att" / str(self.step))
        logger.info("Validation at step %d: loss %.5f ppl %.4f bleu %.2f (%.1fs)", self.step, result["loss"],
                    result["ppl"], 100 * result["bleu"], time.perf_counter() - start)
        return result


def train_loop(cfg: TrainConfig, model: Model, train: ParallelCorpus, dev: ParallelCorpus,
               src_vocab: Vocabulary, trg_vocab: Vocabulary, max_sent_length: int | None = None,
               resume: Checkpoint | None = None, interrupt: threading.Event | None = None) -> TrainManager:
    manager = TrainManager(model, cfg, src_vocab, trg_vocab, max_sent_length, interrupt)
    if resume is not None:
        manager.restore(resume)
    manager.train_and_validate(train, dev)
    return manager
