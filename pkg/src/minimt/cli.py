"""Command line: ``minimt train|test|translate <config>``."""
from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from . import training
from .builders import build_model
from .config import data_path, load_config
from .data import AlignmentError, filter_by_length, load_corpus, post_process, read_lines, tokenize
from .metrics import corpus_bleu
from .model import ConfigError, Model
from .plotting import dump_attention  # noqa: F401  (re-exported)
from .search import DecodeConfig, beam_search, greedy_decode
from .tensor import RngState
from .training import TrainConfig, list_checkpoints, read_checkpoint, train_loop
from .vocab import Vocabulary, build_vocabulary, count_tokens

logger = logging.getLogger("minimt")

SEED_ENV = "MINIMT_SEED"


class CliError(Exception):
    pass


def _setup_logging(model_dir: Path | None = None) -> list[logging.Handler]:
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if model_dir is not None:
        handlers.append(logging.FileHandler(model_dir / "train.log", encoding="utf-8"))
    for h in handlers:
        h.setFormatter(fmt)
        logger.addHandler(h)
    logger.setLevel(logging.INFO)
    return handlers


def _teardown_logging(handlers) -> None:
    for h in handlers:
        logger.removeHandler(h)
        h.close()


def _train_config(cfg: dict) -> TrainConfig:
    tcfg = dict(cfg["training"])
    if os.environ.get(SEED_ENV):
        tcfg["seed"] = int(os.environ[SEED_ENV])
    return TrainConfig.from_dict(tcfg)


def _vocab_paths(cfg: dict) -> tuple[Path, Path]:
    model_dir = Path(cfg["training"]["model_dir"])
    d = cfg["data"]
    return (Path(d["src_vocab"]) if d["src_vocab"] else model_dir / "src_vocab.txt",
            Path(d["trg_vocab"]) if d["trg_vocab"] else model_dir / "trg_vocab.txt")


def build_vocabs(cfg: dict, train_corpus) -> tuple[Vocabulary, Vocabulary]:
    d = cfg["data"]
    src_file, trg_file = d["src_vocab"], d["trg_vocab"]
    if cfg["model"]["tied_embeddings"] and not (src_file or trg_file):
        counts = count_tokens(train_corpus.src + train_corpus.trg)
        shared = build_vocabulary(counts, max(d["src_voc_limit"], d["trg_voc_limit"]),
                                  min(d["src_min_freq"], d["trg_min_freq"]))
        return shared, shared
    src = Vocabulary.from_file(src_file) if src_file else build_vocabulary(
        count_tokens(train_corpus.src), d["src_voc_limit"], d["src_min_freq"])
    trg = Vocabulary.from_file(trg_file) if trg_file else build_vocabulary(
        count_tokens(train_corpus.trg), d["trg_voc_limit"], d["trg_min_freq"])
    return src, trg


def load_vocabs(cfg: dict) -> tuple[Vocabulary, Vocabulary]:
    src_path, trg_path = _vocab_paths(cfg)
    for p in (src_path, trg_path):
        if not p.exists():
            raise CliError(f"vocabulary file {p} not found; train a model first")
    return Vocabulary.from_file(src_path), Vocabulary.from_file(trg_path)


def resolve_checkpoint(cfg: dict, override: str | None) -> Path:
    """``--ckpt`` beats ``testing.ckpt``, which beats ``best.ckpt`` and then
    the newest numbered checkpoint in ``model_dir``."""
    searched = []
    if override:
        candidates = [Path(override)]
    else:
        model_dir = Path(cfg["training"]["model_dir"])
        candidates = []
        if cfg["testing"]["ckpt"]:
            candidates.append(Path(cfg["testing"]["ckpt"]))
        candidates.append(model_dir / "best.ckpt")
        numbered = list_checkpoints(model_dir) if model_dir.is_dir() else []
        candidates.append(numbered[-1] if numbered else model_dir / "<step>.ckpt")
    for c in candidates:
        searched.append(str(c))
        if c.is_file():
            return c
    raise CliError("no checkpoint found; searched: " + ", ".join(searched))


def load_model(cfg: dict, ckpt_path: Path) -> tuple[Model, Vocabulary, Vocabulary]:
    src_vocab, trg_vocab = load_vocabs(cfg)
    model = build_model(cfg["model"], len(src_vocab), len(trg_vocab))
    try:
        ckpt = read_checkpoint(ckpt_path)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot read checkpoint {ckpt_path}: {e}") from None
    model.load_state_dict(ckpt.params)
    return model, src_vocab, trg_vocab


def _decode_config(cfg: dict) -> DecodeConfig:
    return DecodeConfig(beam_size=cfg["testing"]["beam_size"],
                        max_output_length=cfg["training"]["max_output_length"],
                        alpha=cfg["testing"]["alpha"])


def _surface(tokens: list[str], cfg: dict) -> str:
    if cfg["data"]["level"] == "char":
        return "".join(tokens)
    return post_process(tokens, cfg["testing"]["merge_subwords"])


def translate_line(model, line: str, cfg: dict, dcfg: DecodeConfig, src_vocab, trg_vocab) -> str:
    src_ids = src_vocab.encode(tokenize(line, cfg["data"]["level"], cfg["data"]["lowercase"]))
    if dcfg.beam_size == 0:
        ids, _ = greedy_decode(model, src_ids, dcfg.max_output_length)
    else:
        ids = beam_search(model, src_ids, dcfg).output
    return _surface(trg_vocab.decode(ids), cfg)


# ---------------------------------------------------------------------------
# commands


def cmd_train(config_path, interrupt: threading.Event | None = None) -> int:
    cfg = load_config(config_path)
    tcfg = _train_config(cfg)
    model_dir = Path(tcfg.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    handlers = _setup_logging(model_dir)
    interrupt = interrupt or threading.Event()
    prev_handler = None
    try:
        d = cfg["data"]
        if not d["train"] or not d["dev"]:
            raise CliError("data section needs 'train' and 'dev' keys for training")
        train = load_corpus(data_path(d["train"], d["src"]), data_path(d["train"], d["trg"]),
                            d["level"], d["lowercase"])
        dev = load_corpus(data_path(d["dev"], d["src"]), data_path(d["dev"], d["trg"]),
                          d["level"], d["lowercase"])
        if d["max_sent_length"] is not None:
            vocab_corpus = filter_by_length(train, d["max_sent_length"])
        else:
            vocab_corpus = train
        src_vocab, trg_vocab = build_vocabs(cfg, vocab_corpus)
        src_vocab.to_file(model_dir / "src_vocab.txt")
        trg_vocab.to_file(model_dir / "trg_vocab.txt")
        logger.info("Vocabulary sizes: src %d, trg %d", len(src_vocab), len(trg_vocab))

        model = build_model(cfg["model"], len(src_vocab), len(trg_vocab), RngState(tcfg.seed))
        logger.info("Total params: %d", model.num_parameters())
        resume = read_checkpoint(tcfg.load_model) if tcfg.load_model else None
        if resume is not None:
            logger.info("Resuming from %s at step %d", tcfg.load_model, resume.step)

        if threading.current_thread() is threading.main_thread():
            prev_handler = signal.signal(signal.SIGINT, lambda *_: interrupt.set())
        manager = train_loop(tcfg, model, train, dev, src_vocab, trg_vocab,
                             max_sent_length=d["max_sent_length"], resume=resume, interrupt=interrupt)
        logger.info("Stopped: %s", manager.stop_reason)
        return 0
    except (CliError, ConfigError, AlignmentError, OSError, ValueError, training.TrainingError) as e:
        logger.error("%s", e)
        return 1
    finally:
        if prev_handler is not None:
            signal.signal(signal.SIGINT, prev_handler)
        _teardown_logging(handlers)


def cmd_test(config_path, ckpt: str | None = None, output: str | None = None) -> int:
    handlers = _setup_logging()
    try:
        cfg = load_config(config_path)
        d = cfg["data"]
        if not d["test"]:
            raise CliError("data section has no 'test' key; add e.g. test: \"path/to/stem\"")
        ckpt_path = resolve_checkpoint(cfg, ckpt)
        model, src_vocab, trg_vocab = load_model(cfg, ckpt_path)
        logger.info("Loaded %s", ckpt_path)
        dcfg = _decode_config(cfg)
        src_file = data_path(d["test"], d["src"])
        lines = read_lines(src_file)
        hyps = [translate_line(model, line, cfg, dcfg, src_vocab, trg_vocab) for line in lines]
        out = Path(output) if output else Path(cfg["training"]["model_dir"]) / f"{Path(d['test']).name}.hyp.{d['trg']}"
        out.write_text("".join(h + "\n" for h in hyps), encoding="utf-8")
        trg_file = data_path(d["test"], d["trg"])
        if trg_file.exists():
            refs = [tokenize(r, d["level"], d["lowercase"]) for r in read_lines(trg_file)]
            hyp_toks = [tokenize(h, d["level"]) for h in hyps]
            print(f"BLEU: {100 * corpus_bleu(hyp_toks, refs):.2f}")
        logger.info("Wrote %d hypotheses to %s", len(hyps), out)
        return 0
    except (CliError, ConfigError, AlignmentError, OSError, ValueError) as e:
        logger.error("%s", e)
        return 1
    finally:
        _teardown_logging(handlers)


def cmd_translate(config_path, ckpt: str | None = None, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    handlers = _setup_logging()
    try:
        cfg = load_config(config_path)
        model, src_vocab, trg_vocab = load_model(cfg, resolve_checkpoint(cfg, ckpt))
        dcfg = _decode_config(cfg)
        interactive = hasattr(stdin, "isatty") and stdin.isatty()
        while True:
            if interactive:
                stdout.write("Please enter a source sentence (pre-processed): ")
                stdout.flush()
            line = stdin.readline()
            if not line:
                break
            hyp = translate_line(model, line.rstrip("\n"), cfg, dcfg, src_vocab, trg_vocab)
            stdout.write(("Translation: " + hyp if interactive else hyp) + "\n")
            stdout.flush()
        return 0
    except (CliError, ConfigError, OSError, ValueError) as e:
        logger.error("%s", e)
        return 1
    finally:
        _teardown_logging(handlers)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="minimt", description="Minimal neural machine translation")
    sub = parser.add_subparsers(dest="mode", required=True)
    p = sub.add_parser("train", help="train a model")
    p.add_argument("config")
    p = sub.add_parser("test", help="decode the configured test set")
    p.add_argument("config")
    p.add_argument("--ckpt", help="checkpoint to use instead of the configured one")
    p.add_argument("--output", help="file for the hypotheses")
    p = sub.add_parser("translate", help="translate stdin to stdout")
    p.add_argument("config")
    p.add_argument("--ckpt", help="checkpoint to use instead of the configured one")
    args = parser.parse_args(argv)
    if args.mode == "train":
        return cmd_train(args.config)
    if args.mode == "test":
        return cmd_test(args.config, args.ckpt, args.output)
    return cmd_translate(args.config, args.ckpt)
