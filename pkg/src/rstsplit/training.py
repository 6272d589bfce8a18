"""Teacher-forced training with Adam, step-decayed learning rate and dev-based selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .document import Document
from .inference import predict_corpus
from .metrics import evaluate
from .model import (E2E, GOLD_EDU, MODES, ModelConfig, ModelParams, build_label_inventory,
                    build_vocab, forward_loss, init_params, load_pretrained_embeddings,
                    teacher_forced_scores)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    decay_rate: float = 0.75
    decay_every: int = 5000
    batch_size_tokens: int = 10000
    max_epochs: int = 50
    seed: int = 0
    mode: str = GOLD_EDU
    beam_width_eval: int = 20
    sentence_guidance: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    eval_every: int = 1
    # stop once every non-zero target is met on the dev split
    stop_at_full_f1: float = 0.0
    stop_at_split_accuracy: float = 0.0
    stop_at_seg_f1: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in (0, 1]")
        for name in ("decay_every", "batch_size_tokens", "max_epochs", "beam_width_eval",
                     "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def lr_at(step: int, cfg: TrainConfig) -> float:
    return cfg.learning_rate * cfg.decay_rate ** (step // cfg.decay_every)


def make_batches(corpus: Sequence[Document], cfg: TrainConfig, seed: int) -> list:
    """Shuffle, then pack documents greedily up to ``batch_size_tokens``."""
    order = np.random.default_rng(seed).permutation(len(corpus))
    cap = cfg.batch_size_tokens
    batches, cur, size = [], [], 0
    for idx in order:
        doc = corpus[int(idx)]
        if cur and size + doc.n > cap:
            batches.append(cur)
            cur, size = [], 0
        cur.append(doc)
        size += doc.n
    if cur:
        batches.append(cur)
    return batches


class Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def update(self, params: ModelParams, grads: dict, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1 - cfg.beta1 ** self.t
        c2 = 1 - cfg.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            step = (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(m.dtype)
            if name == "word_emb" and params.frozen.any():
                step[params.frozen] = 0
            params.arrays[name] -= step


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def split_accuracy(docs: Sequence[Document], params: ModelParams, mode: str) -> float:
    """Fraction of gold decisions the teacher-forced decoder gets right (valid range only)."""
    right = total = 0
    for doc in docs:
        decisions, scores = teacher_forced_scores(doc, params, mode)
        for (i, j, k, _), row in zip(decisions, scores):
            hi = j + 1 if mode == E2E else j
            pred = i + 1 + int(np.argmax(row[i + 1:hi]))
            right += pred == k
            total += 1
    return 1.0 if total == 0 else right / total


def evaluate_params(docs, params: ModelParams, mode: str, beam: int = 20,
                    guidance: bool = True, workers: int = 1):
    preds = predict_corpus(docs, params, mode, beam, guidance, workers=workers)
    report, _ = evaluate(preds, docs)
    return report


def _targets_met(info: dict, cfg: TrainConfig) -> bool:
    targets = {"full": cfg.stop_at_full_f1, "split_acc": cfg.stop_at_split_accuracy,
               "seg": cfg.stop_at_seg_f1}
    active = {k: v for k, v in targets.items() if v > 0}
    return bool(active) and all(info[k] >= v for k, v in active.items())


@dataclass
class TrainResult:
    checkpoint: Optional[Path]
    params: ModelParams
    best_full_f1: float
    log: list = field(default_factory=list)
    epochs: list = field(default_factory=list)


def train(corpus: Sequence[Document], dev_corpus: Sequence[Document], cfg: TrainConfig,
          model_config: ModelConfig = ModelConfig(), checkpoint: Optional[Path] = None,
          embeddings: Optional[Path] = None, log_path: Optional[Path] = None,
          params: Optional[ModelParams] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train on ``corpus``; keep the parameters with the best dev Full F1."""
    for doc in corpus:
        if doc.gold_tree is None:
            raise TrainingError(f"training document {doc.id!r} has no gold tree")
    if params is None:
        params = init_params(model_config, build_vocab(corpus), build_label_inventory(corpus),
                             seed=cfg.seed)
        if embeddings is not None:
            params = load_pretrained_embeddings(embeddings, params)
    opt = Adam(params, cfg)
    dropout_rng = np.random.default_rng(cfg.seed + 1) if params.config.dropout else None
    records, epochs = [], []
    best = -1.0
    best_params = params.copy()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(cfg.max_epochs):
            for batch in make_batches(corpus, cfg, seed=cfg.seed + epoch):
                grads = None
                loss_s = loss_l = 0.0
                for doc in batch:
                    res = forward_loss(doc, params, cfg.mode, rng=dropout_rng)
                    if not math.isfinite(res.total):
                        raise TrainingError(f"non-finite loss at step {step}, document {doc.id!r}")
                    loss_s += res.structure
                    loss_l += res.label
                    if grads is None:
                        grads = res.grads
                    else:
                        for k, g in res.grads.items():
                            grads[k] += g
                clip_gradients(grads, cfg.clip_norm)
                lr = lr_at(step, cfg)
                opt.update(params, grads, lr)
                rec = {"step": step, "lr": lr, "loss_s": loss_s, "loss_l": loss_l}
                records.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")
                step += 1
            if (epoch + 1) % cfg.eval_every and epoch + 1 != cfg.max_epochs:
                continue
            report = evaluate_params(dev_corpus, params, cfg.mode, cfg.beam_width_eval,
                                     cfg.sentence_guidance)
            info = {"epoch": epoch + 1, "step": step, "span": report.parseval.span_f1,
                    "nuc": report.parseval.nuc_f1, "rel": report.parseval.rel_f1,
                    "full": report.parseval.full_f1, "seg": report.segmentation.f1}
            if cfg.stop_at_split_accuracy:
                info["split_acc"] = 100.0 * split_accuracy(dev_corpus, params, cfg.mode)
            improved = info["full"] > best
            if improved:
                best = info["full"]
                best_params = params.copy()
                if checkpoint is not None:
                    save_checkpoint(params, checkpoint)
            info["improved"] = improved
            epochs.append(info)
            log.info("epoch %d: span %.2f nuc %.2f rel %.2f full %.2f seg %.2f",
                     info["epoch"], info["span"], info["nuc"], info["rel"], info["full"],
                     info["seg"])
            if on_epoch:
                on_epoch(info)
            if _targets_met(info, cfg):
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(checkpoint, best_params, best, records, epochs)
