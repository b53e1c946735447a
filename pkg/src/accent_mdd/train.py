"""Mini-batch training with an Adam update rule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Graph
from .corpus import Utterance
from .ctc import is_feasible
from .layers import ParamStore
from .mdd_eval import MetricsReport, score_corpus
from .model import (
    HARD_VARIANTS,
    SOFT_VARIANTS,
    AccentMDD,
    ConfigError,
    accent_accuracy,
    batch_loss,
    make_batch,
    predict_corpus,
    subsample_frames,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, store: ParamStore, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.store, self.lr, self.b1, self.b2, self.eps = store, lr, b1, b2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in store}
        self.v = {n: np.zeros_like(t.data) for n, t in store}
        self.t = 0

    def step(self, clip_norm: float | None = None) -> float:
        grads = {n: t.grad for n, t in self.store if t.grad is not None}
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = 1.0
        if clip_norm and norm > clip_norm:
            scale = clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for n, t in self.store:
            g = grads.get(n)
            if g is None:
                continue
            g = g * scale
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            t.data = t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


@dataclass
class TrainLog:
    variant: str
    epochs: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    skipped: int = 0
    final_dev: MetricsReport | None = None
    final_dev_accent_acc: float | None = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "epochs": self.epochs,
            "skipped_infeasible": self.skipped,
            "final_dev": None if self.final_dev is None else self.final_dev.to_dict(),
            "final_dev_accent_acc": self.final_dev_accent_acc,
        }


def evaluate(model: AccentMDD, utts: Sequence[Utterance], threads: int = 1) -> MetricsReport:
    preds = predict_corpus(model, utts, threads=threads)
    return score_corpus((u.canonical, u.perceived, p) for u, p in zip(utts, preds))


def train(
    model: AccentMDD,
    corpus: Sequence[Utterance],
    dev: Sequence[Utterance] | None = None,
    *,
    epochs: int | None = None,
    max_steps: int | None = None,
    progress: Callable[[str], None] | None = None,
    eval_every_epoch: bool = True,
) -> TrainLog:
    """Train in place.  ``max_steps`` caps optimizer steps (cycling the corpus)."""
    c = model.config
    if not corpus:
        raise ValueError("empty training corpus")
    if model.variant in HARD_VARIANTS + SOFT_VARIANTS and any(not u.has_accent for u in corpus):
        raise ConfigError(f"variant {model.variant} needs accent labels on every training utterance")
    n_epochs = c.epochs if epochs is None else epochs
    usable = []
    skipped = 0
    for u in corpus:
        S = subsample_frames(u.frames, c.subsample).shape[0]
        if u.perceived and is_feasible(S, u.perceived):
            usable.append(u)
        else:
            skipped += 1
    if not usable:
        raise ValueError("no training utterance has a feasible CTC alignment")
    if skipped:
        log.info("skipping %d utterances with infeasible CTC alignment", skipped)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(c.seed, spawn_key=(11,))))
    opt = Adam(model.store, lr=c.lr)
    tlog = TrainLog(model.variant, skipped=skipped)
    say = progress or (lambda s: None)
    step = 0
    epoch = 0
    while True:
        if max_steps is None and epoch >= n_epochs:
            break
        if max_steps is not None and step >= max_steps:
            break
        order = rng.permutation(len(usable))
        losses = []
        for i in range(0, len(order), c.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            batch = make_batch([usable[j] for j in order[i : i + c.batch_size]], c.subsample)
            g = Graph()
            out = model.forward(g, batch, "train")
            loss = batch_loss(model, out, batch)
            val = float(loss.value)
            if not math.isfinite(val):
                raise TrainingDiverged(f"non-finite loss {val} at step {step} (epoch {epoch})")
            model.store.zero_grad()
            g.backward(loss)
            opt.step(c.clip_norm)
            losses.append(val)
            tlog.step_losses.append(val)
            step += 1
        epoch += 1
        rec = {"epoch": epoch, "steps": step, "loss": float(np.mean(losses)) if losses else None}
        if dev and eval_every_epoch:
            rep = evaluate(model, dev)
            rec["dev"] = rep.to_dict()
            acc = accent_accuracy(model, dev)
            if acc is not None:
                rec["dev_accent_acc"] = acc
        tlog.epochs.append(rec)
        f1 = rec.get("dev", {}).get("F1")
        say(f"[{model.variant}] epoch {epoch} step {step} loss {rec['loss']:.4f}"
            + ("" if f1 is None else f" dev F1 {f1:.4f}"))
    model.store.zero_grad()
    if dev:
        tlog.final_dev = evaluate(model, dev)
        tlog.final_dev_accent_acc = accent_accuracy(model, dev)
    return tlog
