"""Hybrid CTC-attention MDD model with accent-modulated encoder variants.

Variants:

* ``baseline`` - encoder states go straight to the CTC head and decoder.
* ``amc`` / ``amg`` - a looked-up accent embedding is fused into every
  encoder state by concatenation+projection or by gating.
* ``amc-s`` / ``amg-s`` - the embedding is instead the last hidden layer of
  a Bi-GRU accent classifier run on the encoder states; the classifier is
  trained jointly and no accent label is needed at inference.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, broadcast_to, concat, stack, take_along, where
from .corpus import Utterance
from .ctc import PhoneInventory, ctc_loss_batch, is_feasible
from .layers import (
    GRU,
    AttentionDecoder,
    Embedding,
    EncoderBlock,
    LayerNorm,
    Linear,
    ParamStore,
    masked_mean,
    pad_mask,
)

VARIANTS = ("baseline", "amc", "amg", "amc-s", "amg-s")
HARD_VARIANTS = ("amc", "amg")
SOFT_VARIANTS = ("amc-s", "amg-s")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "baseline"
    alpha: float = 0.3
    beta: float = 0.2
    n_phones: int = 39
    feat_dim: int = 16
    n_accents: int = 7
    accent_dim: int = 16
    d_model: int = 64
    ff_dim: int = 128
    n_heads: int = 4
    n_layers: int = 2
    classifier_layers: int = 2
    classifier_hidden: int = 32
    subsample: int = 2
    max_positions: int = 512
    max_decode_len: int = 32
    lr: float = 3e-3
    epochs: int = 15
    batch_size: int = 8
    clip_norm: float = 5.0
    seed: int = 0

    def validate(self) -> None:
        errs = []
        if self.variant not in VARIANTS:
            errs.append(f"variant must be one of {VARIANTS}")
        for k in ("alpha", "beta"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                errs.append(f"{k} must be in [0, 1]")
        if self.n_accents < 2:
            errs.append("n_accents must be >= 2")
        if self.classifier_layers not in (1, 2, 3):
            errs.append("classifier_layers must be 1, 2 or 3")
        if self.d_model % self.n_heads:
            errs.append("d_model must be divisible by n_heads")
        if self.subsample < 1:
            errs.append("subsample must be >= 1")
        for k in ("n_phones", "feat_dim", "accent_dim", "d_model", "ff_dim", "n_layers",
                  "classifier_hidden", "max_decode_len", "epochs", "batch_size"):
            if getattr(self, k) < 1:
                errs.append(f"{k} must be >= 1")
        if self.lr <= 0:
            errs.append("lr must be positive")
        if errs:
            raise ConfigError("invalid ModelConfig: " + "; ".join(errs))

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = cls.field_types()
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, v = line.split("=", 1)
            if k not in types:
                raise ConfigError(f"unknown model config key {k!r}")
            kw[k] = types[k](v) if types[k] is not bool else v == "True"
        return cls(**kw)


def subsample_frames(frames: np.ndarray, factor: int) -> np.ndarray:
    """Average consecutive groups of ``factor`` frames; [T, F] -> [ceil(T/factor), F]."""
    if factor == 1:
        return frames
    T = frames.shape[0]
    S = -(-T // factor)
    out = np.empty((S, frames.shape[1]))
    for s in range(S):
        out[s] = frames[s * factor : (s + 1) * factor].mean(axis=0)
    return out


@dataclass
class Batch:
    ids: list[str]
    x: np.ndarray  # [B, S_max, F], subsampled and zero padded
    lengths: np.ndarray  # [B]
    accents: np.ndarray  # [B], -1 when unknown
    targets: list[list[int]] | None

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def mask(self) -> np.ndarray:
        return pad_mask(self.lengths, self.x.shape[1])


def make_batch(utts: Sequence[Utterance], subsample: int, with_targets=True) -> Batch:
    subs = [subsample_frames(u.frames, subsample) for u in utts]
    lengths = np.array([s.shape[0] for s in subs], dtype=np.int64)
    F = subs[0].shape[1]
    x = np.zeros((len(utts), int(lengths.max()), F))
    for b, s in enumerate(subs):
        x[b, : s.shape[0]] = s
    accents = np.array([u.accent if u.has_accent else -1 for u in utts], dtype=np.int64)
    targets = [list(u.perceived) for u in utts] if with_targets else None
    return Batch([u.id for u in utts], x, lengths, accents, targets)


@dataclass
class ForwardOutputs:
    ctc_log_probs: Node  # [B, S, n_phones + 2]
    att_log_probs: Node | None  # [B, L_max + 1, n_phones + 1], teacher forced
    accent_logits: Node | None  # [B, n_accents]
    fused_states: Node  # [B, S, d]
    encoder_states: Node  # [B, S, d], before fusion
    lengths: np.ndarray
    target_lengths: np.ndarray | None = None

    def att_step_dists(self, b: int = 0) -> list[np.ndarray]:
        if self.att_log_probs is None:
            return []
        n = int(self.target_lengths[b]) + 1
        return [np.exp(r) for r in self.att_log_probs.value[b, :n]]


class AccentMDD:
    def __init__(self, config: ModelConfig, store: ParamStore | None = None):
        config.validate()
        self.config = c = config
        self.inventory = PhoneInventory.of_size(c.n_phones)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(c.seed, spawn_key=(7,))))
        fresh = ParamStore()
        d = c.d_model
        self.store = fresh
        self.inp = Linear(fresh, "enc.input", c.feat_dim, d, rng)
        self.pos = Embedding(fresh, "enc.pos", c.max_positions, d, rng, scale=0.1)
        self.blocks = [EncoderBlock(fresh, f"enc.block{i}", d, c.n_heads, c.ff_dim, rng) for i in range(c.n_layers)]
        self.ln_out = LayerNorm(fresh, "enc.ln_out", d)
        v = c.variant
        if v in HARD_VARIANTS:
            self.accent_table = Embedding(fresh, "accent.table", c.n_accents, c.accent_dim, rng)
        if v in SOFT_VARIANTS:
            self.classifier = GRU(fresh, "accent.bigru", d, c.classifier_hidden, rng, layers=c.classifier_layers)
            self.cls_hidden = Linear(fresh, "accent.hidden", self.classifier.out_dim, c.accent_dim, rng)
            self.cls_out = Linear(fresh, "accent.out", c.accent_dim, c.n_accents, rng)
        if v in ("amc", "amc-s"):
            self.W1 = Linear(fresh, "fuse.amc.W1", d + c.accent_dim, d, rng)
            self.W1.W.data[:d] = np.eye(d)  # start as the identity on h_s plus an accent bias
        if v in ("amg", "amg-s"):
            self.W2 = Linear(fresh, "fuse.amg.W2", d + c.accent_dim, d, rng)
            self.W3 = Linear(fresh, "fuse.amg.W3", d, d, rng)
        self.ctc_head = Linear(fresh, "ctc.out", d, self.inventory.size, rng)
        self.decoder = AttentionDecoder(fresh, "dec", c.n_phones, d, rng)
        if store is not None:
            if list(store.tensors) != list(fresh.tensors):
                raise ConfigError("parameter store does not match model layout")
            for name, t in store:
                if t.shape != fresh[name].shape:
                    raise ConfigError(f"parameter {name} has shape {t.shape}, expected {fresh[name].shape}")
                fresh[name].data = t.data.copy()

    @property
    def variant(self) -> str:
        return self.config.variant

    def check_accents(self, batch: Batch) -> None:
        if self.variant in HARD_VARIANTS:
            if (batch.accents < 0).any():
                raise ConfigError(f"variant {self.variant} needs a known accent for every utterance")
            if (batch.accents >= self.config.n_accents).any():
                raise ConfigError("accent id out of range")

    # -- encoder ----------------------------------------------------------

    def encode(self, g: Graph, batch: Batch) -> Node:
        B, S, _ = batch.x.shape
        if S > self.config.max_positions:
            raise ConfigError(f"sequence of {S} steps exceeds max_positions={self.config.max_positions}")
        mask = batch.mask
        X = self.inp(g, g.constant(batch.x)) + self.pos(g, np.arange(S))
        for blk in self.blocks:
            X = blk(g, X, mask)
        return self.ln_out(g, X)

    def forward(self, g: Graph, batch: Batch, mode: str = "train") -> ForwardOutputs:
        self.check_accents(batch)
        mask = batch.mask
        H = self.encode(g, batch)
        logits = None
        v = self.variant
        if v == "baseline":
            fused = H
        else:
            if v in HARD_VARIANTS:
                aE = accent_embed(g, self.accent_table, batch.accents)
            else:
                logits, aE = classify_accent(g, self, H, mask)
            if v in ("amc", "amc-s"):
                fused = amc_fuse(H, aE, self.W1)
            else:
                fused = amg_fuse(H, aE, self.W2, self.W3)
        ctc_lp = self.ctc_head(g, fused).log_softmax()
        att_lp = None
        tlens = None
        if mode == "train" and batch.targets is not None:
            att_lp, tlens = self.teacher_forced(g, fused, mask, batch.targets)
        return ForwardOutputs(ctc_lp, att_lp, logits, fused, H, batch.lengths, tlens)

    def teacher_forced(self, g: Graph, H: Node, mask, targets):
        dec = self.decoder
        B = len(targets)
        tlens = np.array([len(t) for t in targets], dtype=np.int64)
        steps = int(tlens.max()) + 1
        inputs = np.full((B, steps), dec.boundary, dtype=np.int64)
        for b, t in enumerate(targets):
            inputs[b, 1 : len(t) + 1] = t
        state = dec.init_state(g, B, H.shape[1])
        Hp = dec.precompute(g, H)
        outs = []
        for l in range(steps):
            logp, state, _ = dec.step(g, state, H, inputs[:, l], mask, Hp)
            outs.append(logp)
        return stack(outs, axis=1), tlens

    # -- inference --------------------------------------------------------

    def greedy_decode(self, batch: Batch) -> tuple[list[list[int]], list[bool]]:
        """Greedy attention decoding; returns (sequences, truncated flags)."""
        g = Graph()
        out = self.forward(g, batch, mode="infer")
        dec = self.decoder
        B = batch.size
        mask = batch.mask
        H = out.fused_states
        Hp = dec.precompute(g, H)
        state = dec.init_state(g, B, H.shape[1])
        y = np.full(B, dec.boundary, dtype=np.int64)
        seqs: list[list[int]] = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        for _ in range(self.config.max_decode_len):
            logp, state, _ = dec.step(g, state, H, y, mask, Hp)
            y = np.argmax(logp.value, axis=-1)
            for b in range(B):
                if done[b]:
                    continue
                if y[b] == dec.boundary:
                    done[b] = True
                else:
                    seqs[b].append(int(y[b]))
            if done.all():
                break
        return seqs, [not d for d in done]

    def param_count(self) -> int:
        return self.store.n_params()


# -- fusion and classifier ops ------------------------------------------------


def accent_embed(g: Graph, table: Embedding, accent) -> Node:
    """Hard accent embedding lookup; ``accent`` may be an id or an array of ids."""
    ids = np.asarray(accent, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab):
        raise IndexError(f"accent id out of range [0, {table.vocab})")
    return table(g, ids)


def _broadcast_accent(H: Node, aE: Node) -> Node:
    B, S, _ = H.shape
    A = aE.shape[-1]
    if aE.shape == (A,):
        aE = aE.reshape(1, 1, A)
    else:
        aE = aE.reshape(B, 1, A)
    return broadcast_to(aE, (B, S, A))


def amc_fuse(H: Node, aE: Node, W1: Linear) -> Node:
    """h'_s = concat(h_s, a_E) W1 + b1 for every step s.  H is [B, S, d]."""
    return W1(H.graph, concat([H, _broadcast_accent(H, aE)]))


def amg_fuse(H: Node, aE: Node, W2: Linear, W3: Linear) -> Node:
    """g_s = sigmoid([h_s; a_E] W2 + b2);  h''_s = relu(h_s + (h_s * g_s) W3 + b3)."""
    g = H.graph
    gate = W2(g, concat([H, _broadcast_accent(H, aE)])).sigmoid()
    return (H + W3(g, H * gate)).relu()


def classify_accent(g: Graph, model: AccentMDD, H: Node, mask=None):
    """Bi-GRU over H, masked mean over time, hidden projection (the soft
    accent embedding), then accent logits.  Returns (logits, a_soft)."""
    B, S, _ = H.shape
    if mask is None:
        mask = np.ones((B, S), dtype=bool)
    states = model.classifier(g, H, mask)
    pooled = masked_mean(g, states, mask)
    a_soft = model.cls_hidden(g, pooled).tanh()
    return model.cls_out(g, a_soft), a_soft


# -- losses -------------------------------------------------------------------


def attention_nll(out: ForwardOutputs, targets, boundary: int) -> Node:
    """Per-utterance -sum_l log P(y_l | y_<l, O), end-of-sequence included.  [B]"""
    lp = out.att_log_probs
    B, steps, V = lp.shape
    idx = np.full((B, steps), boundary, dtype=np.int64)
    w = np.zeros((B, steps))
    for b, t in enumerate(targets):
        idx[b, : len(t)] = t
        idx[b, len(t)] = boundary
        w[b, : len(t) + 1] = 1.0
    picked = take_along(lp, idx[:, :, None], axis=2).reshape(B, steps)
    return -(picked * lp.graph.constant(w)).sum(axis=1)


def utterance_weights(out: ForwardOutputs, targets) -> np.ndarray:
    """1 for utterances with a feasible CTC alignment, else 0."""
    return np.array([1.0 if is_feasible(int(S), t) else 0.0 for S, t in zip(out.lengths, targets)])


def hybrid_terms(out: ForwardOutputs, targets, blank: int, boundary: int):
    ctc = ctc_loss_batch(out.ctc_log_probs, targets, out.lengths, blank)
    att = attention_nll(out, targets, boundary)
    return ctc, att


def _weighted_mean(x: Node, w: np.ndarray) -> Node:
    n = w.sum()
    if n == 0:
        raise ValueError("no utterance in the batch has a feasible CTC alignment")
    safe = np.where(w > 0, x.value, 0.0)
    if not np.isfinite(safe).all():
        raise FloatingPointError("non-finite per-utterance loss")
    return (where(w > 0, x, x.graph.constant(0.0)) * x.graph.constant(w / n)).sum()


def hybrid_loss(out: ForwardOutputs, targets, alpha: float, blank: int, boundary: int, weights=None) -> Node:
    """alpha * L_ctc + (1 - alpha) * L_att, averaged over (feasible) utterances."""
    ctc, att = hybrid_terms(out, targets, blank, boundary)
    w = utterance_weights(out, targets) if weights is None else weights
    return _weighted_mean(ctc * alpha + att * (1.0 - alpha), w)


def accent_ce(logits: Node, accents) -> Node:
    """Per-utterance softmax cross-entropy [B]."""
    B = logits.shape[0]
    lp = logits.log_softmax()
    return -take_along(lp, np.asarray(accents, dtype=np.int64).reshape(B, 1), axis=1).reshape(B)


def multitask_loss(hybrid: Node, accent_logits: Node, accent_target, beta: float, weights=None) -> Node:
    """(1 - beta) * hybrid + beta * accent cross-entropy (batch mean)."""
    ce = accent_ce(accent_logits, accent_target)
    B = ce.shape[0]
    w = np.ones(B) if weights is None else weights
    return hybrid * (1.0 - beta) + _weighted_mean(ce, w) * beta


def batch_loss(model: AccentMDD, out: ForwardOutputs, batch: Batch) -> Node:
    c = model.config
    inv = model.inventory
    w = utterance_weights(out, batch.targets)
    h = hybrid_loss(out, batch.targets, c.alpha, inv.blank, model.decoder.boundary, w)
    if model.variant in SOFT_VARIANTS:
        if (batch.accents < 0).any():
            raise ConfigError("multi-task training needs accent labels on training utterances")
        return multitask_loss(h, out.accent_logits, batch.accents, c.beta, w)
    return h


# -- single-utterance conveniences -------------------------------------------


def forward_utterance(model: AccentMDD, utt: Utterance, mode: str = "train", g: Graph | None = None) -> ForwardOutputs:
    g = Graph() if g is None else g
    batch = make_batch([utt], model.config.subsample, with_targets=(mode == "train"))
    return model.forward(g, batch, mode)


def predict_phones(model: AccentMDD, utt: Utterance, return_flag=False):
    batch = make_batch([utt], model.config.subsample, with_targets=False)
    seqs, trunc = model.greedy_decode(batch)
    return (seqs[0], trunc[0]) if return_flag else seqs[0]


def predict_corpus(model: AccentMDD, utts: Sequence[Utterance], batch_size=32, threads=1) -> list[list[int]]:
    chunks = [list(utts[i : i + batch_size]) for i in range(0, len(utts), batch_size)]

    def run(chunk):
        return model.greedy_decode(make_batch(chunk, model.config.subsample, with_targets=False))[0]

    if threads <= 1 or len(chunks) <= 1:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, chunks))
    return [s for r in results for s in r]


def accent_accuracy(model: AccentMDD, utts: Sequence[Utterance], batch_size=32) -> float | None:
    if model.variant not in SOFT_VARIANTS:
        return None
    correct = 0
    for i in range(0, len(utts), batch_size):
        batch = make_batch(utts[i : i + batch_size], model.config.subsample, with_targets=False)
        g = Graph()
        mask = batch.mask
        H = model.encode(g, batch)
        logits, _ = classify_accent(g, model, H, mask)
        correct += int((np.argmax(logits.value, axis=-1) == batch.accents).sum())
    return correct / len(utts)
