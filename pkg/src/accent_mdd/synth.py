"""Deterministic synthetic multi-accent corpus.

Each utterance draws an accent and a canonical phone string, injects
substitution/deletion/insertion errors to get the perceived string, and
renders feature frames from the *perceived* phones.

Acoustics: the first ``feat_dim - accent_dims`` dimensions carry phone
identity, the last ``accent_dims`` carry a per-accent offset that is weak per
frame but clear once averaged over an utterance.  Within the phone
dimensions each accent moves every phone towards another phone (an
accent-specific permutation, ``accent_confusion`` of the way; at the default
1.0 all the way), so a frame is only unambiguous once the accent is known.

All randomness comes from Philox (counter-based, 64-bit keyed) generators
derived from ``SynthSpec.seed`` through ``numpy.random.SeedSequence``;
the acoustic model and each split get their own spawn key.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import Utterance, write_jsonl
from .ctc import ARPABET_39

log = logging.getLogger(__name__)

ACCENT_NAMES = ("English", "Hindi", "Korean", "Mandarin", "Spanish", "Arabic", "Vietnamese")
SPLITS = ("train", "dev", "test")
RNG_ALGORITHM = "numpy Philox4x64-10 via SeedSequence (spawn keys: 0=acoustics, 1..3=train/dev/test)"


@dataclass
class SynthSpec:
    n_phones: int = 12
    n_accents: int = 4
    min_len: int = 4
    max_len: int = 8
    min_frames: int = 3
    max_frames: int = 5
    feat_dim: int = 16
    accent_dims: int = 4
    sub_rate: float = 0.08
    del_rate: float = 0.02
    ins_rate: float = 0.02
    accent_shift: float = 0.45
    accent_confusion: float = 1.0
    proto_scale: float = 1.0
    noise_std: float = 0.5
    n_train: int = 800
    n_dev: int = 100
    n_test: int = 200
    seed: int = 0

    def validate(self) -> None:
        errs = []
        if not 2 <= self.n_phones <= 39:
            errs.append("n_phones must be in [2, 39]")
        if self.n_accents < 2:
            errs.append("n_accents must be >= 2")
        for r in ("sub_rate", "del_rate", "ins_rate"):
            if not 0.0 <= getattr(self, r) <= 1.0:
                errs.append(f"{r} must be in [0, 1]")
        if self.sub_rate + self.del_rate >= 1.0:
            errs.append("sub_rate + del_rate must be < 1")
        if not 1 <= self.min_len <= self.max_len:
            errs.append("need 1 <= min_len <= max_len")
        if not 1 <= self.min_frames <= self.max_frames:
            errs.append("need 1 <= min_frames <= max_frames")
        if not 0 <= self.accent_dims < self.feat_dim:
            errs.append("need 0 <= accent_dims < feat_dim")
        if self.noise_std < 0:
            errs.append("noise_std must be >= 0")
        if not 0.0 <= self.accent_confusion <= 1.0:
            errs.append("accent_confusion must be in [0, 1]")
        for c in ("n_train", "n_dev", "n_test"):
            if getattr(self, c) < 1:
                errs.append(f"{c} must be >= 1")
        if errs:
            raise ValueError("invalid SynthSpec: " + "; ".join(errs))

    def count(self, split: str) -> int:
        return getattr(self, f"n_{split}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=spawn_key)))


@dataclass
class PhoneAcousticModel:
    prototypes: np.ndarray  # [n_phones, feat_dim]
    offsets: np.ndarray  # [n_accents, n_phones, feat_dim]

    @classmethod
    def generate(cls, spec: SynthSpec, rng: np.random.Generator, max_tries: int = 1000) -> "PhoneAcousticModel":
        P, A, F, K = spec.n_phones, spec.n_accents, spec.feat_dim, spec.accent_dims
        min_dist = 4.0 * spec.noise_std
        for _ in range(max_tries):
            protos = np.zeros((P, F))
            protos[:, : F - K] = rng.normal(0.0, spec.proto_scale, size=(P, F - K))
            diffs = protos[:, None, :] - protos[None, :, :]
            d = np.sqrt((diffs**2).sum(-1))[np.triu_indices(P, 1)]
            if d.min() > min_dist:
                break
        else:
            raise ValueError("could not draw prototypes separated by 4x noise std; lower noise_std")
        offsets = np.zeros((A, P, F))
        for a in range(A):
            perm = rng.permutation(P)
            offsets[a] = spec.accent_confusion * (protos[perm] - protos)
            if K:
                u = rng.normal(size=K)
                offsets[a, :, F - K :] = spec.accent_shift * u / np.linalg.norm(u)
        return cls(protos, offsets)

    def min_prototype_distance(self) -> float:
        P = len(self.prototypes)
        diffs = self.prototypes[:, None, :] - self.prototypes[None, :, :]
        return float(np.sqrt((diffs**2).sum(-1))[np.triu_indices(P, 1)].min())


def inject_errors(canonical, rates, n_phones: int, rng: np.random.Generator):
    """Per-position substitution / deletion, then an optional insertion after it.

    ``rates`` is ``(sub, del, ins)``.  Returns ``(perceived, edits)`` where each
    edit is ``[position, kind, original, realized]`` (``None`` where absent).
    """
    if len(canonical) == 0:
        raise ValueError("canonical sequence is empty")
    sub, dele, ins = rates
    perceived, edits = [], []
    for i, p in enumerate(canonical):
        p = int(p)
        u = rng.random()
        if u < sub:
            q = int(rng.integers(n_phones - 1))
            q = q + 1 if q >= p else q  # uniform over the other phones
            perceived.append(q)
            edits.append([i, "sub", p, q])
        elif u < sub + dele:
            edits.append([i, "del", p, None])
        else:
            perceived.append(p)
        if rng.random() < ins:
            q = int(rng.integers(n_phones))
            perceived.append(q)
            edits.append([i, "ins", None, q])
    if not perceived:
        log.warning("inject_errors produced an empty perceived sequence")
    return perceived, edits


def apply_edits(canonical, edits):
    """Replay recorded edits over the canonical string."""
    by_pos: dict[int, list] = {}
    for e in edits:
        by_pos.setdefault(int(e[0]), []).append(e)
    out = []
    for i, p in enumerate(canonical):
        es = by_pos.get(i, [])
        kinds = {e[1]: e for e in es}
        if "sub" in kinds:
            out.append(kinds["sub"][3])
        elif "del" not in kinds:
            out.append(p)
        if "ins" in kinds:
            out.append(kinds["ins"][3])
    return out


def render_frames(perceived, accent: int, model: PhoneAcousticModel, rng: np.random.Generator,
                  frames_range=(3, 5), noise_std=0.5) -> np.ndarray:
    if len(perceived) == 0:
        raise ValueError("perceived sequence is empty")
    lo, hi = frames_range
    rows = []
    for p in perceived:
        k = int(rng.integers(lo, hi + 1))
        mean = model.prototypes[p] + model.offsets[accent, p]
        rows.append(np.repeat(mean[None, :], k, axis=0))
    frames = np.concatenate(rows, axis=0)
    if noise_std > 0:
        frames = frames + rng.normal(0.0, noise_std, size=frames.shape)
    return frames


def gen_split(spec: SynthSpec, model: PhoneAcousticModel, split: str) -> list[Utterance]:
    rng = make_rng(spec.seed, 1 + SPLITS.index(split))
    names = accent_names(spec.n_accents)
    utts = []
    rates = (spec.sub_rate, spec.del_rate, spec.ins_rate)
    for n in range(spec.count(split)):
        accent = int(rng.integers(spec.n_accents))
        L = int(rng.integers(spec.min_len, spec.max_len + 1))
        canonical = [int(x) for x in rng.integers(spec.n_phones, size=L)]
        perceived, edits = inject_errors(canonical, rates, spec.n_phones, rng)
        while not perceived:
            perceived, edits = inject_errors(canonical, rates, spec.n_phones, rng)
        frames = render_frames(perceived, accent, model, rng, (spec.min_frames, spec.max_frames), spec.noise_std)
        utts.append(Utterance(f"{split}-{n:05d}", accent, canonical, perceived, frames, names[accent], edits))
    return utts


def accent_names(n: int) -> list[str]:
    return [ACCENT_NAMES[i] if i < len(ACCENT_NAMES) else f"accent{i}" for i in range(n)]


def gen_corpus(spec: SynthSpec, out_dir=None):
    """Generate train/dev/test.  Writes ``{split}.jsonl`` and ``meta.json`` when
    ``out_dir`` is given; always returns ``({split: utterances}, model)``."""
    spec.validate()
    model = PhoneAcousticModel.generate(spec, make_rng(spec.seed, 0))
    splits = {s: gen_split(spec, model, s) for s in SPLITS}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s, utts in splits.items():
            write_jsonl(out / f"{s}.jsonl", utts)
        meta = {
            "synth_spec": asdict(spec),
            "phones": list(ARPABET_39[: spec.n_phones]),
            "accents": accent_names(spec.n_accents),
            "rng": RNG_ALGORITHM,
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return splits, model
