"""Utterance records and JSON-Lines corpus I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

UNKNOWN_ACCENT = -1


@dataclass
class Utterance:
    id: str
    accent: int
    canonical: list[int]
    perceived: list[int]
    frames: np.ndarray  # [T, feat_dim]
    accent_name: str = ""
    edits: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"{self.id}: frames must be [T>=1, feat_dim], got {self.frames.shape}")
        if not self.canonical:
            raise ValueError(f"{self.id}: empty canonical sequence")

    @property
    def has_accent(self) -> bool:
        return self.accent is not None and self.accent >= 0

    def to_json(self) -> str:
        rec = {
            "id": self.id,
            "accent": int(self.accent),
            "accent_name": self.accent_name,
            "canonical": [int(p) for p in self.canonical],
            "perceived": [int(p) for p in self.perceived],
            "edits": [list(e) for e in self.edits],
            "frames": self.frames.tolist(),
        }
        return json.dumps(rec, separators=(",", ":"))

    @classmethod
    def from_dict(cls, rec: dict) -> "Utterance":
        accent = rec.get("accent")
        return cls(
            id=str(rec["id"]),
            accent=UNKNOWN_ACCENT if accent is None else int(accent),
            canonical=[int(p) for p in rec["canonical"]],
            perceived=[int(p) for p in rec.get("perceived", [])],
            frames=np.asarray(rec["frames"], dtype=np.float64),
            accent_name=rec.get("accent_name", ""),
            edits=[list(e) for e in rec.get("edits", [])],
        )


def write_jsonl(path, utts: Iterable[Utterance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in utts:
            fh.write(u.to_json())
            fh.write("\n")


def read_jsonl(path) -> list[Utterance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Utterance.from_dict(json.loads(line)))
    return out


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_split(data_dir, split: str) -> list[Utterance]:
    return read_jsonl(Path(data_dir) / f"{split}.jsonl")


def load_meta(data_dir) -> dict:
    p = Path(data_dir) / "meta.json"
    if not p.exists():
        return {}
    return json.loads(p.read_text(encoding="utf-8"))
