"""Mispronunciation detection/diagnosis scoring.

Ground truth and prediction are both aligned against the canonical string;
every canonical position then gets a (truth, prediction) pair of
correct/mispronounced labels.  Cell names follow the usual MDD confusion
matrix orientation, where TN is a correctly detected mispronunciation:

    truth CP, pred CP -> TP      truth MP, pred CP -> FP
    truth CP, pred MP -> FN      truth MP, pred MP -> TN (CD or ID)

RE = TN/(FP+TN), PR = TN/(FN+TN), F1 their harmonic mean, DAR = CD/(CD+ID).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from . import kernels

DELETED = -1  # realized symbol for a deleted canonical phone

KIND_NAMES = {kernels.MATCH: "match", kernels.SUB: "substitute", kernels.DEL: "delete", kernels.INS: "insert"}


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    src_pos: int | None
    src: int | None
    tgt: int | None


def align(src: Sequence[int], tgt: Sequence[int]) -> list[AlignmentOp]:
    """Minimum unit-cost edit alignment; ties prefer match > substitute > delete > insert."""
    _, ops = kernels.edit_align(list(src), list(tgt))
    out = []
    for kind, i, j in ops:
        out.append(
            AlignmentOp(
                KIND_NAMES[kind],
                i if i >= 0 else None,
                int(src[i]) if i >= 0 else None,
                int(tgt[j]) if j >= 0 else None,
            )
        )
    return out


def edit_distance(src, tgt) -> int:
    return kernels.edit_align(list(src), list(tgt))[0]


def realized_per_position(canonical, other) -> tuple[list[int], int]:
    """For each canonical position the realized symbol (``DELETED`` for
    deletions), plus the number of inserted symbols."""
    realized = [DELETED] * len(canonical)
    n_ins = 0
    for op in align(canonical, other):
        if op.kind == "insert":
            n_ins += 1
        elif op.kind == "delete":
            realized[op.src_pos] = DELETED
        else:
            realized[op.src_pos] = op.tgt
    return realized, n_ins


@dataclass
class OutcomeCounts:
    TP: int = 0
    FP: int = 0
    FN: int = 0
    TN: int = 0
    CD: int = 0
    ID: int = 0
    inserted_truth: int = 0
    inserted_pred: int = 0

    def __add__(self, other: "OutcomeCounts") -> "OutcomeCounts":
        return OutcomeCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


def score_utterance(canonical, perceived, predicted) -> OutcomeCounts:
    if len(canonical) == 0:
        raise ValueError("canonical sequence is empty")
    truth, ins_t = realized_per_position(canonical, perceived)
    pred, ins_p = realized_per_position(canonical, predicted)
    c = OutcomeCounts(inserted_truth=ins_t, inserted_pred=ins_p)
    for can, t, p in zip(canonical, truth, pred):
        truth_ok = t == can
        pred_ok = p == can
        if truth_ok and pred_ok:
            c.TP += 1
        elif pred_ok:
            c.FP += 1
        elif truth_ok:
            c.FN += 1
        else:
            c.TN += 1
            if p == t:
                c.CD += 1
            else:
                c.ID += 1
    return c


@dataclass
class MetricsReport:
    RE: float | None
    PR: float | None
    F1: float | None
    DAR: float | None
    counts: OutcomeCounts

    def to_dict(self) -> dict:
        return {"RE": self.RE, "PR": self.PR, "F1": self.F1, "DAR": self.DAR, "counts": asdict(self.counts)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        def pct(v):
            return "undefined" if v is None else f"{100 * v:.2f}"

        c = self.counts
        lines = [
            f"{'RE (%)':<8}{'PR (%)':<8}{'F1 (%)':<8}{'DAR (%)':<8}",
            f"{pct(self.RE):<8}{pct(self.PR):<8}{pct(self.F1):<8}{pct(self.DAR):<8}",
            f"TP={c.TP} FP={c.FP} FN={c.FN} TN={c.TN} CD={c.CD} ID={c.ID} "
            f"ins(truth)={c.inserted_truth} ins(pred)={c.inserted_pred}",
        ]
        return "\n".join(lines)


def _ratio(num, den):
    return None if den == 0 else num / den


def f1_score(pr, re) -> float | None:
    if pr is None or re is None or pr + re == 0:
        return None
    return 2 * pr * re / (pr + re)


def aggregate(counts: Iterable[OutcomeCounts]) -> MetricsReport:
    total = OutcomeCounts()
    for c in counts:
        total = total + c
    re = _ratio(total.TN, total.FP + total.TN)
    pr = _ratio(total.TN, total.FN + total.TN)
    return MetricsReport(re, pr, f1_score(pr, re), _ratio(total.CD, total.CD + total.ID), total)


def score_corpus(triples) -> MetricsReport:
    """``triples``: iterable of (canonical, perceived, predicted)."""
    return aggregate(score_utterance(c, t, p) for c, t, p in triples)
