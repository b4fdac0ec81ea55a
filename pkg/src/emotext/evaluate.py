"""Precision/recall/F1 metrics, per-emotion test evaluation, cross-dataset
evaluation with label mapping, and table/JSON reporting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import EMOTIONS, BinaryDataset, RawRecord, Vocabulary, encode, preprocess, tokenize
from .embed import EmbeddingMatrix, build_matrix
from .errors import DataError
from . import nn


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts


@dataclass
class EvalReport:
    per_emotion: dict[str, ClassMetrics]
    macro_f1: float

    def to_json_dict(self) -> dict:
        return {
            "per_emotion": {
                e: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "tp": m.counts.tp,
                    "fp": m.counts.fp,
                    "tn": m.counts.tn,
                    "fn": m.counts.fn,
                }
                for e, m in self.per_emotion.items()
            },
            "macro_f1": self.macro_f1,
        }


def make_report(per_emotion: dict[str, ClassMetrics]) -> EvalReport:
    macro = float(np.mean([m.f1 for m in per_emotion.values()])) if per_emotion else 0.0
    return EvalReport(per_emotion=per_emotion, macro_f1=macro)


def confusion_from_predictions(pred: np.ndarray, gold: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    gold = np.asarray(gold, dtype=bool)
    if pred.shape != gold.shape:
        raise ValueError("prediction/gold shape mismatch")
    return ConfusionCounts(
        tp=int((pred & gold).sum()),
        fp=int((pred & ~gold).sum()),
        tn=int((~pred & ~gold).sum()),
        fn=int((~pred & gold).sum()),
    )


def f1(counts: ConfusionCounts) -> ClassMetrics:
    """Precision, recall and F1 with zero-denominator cases defined as 0."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    score = 2 * p * r / (p + r) if p + r else 0.0
    return ClassMetrics(precision=p, recall=r, f1=score, counts=counts)


def evaluate_binary(checkpoint, emb: EmbeddingMatrix, test: BinaryDataset,
                    threshold: float = 0.5) -> ClassMetrics:
    """Score one classifier on its encoded test set (dropout disabled;
    predicted label is p >= threshold)."""
    if len(test) == 0:
        raise DataError("empty test set")
    if emb.checksum() != checkpoint.embedding_checksum:
        raise DataError(
            "embedding/vocabulary checksum mismatch between checkpoint and matrix"
        )
    ps = np.asarray([
        nn.predict_proba(test.indices[i], emb, checkpoint.params) for i in range(len(test))
    ])
    pred = ps >= threshold
    gold = test.labels.astype(bool)
    return f1(confusion_from_predictions(pred, gold))


@dataclass(frozen=True)
class LabelMapping:
    """Source-dataset label -> emotion. Labels absent from the map count as
    gold-negative for every classifier (or are dropped entirely when the
    caller asks)."""

    to_emotion: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for src, emo in self.to_emotion.items():
            if emo not in EMOTIONS:
                raise DataError(f"mapping target {emo!r} for {src!r} is not an emotion")

    @property
    def mapped_emotions(self) -> tuple[str, ...]:
        present = set(self.to_emotion.values())
        return tuple(e for e in EMOTIONS if e in present)


def parse_label_mapping(path: str | Path) -> LabelMapping:
    """Read `source=emotion` lines; blank lines and `#` comments allowed."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected source=emotion")
            src, emo = (part.strip() for part in line.split("=", 1))
            if src in mapping and mapping[src] != emo:
                raise DataError(f"{path}: line {lineno}: {src!r} mapped twice")
            mapping[src] = emo
    return LabelMapping(to_emotion=mapping)


def _predict_text(tokens: Sequence[str], checkpoint, emb: EmbeddingMatrix) -> float:
    idx = encode(tokens, checkpoint.vocab, checkpoint.config.seq_len)
    return nn.predict_proba(idx, emb, checkpoint.params)


def rebuild_embedding(checkpoint, vectors: Mapping[str, np.ndarray],
                      dim: int | None = None) -> EmbeddingMatrix:
    """Re-derive a checkpoint's frozen embedding matrix from a vector map
    and validate it against the stored checksum."""
    emb = build_matrix(checkpoint.vocab, vectors, seed=checkpoint.config.seed, dim=dim)
    if checkpoint.embedding_checksum and emb.checksum() != checkpoint.embedding_checksum:
        raise DataError(
            f"embedding checksum mismatch for {checkpoint.emotion}: the vector "
            "file does not reproduce the training-time matrix"
        )
    return emb


def evaluate_cross(
    checkpoints: Mapping[str, object],
    vectors: Mapping[str, np.ndarray],
    records: Sequence[RawRecord],
    mapping: LabelMapping,
    threshold: float = 0.5,
    drop_unmapped: bool = False,
    dim: int | None = None,
) -> EvalReport:
    """One-vs-rest evaluation of pre-trained per-emotion classifiers on a
    foreign dataset.

    Each record is preprocessed and re-encoded with every checkpoint's own
    vocabulary. A record is gold-positive for emotion e iff its mapped label
    equals e; unmapped labels are gold-negative everywhere unless
    ``drop_unmapped`` discards them.
    """
    emotions = mapping.mapped_emotions
    if not emotions:
        raise DataError("label mapping maps no emotions")
    for e in emotions:
        if e not in checkpoints:
            raise DataError(f"no checkpoint for mapped emotion {e}")
    if drop_unmapped:
        records = [r for r in records if r.label in mapping.to_emotion]

    token_lists = [tokenize(preprocess(r.text)) for r in records]
    per_emotion: dict[str, ClassMetrics] = {}
    for e in emotions:
        ckpt = checkpoints[e]
        emb = rebuild_embedding(ckpt, vectors, dim=dim)
        pred = np.asarray([
            _predict_text(toks, ckpt, emb) >= threshold for toks in token_lists
        ])
        gold = np.asarray([
            mapping.to_emotion.get(r.label) == e for r in records
        ])
        per_emotion[e] = f1(confusion_from_predictions(pred, gold))
    return make_report(per_emotion)


def report_table(report: EvalReport, baseline: EvalReport | None = None) -> str:
    """Aligned plain-text table of per-emotion F1 percentages (one decimal)
    with an Average row; adds baseline and difference columns when a
    baseline report is given."""
    emotions = [e for e in EMOTIONS if e in report.per_emotion]
    emotions += [e for e in report.per_emotion if e not in EMOTIONS]

    rows = []
    for e in emotions:
        ours = report.per_emotion[e].f1
        if baseline is not None:
            base = baseline.per_emotion.get(e)
            base_cell = f"{100 * base.f1:.1f}" if base is not None else "-"
            diff_cell = f"{100 * (ours - base.f1):.1f}" if base is not None else "-"
            rows.append((e, base_cell, f"{100 * ours:.1f}", diff_cell))
        else:
            rows.append((e, f"{100 * ours:.1f}"))

    ours_avg = float(np.mean([report.per_emotion[e].f1 for e in emotions]))
    if baseline is not None:
        both = [e for e in emotions if e in baseline.per_emotion]
        base_vals = [baseline.per_emotion[e].f1 for e in both]
        base_avg = f"{100 * float(np.mean(base_vals)):.1f}" if base_vals else "-"
        diffs = [report.per_emotion[e].f1 - baseline.per_emotion[e].f1 for e in both]
        diff_avg = f"{100 * float(np.mean(diffs)):.1f}" if diffs else "-"
        rows.append(("Average", base_avg, f"{100 * ours_avg:.1f}", diff_avg))
        header = ("Emotion", "Baseline%", "Ours%", "Difference%")
    else:
        rows.append(("Average", f"{100 * ours_avg:.1f}"))
        header = ("Emotion", "F1%")

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip()
    ]
    for row in rows:
        lines.append(
            "  ".join(
                cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                for i, cell in enumerate(row)
            ).rstrip()
        )
    return "\n".join(lines)
