"""Macro-F1 scoring with official directionality semantics, plus pooling analysis.

A prediction is correct only when both the relation family and its direction
match. Family precision counts every prediction in the family (either
direction), recall counts every gold instance, so direction flips hurt both.
The neutral class never enters the macro average but its confusions count
against the relations; families absent from both gold and predictions are
excluded from the average rather than scored zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import (
    Bucket,
    Example,
    RelationSchema,
    bucket_bounds,
    context_length,
    format_bucket,
)
from .encoders import SentenceEncoding


@dataclass
class FamilyScore:
    family: str
    tp: int
    gold_count: int
    pred_count: int
    precision: float
    recall: float
    f1: float
    included: bool  # participates in the macro average


@dataclass
class EvalReport:
    labels: tuple[str, ...]
    confusion: np.ndarray  # gold x predicted over the full label set
    per_family: list[FamilyScore]
    macro_f1: float  # percent
    n_examples: int
    bucketed_f1: dict[Bucket, float | None] | None = None


def _family_score(family: str, tp: int, gold_n: int, pred_n: int) -> FamilyScore:
    precision = tp / pred_n if pred_n else 0.0
    recall = tp / gold_n if gold_n else 0.0
    f1 = 2 * tp / (gold_n + pred_n) if gold_n + pred_n else 0.0
    return FamilyScore(family, tp, gold_n, pred_n, precision, recall, f1, gold_n + pred_n > 0)


def macro_f1(
    gold: Sequence[str],
    pred: Sequence[str],
    schema: RelationSchema,
    include_neutral: bool = False,
) -> EvalReport:
    """Score predictions against gold labels under the official semantics.

    ``include_neutral`` adds the neutral class to the macro average for
    diagnostics; the official behavior leaves it out.
    """
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    labels = schema.labels
    index = {lab: i for i, lab in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        if g not in index:
            raise ValueError(f"gold label {g!r} outside schema")
        if p not in index:
            raise ValueError(f"predicted label {p!r} outside schema")
        confusion[index[g], index[p]] += 1

    families = list(schema.families) + ([schema.neutral] if include_neutral else [])
    scores = []
    for family in families:
        members = [i for i, lab in enumerate(labels) if _family_of(lab, schema) == family]
        tp = int(sum(confusion[i, i] for i in members))
        gold_n = int(confusion[members, :].sum())
        pred_n = int(confusion[:, members].sum())
        scores.append(_family_score(family, tp, gold_n, pred_n))

    included = [s.f1 for s in scores if s.included]
    macro = 100.0 * sum(included) / len(included) if included else 0.0
    return EvalReport(
        labels=labels,
        confusion=confusion,
        per_family=scores,
        macro_f1=macro,
        n_examples=len(gold),
    )


def _family_of(label: str, schema: RelationSchema) -> str:
    if label == schema.neutral:
        return schema.neutral
    return schema.family_of(label)


def f1_by_bucket(
    examples: Sequence[Example],
    preds: Sequence[str],
    thresholds: Sequence[int],
    schema: RelationSchema,
) -> dict[Bucket, float | None]:
    """Macro-F1 restricted to each context-length bucket; empty buckets are None."""
    if len(examples) != len(preds):
        raise ValueError(f"{len(examples)} examples vs {len(preds)} predictions")
    bounds = bucket_bounds(thresholds)
    grouped: dict[Bucket, list[tuple[str, str]]] = {b: [] for b in bounds}
    for ex, p in zip(examples, preds):
        n = context_length(ex)
        for lo, hi in bounds:
            if n >= lo and (hi is None or n <= hi):
                grouped[(lo, hi)].append((ex.label, p))
                break
    out: dict[Bucket, float | None] = {}
    for bucket, pairs in grouped.items():
        if not pairs:
            out[bucket] = None
        else:
            g, p = zip(*pairs)
            out[bucket] = macro_f1(g, p, schema).macro_f1
    return out


@dataclass
class SemanticProfile:
    """Share of pooled dimensions credited to each time step."""

    contributions: np.ndarray  # (T,), sums to 1
    variance_of_neighbors: float


def semantic_profile(encoding: SentenceEncoding) -> SemanticProfile:
    """Fraction of dimensions each step wins in pooling, and neighbor smoothness.

    The neighbor statistic is the mean squared difference between consecutive
    steps' contributions (0 for single-step sequences).
    """
    t_len = encoding.n_steps
    m = encoding.pooled.shape[0]
    counts = np.bincount(encoding.pool_argmax, minlength=t_len)
    contributions = counts / m
    if t_len > 1:
        diffs = np.diff(contributions)
        variance = float((diffs**2).mean())
    else:
        variance = 0.0
    return SemanticProfile(contributions=contributions, variance_of_neighbors=variance)


def corpus_neighbor_variance(profiles: Sequence[SemanticProfile]) -> float:
    """Corpus-level smoothness: mean of per-sentence neighbor variances."""
    if not profiles:
        raise ValueError("no profiles")
    return float(np.mean([p.variance_of_neighbors for p in profiles]))


# ---------------------------------------------------------------------------
# Report rendering


def format_report(report: EvalReport, max_confusion_classes: int = 40) -> str:
    """Structured text: confusion block, per-family table, summary line."""
    lines = []
    if len(report.labels) <= max_confusion_classes:
        lines.append("confusion matrix (rows gold, columns predicted):")
        width = max(len(lab) for lab in report.labels)
        for i, lab in enumerate(report.labels):
            row = " ".join(f"{v:4d}" for v in report.confusion[i])
            lines.append(f"  {lab:<{width}} {row}")
        lines.append("")
    lines.append(f"{'family':<40} {'P':>7} {'R':>7} {'F1':>7}")
    for s in report.per_family:
        note = "" if s.included else "  (no instances)"
        lines.append(
            f"{s.family:<40} {100 * s.precision:7.2f} {100 * s.recall:7.2f} "
            f"{100 * s.f1:7.2f}{note}"
        )
    lines.append("")
    lines.append(f"examples: {report.n_examples}")
    lines.append(f"macro-F1: {report.macro_f1:.1f}")
    if report.bucketed_f1 is not None:
        for bucket in sorted(report.bucketed_f1, key=lambda b: b[0]):
            score = report.bucketed_f1[bucket]
            shown = "undefined" if score is None else f"{score:.1f}"
            lines.append(f"bucket {format_bucket(bucket)}: {shown}")
    return "\n".join(lines) + "\n"


def format_bucket_counts(buckets: Mapping[Bucket, Sequence]) -> str:
    total = sum(len(v) for v in buckets.values())
    lines = []
    for bucket in sorted(buckets, key=lambda b: b[0]):
        n = len(buckets[bucket])
        share = n / total if total else 0.0
        lines.append(f"bucket {format_bucket(bucket)}: {n} ({share:.3f})")
    return "\n".join(lines) + "\n"
