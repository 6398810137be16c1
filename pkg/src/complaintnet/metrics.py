"""Evaluation surface: F1 variants, Hamming loss, task binarization, Fleiss' kappa.

Two binary sub-tasks are scored per aspect: aspect classification (AC,
present vs absent) and complaint identification (CI, complaint vs
non-complaint among gold-present samples; a pred-absent under gold-present
counts as a non-complaint prediction). Binary macro-F1 averages the
positive and negative class F1s; micro-F1 pools their counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data_model import (
    NUM_ASPECTS,
    AspectCatalog,
    AspectLabelVector,
    DatasetManifest,
)

# Reported inter-annotator agreement levels for the aspect-category and
# complaint-label annotation tasks; reference constants, not reproducible
# without the annotation tables.
REFERENCE_KAPPA_ASPECT = 0.64
REFERENCE_KAPPA_COMPLAINT = 0.81

REPORT_COLUMNS = ("aspect", "task", "macro_f1", "micro_f1", "hamming")


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class tp/fp/fn/tn tallies."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        if denom == 0:
            return 0.0  # 0/0 convention
        return 2 * self.tp / denom


def binarize_tasks(
    gold: AspectLabelVector, pred: AspectLabelVector, aspect: int
) -> tuple[bool, bool, Optional[tuple[bool, bool]]]:
    """Project one (gold, pred) pair onto the AC and CI sub-tasks at one aspect.

    Returns (ac_gold, ac_pred, ci_pair). The CI pair exists only when the
    aspect is gold-present; its booleans flag "complaint" (state 2), so a
    pred-absent becomes a non-complaint prediction.
    """
    if not 0 <= aspect < NUM_ASPECTS:
        raise ValueError(f"aspect index must be in [0, {NUM_ASPECTS}), got {aspect}")
    g, p = gold.states[aspect], pred.states[aspect]
    ac_gold = g in (1, 2)
    ac_pred = p in (1, 2)
    ci_pair = (g == 2, p == 2) if ac_gold else None
    return ac_gold, ac_pred, ci_pair


def binary_confusions(pairs: Iterable[tuple[bool, bool]]) -> list[ConfusionCounts]:
    """Counts for the positive class and the negative class of a binary task."""
    tp = fp = fn = tn = 0
    for g, p in pairs:
        if g and p:
            tp += 1
        elif not g and p:
            fp += 1
        elif g and not p:
            fn += 1
        else:
            tn += 1
    positive = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)
    negative = ConfusionCounts(tp=tn, fp=fn, fn=fp, tn=tp)
    return [positive, negative]


def f1_scores(counts: Sequence[ConfusionCounts]) -> tuple[float, float]:
    """(macro_f1, micro_f1) over per-class confusion counts.

    Macro is the unweighted mean of per-class F1s (0/0 reads as 0); micro is
    the F1 of the summed counts.
    """
    if len(counts) == 0:
        raise ValueError("f1_scores requires at least one class")
    macro = float(np.mean([c.f1() for c in counts]))
    pooled = ConfusionCounts(
        tp=sum(c.tp for c in counts),
        fp=sum(c.fp for c in counts),
        fn=sum(c.fn for c in counts),
        tn=sum(c.tn for c in counts),
    )
    return macro, pooled.f1()


def binary_task_f1(pairs: Sequence[tuple[bool, bool]]) -> tuple[float, float]:
    """(macro, micro) F1 of a binary task; (0, 0) when no pairs exist."""
    if len(pairs) == 0:
        return 0.0, 0.0
    return f1_scores(binary_confusions(pairs))


def hamming_loss(
    golds: Sequence[AspectLabelVector], preds: Sequence[AspectLabelVector]
) -> float:
    """Fraction of (sample, aspect) positions where the trinary states differ."""
    if len(golds) != len(preds):
        raise ValueError(f"gold/pred length mismatch: {len(golds)} vs {len(preds)}")
    if len(golds) == 0:
        raise ValueError("hamming_loss requires at least one sample")
    g = np.stack([x.to_array() for x in golds])
    p = np.stack([x.to_array() for x in preds])
    return float(np.mean(g != p))


def aspect_hamming(
    golds: Sequence[AspectLabelVector], preds: Sequence[AspectLabelVector], aspect: int
) -> float:
    """Single-position trinary error rate at one aspect."""
    if not 0 <= aspect < NUM_ASPECTS:
        raise ValueError(f"aspect index must be in [0, {NUM_ASPECTS}), got {aspect}")
    if len(golds) != len(preds) or len(golds) == 0:
        raise ValueError("gold/pred lists must be equal-length and non-empty")
    return float(
        np.mean([g.states[aspect] != p.states[aspect] for g, p in zip(golds, preds)])
    )


@dataclass(frozen=True)
class RatingTable:
    """N items x C categories of rating counts, a fixed number of raters per item."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts)  # defensive copy
        if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 2:
            raise ValueError(f"rating table must be (items x >=2 categories), got {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            as_int = counts.astype(np.int64)
            if not np.array_equal(as_int, counts):
                raise ValueError("rating counts must be integers")
            counts = as_int
        if np.any(counts < 0):
            raise ValueError("rating counts must be non-negative")
        row_sums = counts.sum(axis=1)
        if not np.all(row_sums == row_sums[0]):
            raise ValueError("every item must have the same number of raters")
        if row_sums[0] < 2:
            raise ValueError("Fleiss' kappa needs at least 2 raters per item")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def raters_per_item(self) -> int:
        return int(self.counts[0].sum())


def fleiss_kappa(table: RatingTable | np.ndarray) -> float:
    """Chance-corrected agreement for a fixed rater count per item.

    kappa = (P_bar - Pe_bar) / (1 - Pe_bar) with per-item agreement
    P_i = (sum_j n_ij^2 - n) / (n (n - 1)). Perfect agreement returns exactly
    1.0 even when expected agreement is also 1; a degenerate Pe_bar = 1 with
    imperfect observed agreement is undefined and rejected.
    """
    if not isinstance(table, RatingTable):
        table = RatingTable(counts=np.asarray(table))
    counts = table.counts.astype(np.float64)
    n = float(table.raters_per_item)
    p_i = ((counts**2).sum(axis=1) - n) / (n * (n - 1.0))
    p_bar = float(p_i.mean())
    category_share = counts.sum(axis=0) / counts.sum()
    pe_bar = float((category_share**2).sum())
    if pe_bar >= 1.0:
        if p_bar >= 1.0:
            return 1.0
        raise ValueError("Fleiss' kappa undefined: expected agreement is 1 but observed is not")
    return (p_bar - pe_bar) / (1.0 - pe_bar)


# ---------------------------------------------------------------------------
# Dataset-level evaluation report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    aspect: str
    task: str
    macro_f1: float
    micro_f1: float
    hamming: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ReportRow, ...]

    def row(self, aspect: str, task: str) -> ReportRow:
        for r in self.rows:
            if r.aspect == aspect and r.task == task:
                return r
        raise KeyError(f"no report row for aspect={aspect!r} task={task!r}")

    def mean_ac_micro_f1(self) -> float:
        vals = [r.micro_f1 for r in self.rows if r.task == "AC"]
        return float(np.mean(vals))

    def aggregate_hamming(self) -> float:
        return self.row("ALL", "ALL").hamming

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [r.aspect, r.task, f"{r.macro_f1:.6f}", f"{r.micro_f1:.6f}", f"{r.hamming:.6f}"]
                )


def evaluate_pairs(
    golds: Sequence[AspectLabelVector],
    preds: Sequence[AspectLabelVector],
    catalog: Optional[AspectCatalog] = None,
) -> EvalReport:
    """Score predictions against gold labels, one AC and one CI row per aspect.

    The hamming column carries the per-aspect trinary error rate; the final
    ALL/ALL row aggregates over all five positions.
    """
    if catalog is None:
        catalog = AspectCatalog()
    if len(golds) != len(preds):
        raise ValueError(f"gold/pred length mismatch: {len(golds)} vs {len(preds)}")
    if len(golds) == 0:
        raise ValueError("evaluation requires at least one sample")
    rows: list[ReportRow] = []
    for j, name in enumerate(catalog.names):
        ac_pairs: list[tuple[bool, bool]] = []
        ci_pairs: list[tuple[bool, bool]] = []
        for g, p in zip(golds, preds):
            ac_g, ac_p, ci = binarize_tasks(g, p, j)
            ac_pairs.append((ac_g, ac_p))
            if ci is not None:
                ci_pairs.append(ci)
        ham = aspect_hamming(golds, preds, j)
        ac_macro, ac_micro = binary_task_f1(ac_pairs)
        ci_macro, ci_micro = binary_task_f1(ci_pairs)
        rows.append(ReportRow(name, "AC", ac_macro, ac_micro, ham))
        rows.append(ReportRow(name, "CI", ci_macro, ci_micro, ham))
    overall_macro = float(np.mean([r.macro_f1 for r in rows]))
    overall_micro = float(np.mean([r.micro_f1 for r in rows]))
    rows.append(ReportRow("ALL", "ALL", overall_macro, overall_micro, hamming_loss(golds, preds)))
    return EvalReport(rows=tuple(rows))


def predict_split(
    model,
    manifest: DatasetManifest,
    split: str,
) -> list[tuple[str, AspectLabelVector, AspectLabelVector]]:
    """Run a model over one manifest split; returns (review_id, gold, pred) triples."""
    from .classifier import predict_labels  # local import keeps module deps one-way

    samples = manifest.split_samples(split)
    if not samples:
        raise ValueError(f"manifest has no samples in split {split!r}")
    out = []
    for sample in samples:
        if sample.gold_label is None:
            raise ValueError(f"sample {sample.review_id} has no gold label; cannot evaluate")
        review = manifest.load_review(sample)
        text = review.text_sequence()
        image = review.image_sequence()
        logits = model.forward_sample(text.data, image.data, text.mask, training=False)
        out.append((sample.review_id, sample.gold_label, predict_labels(logits)))
    return out


def evaluate(
    checkpoint_path: str | Path,
    manifest: DatasetManifest,
    split: str = "test",
) -> tuple[EvalReport, list[tuple[str, AspectLabelVector, AspectLabelVector]]]:
    """Load a checkpoint and score it on one manifest split."""
    from .model import load_checkpoint

    checkpoint_path = Path(checkpoint_path)
    if not checkpoint_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint_path}")
    model = load_checkpoint(checkpoint_path)
    pairs = predict_split(model, manifest, split)
    golds = [g for _, g, _ in pairs]
    preds = [p for _, _, p in pairs]
    return evaluate_pairs(golds, preds, manifest.aspect_catalog), pairs
