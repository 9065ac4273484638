"""Dataset merging, class-balance statistics, and segmentation scoring.

Balance statistics are image-level: a class counts once per image containing
it, matching the planner's accounting unit. Entropy is base 2 over the count
distribution; the imbalance ratio is the coefficient of variation of the
counts across all schema foreground classes (zero counts included). mIoU is
computed from an accumulated confusion matrix with void ground-truth pixels
skipped and zero-denominator classes excluded from the mean.
"""

from __future__ import annotations

import numpy as np

from .dataset import DatasetIndex, LabelMask, classes_of
from .voc import VOID_ID


class MetricsError(Exception):
    pass


def merge_datasets(origin: DatasetIndex, gen: DatasetIndex) -> DatasetIndex:
    """Concatenate origin and generated indices, origin samples first."""
    if {(c.id, c.name) for c in origin.schema} != {(c.id, c.name) for c in gen.schema}:
        raise MetricsError("schemas differ between origin and generated indices")
    collisions = {s.sample_id for s in origin.samples} & {s.sample_id for s in gen.samples}
    if collisions:
        raise MetricsError(f"sample_id collision on merge: {sorted(collisions)[:3]}")
    return DatasetIndex(
        schema=origin.schema,
        samples=origin.samples + gen.samples,
        root=origin.root,
        split=origin.split,
    )


def class_counts(index: DatasetIndex) -> dict[int, int]:
    """Images-containing-class tally for every schema foreground class."""
    counts = {c.id: 0 for c in index.schema if c.id != 0}
    for sample in index.samples:
        for c in classes_of(sample.mask):
            counts[c] += 1
    return counts


def entropy(counts: dict[int, int]) -> float:
    """Shannon entropy (bits) of the count distribution; zero counts add 0."""
    values = np.array(list(counts.values()), dtype=np.float64)
    total = values.sum()
    if total <= 0:
        raise MetricsError("entropy undefined for all-zero counts")
    p = values[values > 0] / total
    return float(-(p * np.log2(p)).sum())


def imbalance_ratio(counts: dict[int, int]) -> float:
    """Coefficient of variation (population std / mean) of the counts."""
    values = np.array(list(counts.values()), dtype=np.float64)
    if values.sum() <= 0:
        raise MetricsError("imbalance ratio undefined for all-zero counts")
    return float(values.std() / values.mean())


def confusion_matrix(pred: LabelMask, gt: LabelMask, num_classes: int) -> np.ndarray:
    """K x K matrix with entry (i, j) = pixels of ground truth i predicted j.

    Void (255) ground-truth pixels are skipped. Accumulate over a dataset by
    summing per-sample matrices.
    """
    if pred.pixels.shape != gt.pixels.shape:
        raise MetricsError(
            f"mask shapes differ: {pred.pixels.shape} vs {gt.pixels.shape}"
        )
    keep = gt.pixels != VOID_ID
    gt_v = gt.pixels[keep].astype(np.int64)
    pred_v = pred.pixels[keep].astype(np.int64)
    if gt_v.size and gt_v.max() >= num_classes:
        raise MetricsError(f"ground-truth id {gt_v.max()} >= num_classes {num_classes}")
    if pred_v.size and pred_v.max() >= num_classes:
        raise MetricsError(f"predicted id {pred_v.max()} >= num_classes {num_classes}")
    flat = np.bincount(num_classes * gt_v + pred_v, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


def miou(cm: np.ndarray) -> tuple[list[float | None], float]:
    """Per-class IoU (percent; None where undefined) and their mean.

    IoU_c = cm[c,c] / (row_c + col_c - cm[c,c]); classes whose denominator is
    zero are excluded from the mean.
    """
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise MetricsError("confusion matrix must be square")
    diag = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - diag
    per_class: list[float | None] = [
        float(100.0 * diag[c] / denom[c]) if denom[c] > 0 else None
        for c in range(cm.shape[0])
    ]
    defined = [v for v in per_class if v is not None]
    if not defined:
        raise MetricsError("every class has an empty union; mIoU undefined")
    return per_class, float(np.mean(defined))


def num_classes_for(schema) -> int:
    """Matrix size covering background plus every schema id."""
    return max(c.id for c in schema) + 1


def balance_block(index: DatasetIndex) -> dict:
    """Counts/entropy/imbalance summary for one index (JSON-friendly)."""
    counts = class_counts(index)
    names = {c.id: c.name for c in index.schema}
    total = sum(counts.values())
    return {
        "size": len(index),
        "class_counts": {names[c]: n for c, n in sorted(counts.items())},
        "entropy": entropy(counts) if total > 0 else None,
        "imbalance_ratio": imbalance_ratio(counts) if total > 0 else None,
    }


def stats_report(
    origin: DatasetIndex,
    gen: DatasetIndex | None = None,
    final: DatasetIndex | None = None,
) -> dict:
    report = {"origin": balance_block(origin)}
    if gen is not None and len(gen) > 0:
        report["gen"] = balance_block(gen)
    if final is not None:
        report["final"] = balance_block(final)
    return report


def iou_report(cm: np.ndarray, schema) -> dict:
    """Per-class IoU table keyed by name, plus the mean, from one matrix."""
    per_class, mean = miou(cm)
    names = {c.id: c.name for c in schema}
    names[0] = names.get(0, "background")
    table = {
        names.get(i, str(i)): per_class[i]
        for i in range(len(per_class))
        if i in names
    }
    return {"per_class_iou": table, "miou": mean}


def format_iou_table(report: dict) -> str:
    rows = list(report["per_class_iou"].items())
    width = max(len(name) for name, _ in rows + [("mIoU", 0.0)])
    lines = [
        f"{name:<{width}}  {'-' if value is None else f'{value:6.2f}'}"
        for name, value in rows
    ]
    lines.append(f"{'mIoU':<{width}}  {report['miou']:6.2f}")
    return "\n".join(lines)
