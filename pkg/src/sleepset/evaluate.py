"""Evaluation: pooled four-class confusion matrix, total Cohen's kappa and
accuracy over all scored epochs, per-recording kappa, and grouped reports.

Kappa is computed from exact integer counts with a single final division,
so hand-checkable fractions (e.g. 1/3) come out exactly.
"""

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .model import predict
from .signals import ALL_KINDS, SleepStage

CLASS_NAMES = ("Wake", "Light", "Deep", "REM")
N_CLASSES = 4


def confusion(pred, truth):
    """4x4 counts, rows = reference stage, columns = predicted stage.
    Truth epochs labelled Ignore are excluded."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError(f"prediction length {pred.shape} != reference "
                        f"length {truth.shape}")
    scored = truth != SleepStage.IGNORE
    pred = pred[scored]
    truth = truth[scored]
    if pred.size and (pred.min() < 0 or pred.max() >= N_CLASSES or
                      truth.min() < 0 or truth.max() >= N_CLASSES):
        raise DataError("stage codes outside the four-class range")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def kappa(cm):
    """Cohen's kappa: (p_o - p_e) / (1 - p_e) via exact integer counts."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total <= 0:
        raise DataError("kappa needs a non-empty confusion matrix")
    trace = int(np.trace(cm))
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    pe_num = int(rows @ cols)
    denominator = total * total - pe_num
    if denominator == 0:
        warnings.warn("expected agreement is 1; kappa defined as 0")
        return 0.0
    return (total * trace - pe_num) / denominator


def accuracy(cm):
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total <= 0:
        raise DataError("accuracy needs a non-empty confusion matrix")
    return int(np.trace(cm)) / total


@dataclass
class MetricsReport:
    confusion: np.ndarray
    kappa_total: float
    accuracy_total: float
    per_recording: list                 # [(id, kappa)]
    subset: tuple
    n_recordings: int
    skipped: int = 0
    config_digest: str = ""
    groups: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "config_digest": self.config_digest,
            "subset": [k.value for k in self.subset],
            "n_recordings": self.n_recordings,
            "skipped": self.skipped,
            "confusion": self.confusion.tolist(),
            "kappa_total": self.kappa_total,
            "accuracy_total": self.accuracy_total,
            "per_recording": [{"id": rid, "kappa": k}
                              for rid, k in self.per_recording],
        }
        out["groups"] = {name: sub.to_dict()
                         for name, sub in sorted(self.groups.items())}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pool(entries, subset, skipped, config_digest):
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    per_rec = []
    for rec_id, rec_cm in entries:
        cm += rec_cm
        per_rec.append((rec_id, kappa(rec_cm) if rec_cm.sum() else 0.0))
    return MetricsReport(
        confusion=cm,
        kappa_total=kappa(cm) if cm.sum() else 0.0,
        accuracy_total=accuracy(cm) if cm.sum() else 0.0,
        per_recording=per_rec,
        subset=tuple(subset),
        n_recordings=len(entries),
        skipped=skipped,
        config_digest=config_digest,
    )


def evaluate_recordings(params, model_config, recordings, subset,
                        group_key=None, threads=1, config_digest=""):
    """Pooled metrics over every recording that has the requested subset;
    recordings lacking a modality are skipped with a warning count."""
    subset = tuple(sorted(set(subset), key=ALL_KINDS.index))
    if not subset:
        raise DataError("evaluation needs a non-empty modality subset")
    usable, skipped = [], 0
    for rec in recordings:
        if all(k in rec.series for k in subset):
            usable.append(rec)
        else:
            skipped += 1
    if not usable:
        raise DataError(
            f"no recordings contain the requested modalities "
            f"{[k.value for k in subset]} ({skipped} skipped)")

    def run(rec):
        hyp, _ = predict(rec, subset, params, model_config)
        return rec.id, confusion(hyp, rec.labels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(run, usable))
    else:
        entries = [run(rec) for rec in usable]

    report = _pool(entries, subset, skipped, config_digest)
    if group_key is not None:
        by_group = {}
        for rec, entry in zip(usable, entries):
            value = str(rec.group_keys.get(group_key, "unknown"))
            by_group.setdefault(value, []).append(entry)
        report.groups = {
            value: _pool(group_entries, subset, 0, config_digest)
            for value, group_entries in by_group.items()}
    return report


def render_confusion_svg(cm, class_names=CLASS_NAMES, cell=64):
    """Row-normalized heatmap as a standalone SVG string."""
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.shape[0]
    row_sums = cm.sum(axis=1, keepdims=True)
    shade = np.divide(cm, np.maximum(row_sums, 1.0))
    margin = 70
    size = margin + n * cell + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{size}" height="{size}" '
             f'font-family="sans-serif" font-size="12">']
    parts.append(f'<text x="{margin + n * cell / 2}" y="16" '
                 f'text-anchor="middle">predicted</text>')
    parts.append(f'<text x="14" y="{margin + n * cell / 2}" '
                 f'text-anchor="middle" transform="rotate(-90 14 '
                 f'{margin + n * cell / 2})">reference</text>')
    for i in range(n):
        parts.append(f'<text x="{margin - 6}" '
                     f'y="{margin + i * cell + cell / 2 + 4}" '
                     f'text-anchor="end">{class_names[i]}</text>')
        parts.append(f'<text x="{margin + i * cell + cell / 2}" '
                     f'y="{margin - 8}" text-anchor="middle">'
                     f'{class_names[i]}</text>')
        for j in range(n):
            x = margin + j * cell
            y = margin + i * cell
            level = int(255 - 175 * shade[i, j])
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" '
                         f'height="{cell}" fill="rgb({level},{level},255)" '
                         f'stroke="#888"/>')
            dark = "#000" if shade[i, j] < 0.6 else "#fff"
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" '
                         f'text-anchor="middle" fill="{dark}">'
                         f'{int(cm[i, j])}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
