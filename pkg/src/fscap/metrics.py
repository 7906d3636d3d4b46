"""Evaluation metrics: correlation, screening power, probe accuracy.

Scores here are predicted activities in log10 nM, where LOWER means more
potent. Classification-style metrics (ROC-AUC, enrichment) therefore
take invert=True to rank low scores first when actives are the positive
label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "ConstantInputError",
    "GroupReport",
    "ProbeResult",
    "SingleClassError",
    "enrichment",
    "export_encodings",
    "logistic_probe",
    "mean_per_group_r",
    "pearson_r",
    "roc_auc",
]


class ConstantInputError(ValueError):
    """Correlation is undefined when either vector is constant."""


class SingleClassError(ValueError):
    """Ranking metrics need both an active and an inactive."""


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation in 64-bit arithmetic."""
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {xv.shape}, {yv.shape}")
    if xv.size < 2:
        raise ValueError(f"need at least 2 points, got {xv.size}")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        raise ConstantInputError("correlation undefined for a constant vector")
    return float(dx @ dy) / np.sqrt(sx * sy)


@dataclass
class GroupReport:
    """Per-group correlations with skip diagnostics."""

    per_group: dict[Hashable, float]
    skipped: dict[Hashable, str] = field(default_factory=dict)

    @property
    def mean_r(self) -> float:
        if not self.per_group:
            raise ValueError("no group produced a correlation")
        return float(np.mean(list(self.per_group.values())))


def mean_per_group_r(
    records: Iterable[tuple[Hashable, float, float]]
) -> GroupReport:
    """Group (key, score, target) records and correlate per group.

    Groups with fewer than 2 points or a constant vector are skipped and
    reported, not folded into the mean.
    """
    by_group: dict[Hashable, list[tuple[float, float]]] = {}
    for key, score, target in records:
        by_group.setdefault(key, []).append((score, target))

    report = GroupReport(per_group={})
    for key, pairs in by_group.items():
        scores = [s for s, _ in pairs]
        targets = [t for _, t in pairs]
        if len(pairs) < 2:
            report.skipped[key] = "fewer than 2 points"
            continue
        try:
            report.per_group[key] = pearson_r(scores, targets)
        except ConstantInputError:
            report.skipped[key] = "constant scores or targets"
    return report


def _scores_labels(scores, labels, invert: bool) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels)
    if s.shape != l.shape or s.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {s.shape}, {l.shape}")
    if not np.isin(l, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    l = l.astype(np.int64)
    if invert:
        s = -s
    return s, l


def roc_auc(scores, labels, invert: bool = False) -> float:
    """Area under the ROC curve by the midrank formula.

    Equals the pairwise statistic (wins + ties/2) / (n_pos * n_neg)
    exactly, ties included. invert=True ranks low scores first.
    """
    s, l = _scores_labels(scores, labels, invert)
    n_pos = int(l.sum())
    n_neg = l.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"need both classes, got {n_pos} positives of {l.size}"
        )
    # midranks: ties share the average of the ranks they span
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[l == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def enrichment(scores, labels, k_pct: float, invert: bool = False) -> float:
    """Percent improvement of the top-k% hit rate over the base rate.

    The top slice holds max(1, floor(k_pct/100 * n)) items; ties beyond
    the boundary break by input order (stable sort). 0 means no better
    than random; k_pct=100 is exactly 0 by construction.
    """
    if not 0.0 < k_pct <= 100.0:
        raise ValueError(f"k_pct must be in (0, 100], got {k_pct}")
    s, l = _scores_labels(scores, labels, invert)
    n_active = int(l.sum())
    if n_active == 0:
        raise SingleClassError("no actives")
    n = s.size
    top = max(1, int(np.floor(k_pct / 100.0 * n)))
    order = np.argsort(-s, kind="stable")
    hit_rate = float(l[order[:top]].sum()) / top
    base_rate = n_active / n
    return 100.0 * (hit_rate / base_rate - 1.0)


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    n_train: int
    n_test: int
    n_classes: int


def logistic_probe(
    encodings: np.ndarray,
    labels: Sequence[Any],
    train_frac: float = 0.8,
    seed: int = 0,
) -> ProbeResult:
    """How linearly separable are the encodings by class label?

    Multinomial logistic regression from zeros, full-batch gradient
    descent: 500 iterations, step 0.1, L2 1e-4 on weights (not biases).
    The split is a seeded shuffle, train_frac rounded to a count and
    clamped so both sides are nonempty. Deterministic in the seed.
    """
    x = np.asarray(encodings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"encodings must be (n, d), got {x.shape}")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes, got {len(classes)}")
    index = {c: i for i, c in enumerate(classes)}
    yc = np.asarray([index[c] for c in labels], dtype=np.int64)
    if yc.size != x.shape[0]:
        raise ValueError("labels do not match encodings")
    counts = np.bincount(yc, minlength=len(classes))
    if counts.min() < 2:
        raise ValueError("every class needs at least 2 instances")

    m = x.shape[0]
    order = np.random.default_rng(seed).permutation(m)
    n_train = min(max(int(round(train_frac * m)), 1), m - 1)
    tr, te = order[:n_train], order[n_train:]

    n_classes = len(classes)
    w = np.zeros((x.shape[1], n_classes))
    b = np.zeros(n_classes)
    xtr, ytr = x[tr], yc[tr]
    onehot = np.zeros((n_train, n_classes))
    onehot[np.arange(n_train), ytr] = 1.0

    for _ in range(500):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        d = (p - onehot) / n_train
        w -= 0.1 * (xtr.T @ d + 1e-4 * w)
        b -= 0.1 * d.sum(axis=0)

    def accuracy(idx: np.ndarray) -> float:
        pred = np.argmax(x[idx] @ w + b, axis=1)
        return float(np.mean(pred == yc[idx]))

    return ProbeResult(
        train_accuracy=accuracy(tr),
        test_accuracy=accuracy(te),
        n_train=n_train,
        n_test=m - n_train,
        n_classes=n_classes,
    )


def export_encodings(model, episodes, path: str) -> int:
    """Write one TSV row per episode: its group label and context encoding.

    Intended for offline visualization of what the context encoder has
    learned (e.g. dimensionality reduction colored by assay). Returns the
    number of data rows written. Header-only file for an empty episode
    list. Same model + episodes give a byte-identical file.
    """
    from .model import encode_context_set

    rows = []
    dim = model.config.encoding_dim
    for ep in episodes:
        enc = encode_context_set(model, ep.contexts)
        rows.append((ep.assay_id, enc))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("group\t" + "\t".join(f"enc_{i}" for i in range(dim)) + "\n")
        for label, enc in rows:
            fh.write(str(label) + "\t" + "\t".join(repr(float(v)) for v in enc) + "\n")
    return len(rows)
