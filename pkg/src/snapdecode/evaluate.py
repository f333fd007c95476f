"""Leave-one-subject-out evaluation and category-separation analysis.

Each fold trains the per-region ensemble on every other subject's feature
rows and scores the held-out subject. Feature extraction is per-subject by
construction (regressors and transforms come only from a subject's own
data), so rows are computed once and reused across folds without leakage.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .feature import global_matrix, layout_from_atlas
from .model import LabeledFeatures, train_ensemble
from .pipeline import Experiment, featurize_subject
from .snapshot import SnapshotSet


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches between two +/-1 vectors."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must have equal nonzero length")
    return float(np.mean(predictions == labels))


def auc(scores, labels) -> float:
    """Rank-based area under the ROC curve, ties counted half.

    Equals P(score+ > score-) + 0.5 P(score+ = score-), which matches the
    trapezoidal area under the empirical ROC curve.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == -1]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC undefined: both classes must be present")
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float(
        (pos_rank_sum - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size)
    )


@dataclass(frozen=True)
class FoldResult:
    subject_id: str
    failed: bool = False
    reason: str | None = None
    acc: float | None = None
    auc: float | None = None
    confusion: tuple[int, int, int, int] = (0, 0, 0, 0)  # tp, fp, tn, fn
    test_snapshot_ids: tuple[str, ...] = ()
    train_snapshot_ids: tuple[str, ...] = ()
    scores: tuple[float, ...] = ()
    predictions: tuple[int, ...] = ()
    labels: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    target_category: str
    folds: tuple[FoldResult, ...]
    acc: float | None
    auc: float | None
    acc_std: float | None
    auc_std: float | None
    warnings: tuple[str, ...]
    config: dict = field(default_factory=dict)

    @property
    def n_completed(self) -> int:
        return sum(1 for f in self.folds if not f.failed)

    def to_dict(self) -> dict:
        return {
            "target_category": self.target_category,
            "acc": self.acc,
            "auc": self.auc,
            "acc_std": self.acc_std,
            "auc_std": self.auc_std,
            "n_folds": len(self.folds),
            "n_completed": self.n_completed,
            "warnings": list(self.warnings),
            "config": self.config,
            "folds": [
                {
                    "subject_id": f.subject_id,
                    "failed": f.failed,
                    "reason": f.reason,
                    "acc": f.acc,
                    "auc": f.auc,
                    "confusion": list(f.confusion),
                    "n_test": len(f.test_snapshot_ids),
                    "test_snapshot_ids": list(f.test_snapshot_ids),
                    "train_snapshot_ids": list(f.train_snapshot_ids),
                }
                for f in self.folds
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"target: {self.target_category}",
            f"folds: {len(self.folds)} ({self.n_completed} completed)",
            "",
            "subject        acc      auc   tp  fp  tn  fn",
        ]
        for f in self.folds:
            if f.failed:
                lines.append(f"{f.subject_id:<12} failed: {f.reason}")
                continue
            tp, fp, tn, fn = f.confusion
            auc_text = f"{f.auc:8.4f}" if f.auc is not None else "     n/a"
            lines.append(
                f"{f.subject_id:<12} {f.acc:8.4f} {auc_text} {tp:4d}{fp:4d}{tn:4d}{fn:4d}"
            )
        lines.append("")
        acc_text = f"{self.acc:.4f}" if self.acc is not None else "n/a"
        auc_text = f"{self.auc:.4f}" if self.auc is not None else "n/a"
        lines.append(f"mean acc: {acc_text}")
        lines.append(f"mean auc: {auc_text}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def _confusion(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == -1)))
    tn = int(np.sum((predictions == -1) & (labels == -1)))
    fn = int(np.sum((predictions == -1) & (labels == 1)))
    return tp, fp, tn, fn


def _run_fold(args) -> FoldResult:
    (subject, matrix, y, subjects, snapshot_ids, layout, c, target) = args
    test_mask = subjects == subject
    train_mask = ~test_mask
    train_ids = tuple(np.asarray(snapshot_ids)[train_mask])
    test_ids = tuple(np.asarray(snapshot_ids)[test_mask])
    y_train = y[train_mask]
    if np.unique(y_train).size < 2:
        return FoldResult(
            subject_id=subject,
            failed=True,
            reason="training rows contain a single class",
            test_snapshot_ids=test_ids,
            train_snapshot_ids=train_ids,
        )
    model = train_ensemble(matrix[train_mask], y_train, layout, c, target)
    scored = [model.predict_row(row, layout) for row in matrix[test_mask]]
    scores = np.array([s for s, _ in scored])
    predictions = np.array([p for _, p in scored])
    labels = y[test_mask].astype(int)
    fold_auc = None
    if np.unique(labels).size == 2:
        fold_auc = auc(scores, labels)
    return FoldResult(
        subject_id=subject,
        acc=accuracy(predictions, labels),
        auc=fold_auc,
        confusion=_confusion(predictions, labels),
        test_snapshot_ids=test_ids,
        train_snapshot_ids=train_ids,
        scores=tuple(float(s) for s in scores),
        predictions=tuple(int(p) for p in predictions),
        labels=tuple(int(v) for v in labels),
    )


def loo_from_rows(
    matrix: np.ndarray,
    y: np.ndarray,
    subjects,
    snapshot_ids,
    layout,
    target_category: str,
    svm_c: float = 1.0,
    jobs: int = 1,
    config: dict | None = None,
) -> EvalReport:
    """Leave-one-subject-out folds over precomputed global feature rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    subjects = np.asarray(subjects)
    order = []
    for s in subjects:
        if s not in order:
            order.append(s)
    if len(order) < 2:
        raise ValueError("leave-one-out needs at least 2 subjects")
    args = [
        (s, matrix, y, subjects, tuple(snapshot_ids), layout, svm_c, target_category)
        for s in order
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = tuple(pool.map(_run_fold, args))
    else:
        folds = tuple(_run_fold(a) for a in args)
    warnings = tuple(
        f"fold {f.subject_id} failed: {f.reason}" for f in folds if f.failed
    )
    accs = [f.acc for f in folds if f.acc is not None]
    aucs = [f.auc for f in folds if f.auc is not None]
    if len(aucs) < len([f for f in folds if not f.failed]):
        warnings = warnings + (
            "some folds had single-class test sets; AUC averaged over the rest",
        )
    return EvalReport(
        target_category=target_category,
        folds=folds,
        acc=float(np.mean(accs)) if accs else None,
        auc=float(np.mean(aucs)) if aucs else None,
        acc_std=float(np.std(accs)) if accs else None,
        auc_std=float(np.std(aucs)) if aucs else None,
        warnings=warnings,
        config=config or {},
    )


def loo_evaluate(
    exp: Experiment,
    target_category: str,
    *,
    label_seed: int | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Run the full pipeline per subject, then LOO-evaluate the ensemble.

    `label_seed` permutes the +/-1 labels across pooled snapshots (a chance
    -level control); feature extraction itself is untouched.
    """
    if exp.n_subjects < 2:
        raise ValueError("leave-one-out needs at least 2 subjects")
    if target_category not in exp.category_names:
        raise ValueError(
            f"target {target_category!r} not in categories {exp.category_names}"
        )
    layout = layout_from_atlas(exp.atlas)
    rows = []
    y = []
    subjects = []
    snapshot_ids = []
    for bold, schedule in exp.subjects:
        art = featurize_subject(
            bold, schedule, exp.atlas, exp.reference, exp.settings
        )
        for fv in art.features:
            rows.append(fv)
            y.append(1.0 if fv.category == target_category else -1.0)
            subjects.append(bold.subject_id)
            snapshot_ids.append(fv.snapshot_id)
    matrix = global_matrix(rows, layout)
    y = np.asarray(y)
    if label_seed is not None:
        y = np.random.default_rng(label_seed).permutation(y)
    config = dict(exp.settings.echo())
    config["target_category"] = target_category
    config["label_seed"] = label_seed
    return loo_from_rows(
        matrix,
        y,
        subjects,
        snapshot_ids,
        layout,
        target_category,
        svm_c=exp.settings.svm_c,
        jobs=jobs,
        config=config,
    )


def pooled_features(exp: Experiment) -> tuple[LabeledFeatures, list, str]:
    """Featurize every subject and pool rows; labels are +1 for the first
    category, -1 otherwise (callers re-label for other targets)."""
    layout = layout_from_atlas(exp.atlas)
    rows = []
    snaps = []
    target = exp.category_names[0]
    for bold, schedule in exp.subjects:
        art = featurize_subject(
            bold, schedule, exp.atlas, exp.reference, exp.settings
        )
        rows.extend(art.features)
        snaps.extend(art.snapshots.snapshots)
    y = np.array([1.0 if fv.category == target else -1.0 for fv in rows])
    return LabeledFeatures(tuple(rows), y, layout), snaps, target


def correlation_matrices(
    features: LabeledFeatures, raw_snapshots
) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation between per-category mean vectors, in voxel space
    (raw snapshots) and in feature space (global zero-filled rows).

    Zero-variance means yield NaN entries; the diagonal is 1 where defined.
    """
    snaps = (
        list(raw_snapshots.snapshots)
        if isinstance(raw_snapshots, SnapshotSet)
        else list(raw_snapshots)
    )
    by_index = {}
    for s in snaps:
        by_index.setdefault(s.category_index, s.category)
    categories = [by_index[i] for i in sorted(by_index)]
    if len(categories) < 2:
        raise ValueError("need at least 2 categories for a correlation matrix")
    voxel_means = [
        np.mean([s.image for s in snaps if s.category == cat], axis=0)
        for cat in categories
    ]
    feature_rows = global_matrix(features.rows, features.layout)
    row_cats = np.array([fv.category for fv in features.rows])
    feature_means = [
        feature_rows[row_cats == cat].mean(axis=0) for cat in categories
    ]
    return _corr_matrix(voxel_means), _corr_matrix(feature_means)


def _corr_matrix(means) -> np.ndarray:
    p = len(means)
    centered = [m - m.mean() for m in means]
    norms = [float(np.sqrt(np.sum(c * c))) for c in centered]
    out = np.full((p, p), np.nan)
    for i in range(p):
        for j in range(p):
            if norms[i] > 0 and norms[j] > 0:
                out[i, j] = float(np.dot(centered[i], centered[j]) / (norms[i] * norms[j]))
    return out


def mean_abs_offdiagonal(matrix: np.ndarray) -> float:
    p = matrix.shape[0]
    mask = ~np.eye(p, dtype=bool)
    return float(np.nanmean(np.abs(matrix[mask])))
