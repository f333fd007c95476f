"""Per-region sparse linear classifiers and their bagged combination.

Each region gets one weight vector minimizing

    C * sum_j max(0, 1 - y_j <x_j, w>) + ||w||_1

with no intercept. The objective is convex and piecewise linear along any
line, so coordinate descent takes exact single-coordinate minimizers found
by a breakpoint sweep; small problems get an extra exact line search over
paired coordinate directions to escape two-coordinate corners. Training is
fully deterministic: fixed sweep order, no randomized starts, ties inside a
flat optimum resolve to zero when possible and to the interval midpoint
otherwise. The final predictor averages the per-region decision values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .feature import FeatureVector, RegionLayout
from .volume import atomic_write_text

_PAIR_SEARCH_LIMIT = 16
_MAX_EPOCHS = 10_000


@dataclass(frozen=True)
class RegionClassifier:
    region_id: int
    weights: np.ndarray
    c: float
    objective_history: np.ndarray | None = field(default=None, compare=False,
                                                 repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise ValueError("classifier weights must be finite")
        object.__setattr__(self, "weights", w)


def region_decision(clf: RegionClassifier, x: np.ndarray) -> float:
    """Signed decision value: inner product of a region row with the weights."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != clf.weights.shape:
        raise ValueError(
            f"row has {x.size} values, classifier expects {clf.weights.size}"
        )
    return float(np.dot(x, clf.weights))


def _objective(margins: np.ndarray, w: np.ndarray, c: float) -> float:
    return float(c * np.maximum(0.0, 1.0 - margins).sum() + np.abs(w).sum())


def _line_minimum(coef, margins, c, kink_pos, kink_jumps):
    """Exact minimizer of the objective along one line.

    g(a) = c * sum_j max(0, 1 - margins_j - a*coef_j) + sum_i |p_i + a*u_i|
    is piecewise linear and convex; its slope starts negative, increases by
    c*|coef_j| at each hinge breakpoint and by each kink's jump at the kink.
    Returns the step; inside a flat optimal interval, 0 wins when feasible,
    else the interval midpoint.
    """
    nz = coef != 0.0
    hinge_pos = (1.0 - margins[nz]) / coef[nz]
    hinge_jump = c * np.abs(coef[nz])
    positions = np.concatenate((hinge_pos, kink_pos))
    jumps = np.concatenate((hinge_jump, kink_jumps))
    init = -c * coef[coef > 0.0].sum() - 0.5 * kink_jumps.sum()
    order = np.argsort(positions, kind="stable")
    positions = positions[order]
    slopes = init + np.cumsum(jumps[order])
    zero_tol = 1e-12 * max(1.0, jumps.sum())
    crossing = int(np.argmax(slopes > -zero_tol))
    if slopes[crossing] > zero_tol or crossing == positions.size - 1:
        return float(positions[crossing])
    lo, hi = positions[crossing], positions[crossing + 1]
    if lo <= 0.0 <= hi:
        return 0.0
    return float((lo + hi) / 2.0)


def _vertex_optimum(signed: np.ndarray, c: float):
    """Exact global minimizer for small dimension by vertex enumeration.

    The objective is polyhedral and coercive, so its minimum is attained at
    an intersection of `dim` hyperplanes drawn from the hinge boundaries
    (margin = 1) and the coordinate planes (w_k = 0). Enumerating all
    nondegenerate intersections and picking the best is exact; cost grows
    combinatorially, so this only runs for a handful of features.
    """
    tau, dim = signed.shape
    normals = np.vstack([signed, np.eye(dim)])
    offsets = np.concatenate([np.ones(tau), np.zeros(dim)])
    candidates = [np.zeros(dim)]
    from itertools import combinations

    for idx in combinations(range(normals.shape[0]), dim):
        m = normals[list(idx)]
        scale = np.prod(np.linalg.norm(m, axis=1))
        if scale == 0 or abs(np.linalg.det(m)) <= 1e-12 * scale:
            continue
        candidates.append(np.linalg.solve(m, offsets[list(idx)]))
    cand = np.stack(candidates)
    margins = cand @ signed.T
    objs = c * np.maximum(0.0, 1.0 - margins).sum(axis=1) + np.abs(cand).sum(axis=1)
    best = int(np.argmin(objs))
    return cand[best], float(objs[best])


def _solve_l1_hinge(x: np.ndarray, y: np.ndarray, c: float):
    tau, dim = x.shape
    signed = x * y[:, None]
    w = np.zeros(dim)
    history = []
    prev_obj = np.inf
    plateau = 0
    single_kink_jump = np.array([2.0])
    pair_kink_jumps = np.array([2.0, 2.0])
    use_pairs = 2 <= dim <= _PAIR_SEARCH_LIMIT
    for _ in range(_MAX_EPOCHS):
        margins = signed @ w  # recompute to cap incremental drift
        moved = False
        for k in range(dim):
            a = signed[:, k]
            step = _line_minimum(a, margins, c, np.array([-w[k]]),
                                 single_kink_jump)
            if abs(step) > 1e-12 * (1.0 + abs(w[k])):
                w[k] += step
                margins += step * a
                moved = True
        if use_pairs and not moved:
            for i in range(dim):
                for j in range(i + 1, dim):
                    for uj in (1.0, -1.0):
                        coef = signed[:, i] + uj * signed[:, j]
                        kinks = np.array([-w[i], -w[j] / uj])
                        step = _line_minimum(coef, margins, c, kinks,
                                             pair_kink_jumps)
                        if abs(step) > 1e-12 * (1.0 + abs(w[i]) + abs(w[j])):
                            w[i] += step
                            w[j] += step * uj
                            margins += step * coef
                            moved = True
        obj = _objective(signed @ w, w, c)
        if obj > prev_obj + 1e-9 * (1.0 + abs(prev_obj)):
            raise NumericalError(
                f"objective increased across an epoch ({prev_obj} -> {obj})"
            )
        if prev_obj - obj <= 1e-8 * (1.0 + abs(obj)):
            plateau += 1
        else:
            plateau = 0
        history.append(obj)
        prev_obj = obj
        if not moved:
            break
        if plateau >= 2 and len(history) >= 10:
            break
    if dim <= 3:
        w_vertex, obj_vertex = _vertex_optimum(signed, c)
        if obj_vertex < prev_obj:
            w = w_vertex
            history.append(obj_vertex)
    w[np.abs(w) < 1e-15] = 0.0
    return w, np.asarray(history)


def train_region_svm(
    x: np.ndarray, y, c: float = 1.0, *, region_id: int = 0
) -> RegionClassifier:
    """Fit one region's sparse hinge classifier.

    Requires both classes and a positive trade-off c; the returned weights
    carry the per-epoch objective values for monotonicity checks.
    """
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("need matching feature rows and labels")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("training rows contain a single class")
    w, history = _solve_l1_hinge(x, y, c)
    return RegionClassifier(region_id, w, c, history)


def bag(classifiers, x: FeatureVector) -> tuple[float, int]:
    """Average the per-region decision values; sign breaks toward -1 on ties."""
    classifiers = list(classifiers)
    if not classifiers:
        raise ValueError("need at least one region classifier")
    decisions = np.array(
        [
            region_decision(clf, x.region_values(clf.region_id, clf.weights.size))
            for clf in classifiers
        ]
    )
    score = float(decisions.mean())
    return score, (1 if score > 0 else -1)


@dataclass(frozen=True)
class EnsembleModel:
    classifiers: tuple[RegionClassifier, ...]
    positive_label: str
    c: float

    def __post_init__(self):
        if not self.classifiers:
            raise ValueError("ensemble needs at least one classifier")
        object.__setattr__(self, "classifiers", tuple(self.classifiers))

    def predict_vector(self, fv: FeatureVector) -> tuple[float, int]:
        return bag(self.classifiers, fv)

    def predict_row(self, row: np.ndarray, layout: RegionLayout) -> tuple[float, int]:
        spans = {rid: (start, size) for rid, start, size in layout.offsets()}
        decisions = np.array(
            [
                region_decision(clf, row[spans[clf.region_id][0] :
                                         spans[clf.region_id][0] + spans[clf.region_id][1]])
                for clf in self.classifiers
            ]
        )
        score = float(decisions.mean())
        return score, (1 if score > 0 else -1)


@dataclass(frozen=True)
class LabeledFeatures:
    """Pooled training rows: feature vectors, +/-1 labels, shared layout."""

    rows: tuple[FeatureVector, ...]
    y: np.ndarray
    layout: RegionLayout

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if y.size != len(self.rows):
            raise ValueError("one label per feature vector required")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "y", y)


def train_ensemble(
    matrix: np.ndarray,
    y,
    layout: RegionLayout,
    c: float = 1.0,
    positive_label: str = "",
) -> EnsembleModel:
    """Train one classifier per region that has any nonzero training value.

    Rows are global-layout feature rows; regions that are all-zero across
    the training set carry no information and are skipped.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(y).size < 2:
        raise ValueError("training set contains a single class")
    classifiers = []
    for rid, start, size in layout.offsets():
        block = matrix[:, start : start + size]
        if np.any(block != 0.0):
            classifiers.append(train_region_svm(block, y, c, region_id=rid))
    if not classifiers:
        raise ValueError("no region has nonzero training features")
    return EnsembleModel(tuple(classifiers), positive_label, c)


def save_model(model: EnsembleModel, path) -> None:
    """Persist as delimited text: one header line, then region weight lines."""
    lines = [f"{model.positive_label},{model.c!r},{len(model.classifiers)}"]
    for clf in model.classifiers:
        weights = ",".join(repr(float(v)) for v in clf.weights)
        lines.append(f"{clf.region_id},{clf.weights.size},{weights}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path) -> EnsembleModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    label, c_text, count_text = lines[0].rsplit(",", 2)
    classifiers = []
    for ln in lines[1 : 1 + int(count_text)]:
        parts = ln.split(",")
        rid, n = int(parts[0]), int(parts[1])
        weights = np.array([float(v) for v in parts[2 : 2 + n]])
        classifiers.append(RegionClassifier(rid, weights, float(c_text)))
    return EnsembleModel(tuple(classifiers), label, float(c_text))
