"""Position constraints, cascade learning, and detection metrics.

A constraint is a one-sided threshold test on a single catalog feature; a
constraint set is evaluated as a conjunction (a degenerate cascade: any
failing stage rejects). Sets are learned greedily, one stage at a time,
minimizing surviving negatives while keeping at least a fraction r_l of the
surviving positives at every stage. Acceptance is boundary inclusive:
a vector passes stage (f, theta, s) iff s * x[f] >= s * theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ArityMismatchError, InsufficientDataError, InvalidArityError

MAX_STAGES = 16
MAX_CANVAS_STAGES = 24  # 3 canvas boxes x 8 banded constraints

PROVENANCES = ("manual", "canvas", "mining", "language")


@dataclass(frozen=True)
class PositionConstraint:
    feature_index: int
    threshold: float
    sign: int  # +1: feature must be >= threshold, -1: <= threshold

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class ConstraintSet:
    arity: int
    constraints: tuple[PositionConstraint, ...] = ()
    provenance: str = "manual"

    def __post_init__(self):
        cat = geometry.catalog(self.arity)
        limit = MAX_CANVAS_STAGES if self.provenance == "canvas" else MAX_STAGES
        if len(self.constraints) > limit:
            raise ValueError(f"too many stages: {len(self.constraints)} > {limit}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        for c in self.constraints:
            if not 0 <= c.feature_index < cat.n_features:
                raise InvalidArityError(
                    f"feature index {c.feature_index} outside arity-{self.arity} catalog")

    def extended(self, constraint: PositionConstraint) -> "ConstraintSet":
        return ConstraintSet(self.arity, self.constraints + (constraint,),
                             self.provenance)

    def to_json(self) -> dict:
        cat = geometry.catalog(self.arity)
        return {
            "arity": self.arity,
            "provenance": self.provenance,
            "constraints": [
                {"f": c.feature_index, "name": cat.descriptors[c.feature_index].name,
                 "theta": float(c.threshold), "sign": c.sign}
                for c in self.constraints
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConstraintSet":
        arity = int(obj["arity"])
        cat = geometry.catalog(arity)
        constraints = []
        for entry in obj.get("constraints", []):
            f = int(entry["f"])
            name = entry.get("name")
            if name is not None and cat.descriptors[f].name != name:
                raise InvalidArityError(
                    f"constraint name {name!r} does not match catalog entry "
                    f"{cat.descriptors[f].name!r} at index {f}")
            constraints.append(PositionConstraint(f, float(entry["theta"]),
                                                  int(entry["sign"])))
        return cls(arity, tuple(constraints), obj.get("provenance", "manual"))


@dataclass(frozen=True)
class CascadeParams:
    max_stages: int = 3      # n_c
    recall_floor: float = 0.96  # r_l, per-stage recall lower bound

    def __post_init__(self):
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")
        if not 0.0 < self.recall_floor <= 1.0:
            raise ValueError("recall_floor must be in (0, 1]")


class LabeledFeatureSet:
    """Positive and negative feature rows of one arity, as float64 matrices."""

    def __init__(self, positives, negatives, arity: int | None = None):
        self.positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
        self.negatives = (np.atleast_2d(np.asarray(negatives, dtype=np.float64))
                          if len(negatives) else
                          np.empty((0, self.positives.shape[1])))
        if self.positives.shape[0] < 1:
            raise InsufficientDataError("at least one positive example is required")
        if self.negatives.shape[0] and \
                self.negatives.shape[1] != self.positives.shape[1]:
            raise ArityMismatchError("positives and negatives have different widths")
        self.arity = arity if arity is not None \
            else geometry.arity_of(self.positives.shape[1])

    @property
    def n_features(self):
        return self.positives.shape[1]


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    f_value: float
    selectivity: float
    harmonic: float

    def to_json(self):
        return {"precision": self.precision, "recall": self.recall,
                "f_value": self.f_value, "selectivity": self.selectivity,
                "harmonic": self.harmonic}


def f_value(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


def harmonic_score(recall: float, selectivity: float) -> float:
    """Harmonic mean of recall and (1 - selectivity)."""
    rejectivity = 1.0 - selectivity
    s = recall + rejectivity
    return 2.0 * recall * rejectivity / s if s > 0 else 0.0


def make_metrics(tp: int, fp: int, n_pos: int, n_total: int) -> DetectionMetrics:
    detected = tp + fp
    precision = tp / detected if detected > 0 else 1.0
    recall = tp / n_pos if n_pos > 0 else 0.0
    selectivity = detected / n_total if n_total > 0 else 0.0
    return DetectionMetrics(precision, recall, f_value(precision, recall),
                            selectivity, harmonic_score(recall, selectivity))


def _check_width(cs: ConstraintSet, width: int):
    expected = geometry.catalog(cs.arity).n_features
    if width != expected:
        raise ArityMismatchError(
            f"feature vector has {width} entries, arity-{cs.arity} catalog has {expected}")


def passes_matrix(cs: ConstraintSet, rows: np.ndarray) -> np.ndarray:
    """Boolean mask of rows accepted by every stage (vacuously true if empty)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    _check_width(cs, rows.shape[1])
    mask = np.ones(rows.shape[0], dtype=bool)
    for c in cs.constraints:
        if c.sign > 0:
            mask &= rows[:, c.feature_index] >= c.threshold
        else:
            mask &= rows[:, c.feature_index] <= c.threshold
    return mask


def satisfies_all(cs: ConstraintSet, x) -> bool:
    """True iff x passes every stage; the empty set accepts everything."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ArityMismatchError("satisfies_all expects a single feature vector")
    return bool(passes_matrix(cs, x[None, :])[0])


def learn_stage(data: LabeledFeatureSet, recall_floor: float):
    """Best single threshold test under the per-stage recall bound.

    Searches every (feature, sign); the threshold sits on the m-th most
    extreme positive value (m = ceil(recall_floor * n_pos)), which with
    inclusive comparison keeps at least m positives and, among feasible
    thresholds for that feature and sign, minimizes passing negatives.
    Ties break by fewer false positives, more kept positives, smaller
    feature index, then sign +1 before -1.

    Returns (constraint, fp_count, kept_positive_count).
    """
    pos, neg = data.positives, data.negatives
    n_pos = pos.shape[0]
    m = max(1, math.ceil(recall_floor * n_pos))

    pos_sorted = np.sort(pos, axis=0)  # ascending, per feature
    best = None
    for sign in (1, -1):
        if sign > 0:
            theta = pos_sorted[n_pos - m, :]          # m-th largest
            kept = (pos >= theta).sum(axis=0)
            fp = (neg >= theta).sum(axis=0) if neg.size else np.zeros(pos.shape[1], int)
        else:
            theta = pos_sorted[m - 1, :]               # m-th smallest
            kept = (pos <= theta).sum(axis=0)
            fp = (neg <= theta).sum(axis=0) if neg.size else np.zeros(pos.shape[1], int)
        for f in range(pos.shape[1]):
            key = (int(fp[f]), -int(kept[f]), f, 0 if sign > 0 else 1)
            if best is None or key < best[0]:
                best = (key, PositionConstraint(f, float(theta[f]), sign),
                        int(fp[f]), int(kept[f]))
    _, constraint, fp_count, kept_count = best
    return constraint, fp_count, kept_count


def learn_cascade(data: LabeledFeatureSet, params: CascadeParams = CascadeParams(),
                  provenance: str = "manual") -> ConstraintSet:
    """Greedy cascade: learn a stage, drop rejected rows, repeat.

    Stops at params.max_stages or as soon as no negatives survive (further
    stages cannot lower the false-positive count and only cost recall).
    Training recall of the returned set is >= recall_floor ** n_stages.
    """
    cs = ConstraintSet(data.arity, (), provenance)
    pos, neg = data.positives, data.negatives
    for _ in range(params.max_stages):
        if neg.shape[0] == 0:
            break
        survivors = LabeledFeatureSet(pos, neg, arity=data.arity)
        constraint, _, _ = learn_stage(survivors, params.recall_floor)
        cs = cs.extended(constraint)
        stage_only = ConstraintSet(data.arity, (constraint,), provenance)
        pos = pos[passes_matrix(stage_only, pos)]
        neg = neg[passes_matrix(stage_only, neg)]
    return cs


def evaluate_metrics(cs: ConstraintSet, data: LabeledFeatureSet) -> DetectionMetrics:
    tp = int(passes_matrix(cs, data.positives).sum())
    fp = int(passes_matrix(cs, data.negatives).sum()) if data.negatives.size else 0
    n_pos = data.positives.shape[0]
    n_total = n_pos + data.negatives.shape[0]
    return make_metrics(tp, fp, n_pos, n_total)
