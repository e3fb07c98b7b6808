"""Detection scoring: IOU, greedy one-to-one matching, F1 and count fraction.

Predictions and truths are any objects with ``id``, ``cls`` and ``footprint``
attributes (``Detection`` and ``TruthRecord`` both qualify).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


MATCH_METHODS = ("greedy", "optimal")


@dataclass(frozen=True)
class MatchConfig:
    iou_thresh: float = 0.25
    method: str = "greedy"  # "optimal": most pairs, then largest total IOU

    def __post_init__(self):
        if not 0.0 < self.iou_thresh <= 1.0:
            raise ConfigError(f"iou_thresh must lie in (0, 1], got {self.iou_thresh}")
        if self.method not in MATCH_METHODS:
            raise ConfigError(f"method must be one of {MATCH_METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class Pair:
    cls: str
    pred_id: int
    gt_id: int
    iou: float


def iou(a, b) -> float:
    """Intersection over union of two polygons; 0 when either has no area."""
    if a.is_empty or b.is_empty or a.area <= 0.0 or b.area <= 0.0:
        return 0.0
    inter = a.intersection(b).area
    if inter <= 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def _by_class(items):
    out = {}
    for it in items:
        out.setdefault(it.cls, []).append(it)
    return out


def _optimal(cls, cand, preds, gts):
    """Maximum number of pairs, ties broken by total IOU (assignment problem)."""
    from scipy.optimize import linear_sum_assignment

    pid = sorted({p.id for p in preds})
    gid = sorted({g.id for g in gts})
    pi = {v: i for i, v in enumerate(pid)}
    gi = {v: i for i, v in enumerate(gid)}
    # each valid pair is worth more than any sum of IOU bonuses, so cardinality wins
    big = float(min(len(pid), len(gid)) + 1)
    w = np.zeros((len(pid), len(gid)))
    for neg, p, g in cand:
        w[pi[p], gi[g]] = big - neg
    rows, cols = linear_sum_assignment(w, maximize=True)
    return [Pair(cls, pid[r], gid[c], w[r, c] - big) for r, c in zip(rows, cols) if w[r, c] > 0]


def match_detections(pred, gt, cfg: MatchConfig | None = None) -> list:
    """One-to-one matching within each class.

    Candidate pairs need ``IOU >= cfg.iou_thresh``.  The default greedy
    method takes pairs highest IOU first, equal IOUs in (pred id, gt id)
    order, skipping any prediction or truth already used.  Greedy can
    occasionally find fewer pairs than possible; ``method="optimal"``
    solves the assignment exactly instead.  Returns :class:`Pair` objects
    sorted by (class, pred id).
    """
    cfg = cfg or MatchConfig()
    preds, gts = _by_class(pred), _by_class(gt)
    pairs = []
    for cls in sorted(set(preds) & set(gts)):
        cand = []
        for p in preds[cls]:
            for g in gts[cls]:
                v = iou(p.footprint, g.footprint)
                if v >= cfg.iou_thresh:
                    cand.append((-v, p.id, g.id))
        cand.sort()
        if cfg.method == "optimal":
            pairs.extend(_optimal(cls, cand, preds[cls], gts[cls]))
            continue
        used_p, used_g = set(), set()
        for neg, pid, gid in cand:
            if pid in used_p or gid in used_g:
                continue
            used_p.add(pid)
            used_g.add(gid)
            pairs.append(Pair(cls, pid, gid, -neg))
    pairs.sort(key=lambda q: (q.cls, q.pred_id))
    return pairs


def count_fraction(n_pred: int, n_gt: int):
    """``n_pred / n_gt``, or ``None`` when there is no truth to compare against."""
    if n_gt == 0:
        return None
    return n_pred / n_gt


def _ratio(num, den):
    return num / den if den else 0.0


def f1_score(precision, recall):
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


@dataclass
class ClassCounts:
    tp: int = 0
    n_pred: int = 0
    n_gt: int = 0

    @property
    def precision(self):
        return _ratio(self.tp, self.n_pred)

    @property
    def recall(self):
        return _ratio(self.tp, self.n_gt)

    @property
    def f1(self):
        return f1_score(self.precision, self.recall)

    @property
    def count_frac(self):
        return count_fraction(self.n_pred, self.n_gt)

    def row(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
            "count_frac": self.count_frac,
        }


@dataclass
class EvalReport:
    """Per-class counts plus the matched pairs they came from.

    Ratios are derived from counts, so reports for several scenes merge by
    adding counts.  The mean row averages precision, recall and F1 over
    classes without weighting, while its count fraction uses pooled totals.
    """

    classes: dict = field(default_factory=dict)  # cls -> ClassCounts
    pairs: list = field(default_factory=list)
    iou_thresh: float = 0.25

    @property
    def mean(self):
        rows = list(self.classes.values())
        if not rows:
            return {"precision": 0.0, "recall": 0.0, "f1": 0.0, "n_pred": 0, "n_gt": 0, "count_frac": None}
        n_pred = sum(r.n_pred for r in rows)
        n_gt = sum(r.n_gt for r in rows)
        return {
            "precision": sum(r.precision for r in rows) / len(rows),
            "recall": sum(r.recall for r in rows) / len(rows),
            "f1": sum(r.f1 for r in rows) / len(rows),
            "n_pred": n_pred,
            "n_gt": n_gt,
            "count_frac": count_fraction(n_pred, n_gt),
        }

    def to_dict(self):
        return {
            "iou_thresh": self.iou_thresh,
            "classes": {k: self.classes[k].row() for k in sorted(self.classes)},
            "mean": self.mean,
            "pairs": [
                {"class": p.cls, "pred_id": p.pred_id, "gt_id": p.gt_id, "iou": p.iou} for p in self.pairs
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self):
        def fmt(v, kind):
            if v is None:
                return "undef"
            return f"{v:d}" if kind == "int" else f"{v:.3f}"

        cols = [("Class", None), ("Precision", "f"), ("Recall", "f"), ("F1", "f"),
                ("N_pred", "int"), ("N_gt", "int"), ("count_frac", "f")]
        keys = ["precision", "recall", "f1", "n_pred", "n_gt", "count_frac"]
        body = [[k] + [fmt(self.classes[k].row()[key], kind) for key, (_, kind) in zip(keys, cols[1:])]
                for k in sorted(self.classes)]
        body.append(["Mean"] + [fmt(self.mean[key], kind) for key, (_, kind) in zip(keys, cols[1:])])
        table = [[c for c, _ in cols]] + body
        widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
        lines = []
        for j, r in enumerate(table):
            cells = [r[0].ljust(widths[0])] + [r[i].rjust(widths[i]) for i in range(1, len(cols))]
            lines.append("  ".join(cells).rstrip())
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    @classmethod
    def merge(cls, reports):
        reports = list(reports)
        out = cls(iou_thresh=reports[0].iou_thresh if reports else 0.25)
        for rep in reports:
            for k, c in rep.classes.items():
                acc = out.classes.setdefault(k, ClassCounts())
                acc.tp += c.tp
                acc.n_pred += c.n_pred
                acc.n_gt += c.n_gt
            out.pairs.extend(rep.pairs)
        return out


def evaluate(pred, gt, cfg: MatchConfig | None = None) -> EvalReport:
    """Match and score one scene."""
    cfg = cfg or MatchConfig()
    pred, gt = list(pred), list(gt)
    pairs = match_detections(pred, gt, cfg)
    classes = {}
    for it in pred:
        classes.setdefault(it.cls, ClassCounts()).n_pred += 1
    for it in gt:
        classes.setdefault(it.cls, ClassCounts()).n_gt += 1
    for p in pairs:
        classes[p.cls].tp += 1
    return EvalReport(classes, pairs, cfg.iou_thresh)
