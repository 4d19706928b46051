"""Per-class average precision at IoU 0.5."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classes import ClassTable
from .errors import AlignmentError
from .mesh_io import LabelSet
from .segmentation import InstanceSegmentation

IOU_THRESHOLD = 0.5


@dataclass
class ClassResult:
    class_id: int
    name: str
    ap: float | None  # None when the class has no ground-truth instance
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class EvalReport:
    per_class: dict[int, ClassResult] = field(default_factory=dict)

    @property
    def mean_ap(self) -> float | None:
        aps = [r.ap for r in self.per_class.values() if r.ap is not None]
        return sum(aps) / len(aps) if aps else None

    def format_table(self) -> str:
        width = max([len(r.name) for r in self.per_class.values()] + [7])
        lines = [f"{'class':<{width}}  AP"]
        for cid in sorted(self.per_class):
            r = self.per_class[cid]
            lines.append(f"{r.name:<{width}}  {'-' if r.ap is None else f'{r.ap:.3f}'}")
        m = self.mean_ap
        lines.append(f"{'mean AP':<{width}}  {'-' if m is None else f'{m:.3f}'}")
        return "\n".join(lines)

    def dump(self) -> str:
        """Machine-readable ``<class_id> <AP>`` lines (``nan`` if undefined)."""
        return "\n".join(
            f"{cid} {'nan' if r.ap is None else repr(r.ap)}" for cid, r in sorted(self.per_class.items())
        )


def average_precision(is_tp, num_gt: int) -> float:
    """All-point interpolated AP over a ranked TP/FP sequence."""
    if num_gt == 0:
        raise ValueError("AP undefined without ground truth")
    is_tp = np.asarray(is_tp, dtype=bool)
    if len(is_tp) == 0:
        return 0.0
    tp = np.cumsum(is_tp)
    precision = tp / np.arange(1, len(is_tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(envelope[is_tp]) / num_gt)


def ground_truth_instances(gt: LabelSet):
    """``{(class_id, instance_id): vertex array}`` over annotated vertices."""
    annotated = np.flatnonzero(gt.instance != 0)
    pairs = np.stack([gt.semantic[annotated], gt.instance[annotated]], axis=1)
    if len(pairs) == 0:
        return {}
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    groups = np.split(annotated[order], np.cumsum(np.bincount(inv, minlength=len(uniq)))[:-1])
    return {(int(c), int(i)): g for (c, i), g in zip(uniq, groups)}


def evaluate(pred: InstanceSegmentation, gt: LabelSet, classes: ClassTable | None = None) -> EvalReport:
    classes = classes or ClassTable.default()
    if pred.num_points != len(gt):
        raise AlignmentError(f"prediction covers {pred.num_points} vertices, ground truth {len(gt)}")
    annotated = gt.instance != 0
    gts = ground_truth_instances(gt)
    # dense GT index per vertex for fast intersections
    gt_keys = sorted(gts)
    gt_index = np.full(len(gt), -1, dtype=np.int64)
    for j, k in enumerate(gt_keys):
        gt_index[gts[k]] = j
    gt_size = np.array([len(gts[k]) for k in gt_keys], dtype=np.int64)

    report = EvalReport()
    for cid in classes.instance_ids:
        cls_gt = [j for j, k in enumerate(gt_keys) if k[0] == cid]
        preds = [p for p in pred.instances if p.class_id == cid]
        preds.sort(key=lambda p: (-p.confidence, -len(p.members), p.id))
        matched: set[int] = set()
        is_tp = []
        for p in preds:
            m = p.members[annotated[p.members]]
            inter = np.bincount(gt_index[m][gt_index[m] >= 0], minlength=len(gt_keys))
            best, best_iou = -1, -1.0
            for j in cls_gt:
                if j in matched:
                    continue
                iou = inter[j] / (len(m) + gt_size[j] - inter[j])
                if iou > best_iou:
                    best, best_iou = j, iou
            if best >= 0 and best_iou >= IOU_THRESHOLD:
                matched.add(best)
                is_tp.append(True)
            else:
                is_tp.append(False)
        tp = sum(is_tp)
        ap = average_precision(is_tp, len(cls_gt)) if cls_gt else None
        report.per_class[cid] = ClassResult(
            cid, classes.name(cid), ap, tp=tp, fp=len(is_tp) - tp, fn=len(cls_gt) - tp
        )
    return report
