"""Evaluation measures: depth RMSE, semantic mIoU, panoptic quality, SSIM.

mIoU and PQ accumulate dataset-level (intersections/unions and
TP/FP/FN/IoU-sums are summed across images before the final division).
Void pixels (label 255) are excluded everywhere.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import VOID_LABEL, PanopticLabel
from .errors import EvaluationError, ShapeError


# -- depth ---------------------------------------------------------------------


def rmse_depth(pred: np.ndarray, gt: np.ndarray, valid=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"rmse_depth shape mismatch: {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EvaluationError("rmse_depth: empty valid mask")
    diff = pred[valid] - gt[valid]
    return float(np.sqrt(np.mean(diff * diff)))


# -- mean IoU -------------------------------------------------------------------


class IoUAccumulator:
    """Per-class intersection/union sums; mean over classes with nonzero union."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.intersection = np.zeros(num_classes, dtype=np.int64)
        self.union = np.zeros(num_classes, dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"miou shape mismatch: {pred.shape} vs {gt.shape}")
        keep = gt != VOID_LABEL
        pred = pred[keep]
        gt = gt[keep]
        for c in range(self.num_classes):
            p = pred == c
            g = gt == c
            self.intersection[c] += np.count_nonzero(p & g)
            self.union[c] += np.count_nonzero(p | g)

    def result(self):
        present = self.union > 0
        if not present.any():
            raise EvaluationError("mIoU undefined: no non-void pixels accumulated")
        per_class = np.full(self.num_classes, np.nan)
        per_class[present] = self.intersection[present] / self.union[present]
        return float(np.nanmean(per_class)), per_class


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int):
    """Single-image mIoU; returns (mean, per-class array with NaN for absent classes)."""
    acc = IoUAccumulator(num_classes)
    acc.update(pred, gt)
    return acc.result()


# -- panoptic quality --------------------------------------------------------------


@dataclass
class PQResult:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    per_class: dict = field(default_factory=dict)
    defined: bool = True


def _segments(label: PanopticLabel):
    """{(class, instance) -> pixel count}, flattened segment id image."""
    sem = label.semantic.astype(np.int64)
    inst = label.instance.astype(np.int64)
    valid = sem != VOID_LABEL
    key = np.where(valid, sem * (inst.max() + 2) + inst + 1, 0)
    ids, counts = np.unique(key[valid], return_counts=True)
    seg = {}
    for k, c in zip(ids, counts):
        inst_id = int(k % (inst.max() + 2)) - 1
        cls = int(k // (inst.max() + 2))
        seg[(cls, inst_id)] = int(c)
    return seg, key


class PQAccumulator:
    """Standard PQ bookkeeping: segments matched by IoU > 0.5 (the uniqueness
    of such matches makes greedy matching exact)."""

    def __init__(self):
        self.iou_sum: dict = {}
        self.tp: dict = {}
        self.fp: dict = {}
        self.fn: dict = {}

    def _bump(self, table, cls, amount=1):
        table[cls] = table.get(cls, 0) + amount

    def update(self, pred: PanopticLabel, gt: PanopticLabel):
        if pred.semantic.shape != gt.semantic.shape:
            raise ShapeError(f"pq shape mismatch: {pred.semantic.shape} vs {gt.semantic.shape}")
        gt_valid = gt.semantic != VOID_LABEL
        pred = PanopticLabel(np.where(gt_valid, pred.semantic, VOID_LABEL),
                             np.where(gt_valid, pred.instance, 0))

        gt_segs, gt_key = _segments(gt)
        pred_segs, pred_key = _segments(pred)

        # joint histogram of (gt segment, pred segment) occupancy
        both = (gt_key.astype(np.uint64) << np.uint64(32)) | pred_key.astype(np.uint64)
        mask = (gt_key > 0) & (pred_key > 0)
        pairs, inter = np.unique(both[mask], return_counts=True)
        inter_map = {}
        gk = (pairs >> np.uint64(32)).astype(np.int64)
        pk = (pairs & np.uint64(0xFFFFFFFF)).astype(np.int64)
        gt_by_key = {int(k): seg for seg, k in _key_index(gt_key, gt).items()}
        pred_by_key = {int(k): seg for seg, k in _key_index(pred_key, pred).items()}
        for g, p, c in zip(gk, pk, inter):
            inter_map[(gt_by_key[int(g)], pred_by_key[int(p)])] = int(c)

        matched_gt, matched_pred = set(), set()
        for (gseg, pseg), c in inter_map.items():
            if gseg[0] != pseg[0]:
                continue  # classes must agree
            union = gt_segs[gseg] + pred_segs[pseg] - c
            iou = c / union
            if iou > 0.5:
                self._bump(self.tp, gseg[0])
                self._bump(self.iou_sum, gseg[0], iou)
                matched_gt.add(gseg)
                matched_pred.add(pseg)
        for gseg in gt_segs:
            if gseg not in matched_gt:
                self._bump(self.fn, gseg[0])
        for pseg in pred_segs:
            if pseg not in matched_pred:
                self._bump(self.fp, pseg[0])

    def result(self) -> PQResult:
        classes = sorted(set(self.tp) | set(self.fp) | set(self.fn))
        per_class = {}
        for c in classes:
            tp = self.tp.get(c, 0)
            denom = tp + 0.5 * self.fp.get(c, 0) + 0.5 * self.fn.get(c, 0)
            per_class[c] = (self.iou_sum.get(c, 0.0) / denom) if denom > 0 else 0.0
        tp = sum(self.tp.values())
        fp = sum(self.fp.values())
        fn = sum(self.fn.values())
        denom = tp + 0.5 * fp + 0.5 * fn
        if denom == 0:
            return PQResult(0.0, 0.0, 0.0, 0, 0, 0, per_class, defined=False)
        iou_total = sum(self.iou_sum.values())
        sq = iou_total / tp if tp else 0.0
        rq = tp / denom
        return PQResult(iou_total / denom, sq, rq, tp, fp, fn, per_class)


def _key_index(key: np.ndarray, label: PanopticLabel):
    """Map each segment (class, instance) to its packed key value."""
    sem = label.semantic.astype(np.int64)
    inst = label.instance.astype(np.int64)
    valid = sem != VOID_LABEL
    out = {}
    flat_sem = sem[valid]
    flat_inst = inst[valid]
    flat_key = key[valid]
    seen, first = np.unique(flat_key, return_index=True)
    for k, i in zip(seen, first):
        out[(int(flat_sem[i]), int(flat_inst[i]))] = int(k)
    return out


def pq(pred: PanopticLabel, gt: PanopticLabel) -> PQResult:
    acc = PQAccumulator()
    acc.update(pred, gt)
    return acc.result()


# -- SSIM ------------------------------------------------------------------------


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         dynamic_range: float = 255.0) -> float:
    """Mean structural similarity: Gaussian 11x11 window, valid positions only,
    averaged over channels.  Inputs are (H, W, 3) or (H, W) in [0, L]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    h, w = a.shape[:2]
    if h < window or w < window:
        raise EvaluationError(f"ssim needs images of at least {window}x{window}, got {h}x{w}")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    kernel = _gaussian_kernel(window, sigma)

    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = _window_mean(x, kernel)
        my = _window_mean(y, kernel)
        mxx = _window_mean(x * x, kernel)
        myy = _window_mean(y * y, kernel)
        mxy = _window_mean(x * y, kernel)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))
