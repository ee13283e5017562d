"""Independent reference implementations used as test oracles.

These intentionally share no code with the package: naive loops and
dict/set bookkeeping only, so they can disagree with the fast paths.
"""

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=1):
    """Direct 6-loop cross-correlation, NCHW/OIHW."""
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wid + 2 * padding - kw) // stride + 1
    y = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[ni, ci, i * stride + ki, j * stride + kj] * w[oi, ci, ki, kj]
                    y[ni, oi, i, j] = acc + (b[oi] if b is not None else 0.0)
    return y


def scalar_adamw(theta, grads, lr, beta1, beta2, eps, weight_decay, warmup=0):
    """Plain-float AdamW trajectory for a single scalar parameter."""
    m = v = 0.0
    for step, g in enumerate(grads, start=1):
        eff = lr * min(1.0, step / warmup) if warmup > 0 else lr
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** step)
        vhat = v / (1 - beta2 ** step)
        theta = theta - eff * (mhat / (vhat ** 0.5 + eps) + weight_decay * theta)
    return theta


def brute_force_miou(pred, gt, num_classes, void=255):
    """Pixel-set mIoU; mean over classes with nonzero union."""
    keep = [(int(p), int(g)) for p, g in zip(np.ravel(pred), np.ravel(gt)) if g != void]
    ious = []
    for c in range(num_classes):
        ps = {i for i, (p, _) in enumerate(keep) if p == c}
        gs = {i for i, (_, g) in enumerate(keep) if g == c}
        union = ps | gs
        if union:
            ious.append(len(ps & gs) / len(union))
    return sum(ious) / len(ious) if ious else None


def brute_force_pq(pred_sem, pred_inst, gt_sem, gt_inst, void=255):
    """All-pairs segment matching at IoU > 0.5; returns (pq, sq, rq, tp, fp, fn).

    gt-void pixels are dropped entirely; pred-void pixels form no segment.
    """
    h, w = gt_sem.shape
    gt_segs, pred_segs = {}, {}
    for r in range(h):
        for c in range(w):
            if gt_sem[r, c] == void:
                continue
            gkey = (int(gt_sem[r, c]), int(gt_inst[r, c]))
            gt_segs.setdefault(gkey, set()).add((r, c))
            if pred_sem[r, c] != void:
                pkey = (int(pred_sem[r, c]), int(pred_inst[r, c]))
                pred_segs.setdefault(pkey, set()).add((r, c))
    tp, iou_sum = 0, 0.0
    matched_g, matched_p = set(), set()
    for gk, gpix in gt_segs.items():
        for pk, ppix in pred_segs.items():
            if gk[0] != pk[0]:
                continue
            inter = len(gpix & ppix)
            if inter == 0:
                continue
            iou = inter / len(gpix | ppix)
            if iou > 0.5:
                assert gk not in matched_g and pk not in matched_p
                tp += 1
                iou_sum += iou
                matched_g.add(gk)
                matched_p.add(pk)
    fn = len(gt_segs) - len(matched_g)
    fp = len(pred_segs) - len(matched_p)
    denom = tp + 0.5 * fp + 0.5 * fn
    if denom == 0:
        return 0.0, 0.0, 0.0, tp, fp, fn
    sq = iou_sum / tp if tp else 0.0
    rq = tp / denom
    return iou_sum / denom, sq, rq, tp, fp, fn


def constant_ssim(a_value, b_value, dynamic_range=255.0):
    """Closed-form SSIM of two constant images (variance terms vanish)."""
    c1 = (0.01 * dynamic_range) ** 2
    return (2 * a_value * b_value + c1) / (a_value ** 2 + b_value ** 2 + c1)
