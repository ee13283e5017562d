"""Evaluation: run the sampler per instruction, decode, score.

Panoptic quality follows the two-pass protocol: the model is queried once
with the semantic and once with the instance instruction, the decoded maps
are merged, and PQ is scored against the merged ground truth.  Sampler
noise is seeded per (sample, task), so results are independent of batch
composition and rerunning yields identical CSVs.

`oracle=True` replaces the model output with the ground-truth encodings —
an end-to-end probe of the codec + merge path with learning factored out.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn, pngio
from .codec import (
    PanopticLabel,
    build_color_table,
    decode_depth,
    decode_instance,
    decode_semantic,
    merge_panoptic,
)
from .config import RunConfig, config_hash
from .diffusion import ddim_sample, from_rgb, regression_predict
from .errors import EvaluationError
from .metrics import IoUAccumulator, PQAccumulator, rmse_depth, ssim
from .seeds import STREAM_EVAL, stream_rng
from .synthdata import SyntheticDataset, condition_image, encode_target
from .tasks import RESTORATION_TASKS, TASKS, task_index

_EVAL_CHUNK = 16


@dataclass
class EvalResult:
    metrics: dict           # name -> value, e.g. {"semantic_miou": ..., "panoptic_pq": ...}
    rows: list              # CSV rows (task, metric, value, split, config_hash)


def _predict_batch(model, cfg: RunConfig, sched, conds, instruction, rngs, ddim_steps):
    """uint8 (N, H, W, 3) predictions for one instruction over stacked conditions."""
    cond = np.stack([pngio.hwc_to_chw(c) for c in conds]).astype(np.float64)
    cond = (cond / 255.0 * 2.0 - 1.0).astype(nn.default_dtype())
    n = cond.shape[0]
    shape = (n, 3, cfg.target_hw, cfg.target_hw)
    tasks = np.full(n, task_index(instruction))
    if cfg.mode == "regression":
        x0 = regression_predict(model, cond, tasks, shape)
        rgb = np.floor((np.clip(x0, -1, 1) + 1) / 2 * 255 + 0.5).astype(np.uint8)
    else:
        x_init = np.stack([r.standard_normal(shape[1:]) for r in rngs])
        result = ddim_sample(model, cond, tasks, sched, shape, steps=ddim_steps, x_init=x_init)
        rgb = result.rgb
    return np.stack([pngio.chw_to_hwc(r) for r in rgb])


def evaluate(cfg: RunConfig, model, dataset: SyntheticDataset, split: str,
             oracle: bool = False, max_samples: int = 0, ddim_steps: int = 0,
             log=None) -> EvalResult:
    ids = dataset.split_ids(split)
    if max_samples:
        ids = ids[:max_samples]
    if not ids:
        raise EvaluationError(f"split {split!r} has no samples to evaluate")
    samples = [dataset.load(split, sid) for sid in ids]
    params = dataset.params
    sched = cfg.schedule()
    steps = ddim_steps or cfg.ddim_steps
    table = build_color_table(params.num_classes)
    thing_classes = set(range(1, params.num_classes))

    preds = {}
    for instruction in TASKS:
        outs = []
        for lo in range(0, len(samples), _EVAL_CHUNK):
            chunk = samples[lo:lo + _EVAL_CHUNK]
            if oracle:
                outs.extend(encode_target(s, instruction, params) for s in chunk)
            else:
                conds = [condition_image(s, instruction) for s in chunk]
                rngs = [stream_rng(cfg.seed, STREAM_EVAL, lo + k, task_index(instruction))
                        for k in range(len(chunk))]
                outs.extend(_predict_batch(model, cfg, sched, conds, instruction, rngs, steps))
        preds[instruction] = outs
        if log:
            log(f"evaluated {instruction} on {len(outs)} samples")

    iou = IoUAccumulator(params.num_classes)
    pq_acc = PQAccumulator()
    sq_err, sq_n = 0.0, 0
    ssim_sums = {t: 0.0 for t in RESTORATION_TASKS}

    for i, sample in enumerate(samples):
        sem_pred = decode_semantic(preds["semantic_segmentation"][i], table)
        iou.update(sem_pred, sample.semantic)

        inst_pred = decode_instance(preds["instance_segmentation"][i], params.max_instances)
        merged = merge_panoptic(sem_pred, inst_pred, thing_classes)
        gt_pan = PanopticLabel(sample.semantic.astype(np.int32), sample.instance.astype(np.int32))
        pq_acc.update(merged, gt_pan)

        depth_pred = decode_depth(preds["depth_estimation"][i], params.depth_range)
        diff = depth_pred - sample.depth
        sq_err += float((diff * diff).sum())
        sq_n += diff.size

        for t in RESTORATION_TASKS:
            ssim_sums[t] += ssim(preds[t][i], sample.clean_target)

    miou_val, _ = iou.result()
    pq_res = pq_acc.result()
    metrics = {
        "semantic_miou": miou_val,
        "panoptic_pq": pq_res.pq,
        "panoptic_sq": pq_res.sq,
        "panoptic_rq": pq_res.rq,
        "depth_rmse": float(np.sqrt(sq_err / sq_n)),
        "denoise_ssim": ssim_sums["denoise"] / len(samples),
        "derain_ssim": ssim_sums["derain"] / len(samples),
        "light_enhance_ssim": ssim_sums["light_enhance"] / len(samples),
    }
    h = config_hash(cfg)
    rows = [
        ("semantic_segmentation", "miou", metrics["semantic_miou"], split, h),
        ("panoptic", "pq", metrics["panoptic_pq"], split, h),
        ("panoptic", "sq", metrics["panoptic_sq"], split, h),
        ("panoptic", "rq", metrics["panoptic_rq"], split, h),
        ("depth_estimation", "rmse", metrics["depth_rmse"], split, h),
        ("denoise", "ssim", metrics["denoise_ssim"], split, h),
        ("derain", "ssim", metrics["derain_ssim"], split, h),
        ("light_enhance", "ssim", metrics["light_enhance_ssim"], split, h),
    ]
    return EvalResult(metrics, rows)


def blind_baselines(dataset: SyntheticDataset, split: str, max_samples: int = 0) -> dict:
    """Majority-class / mean-depth / identity-image reference scores."""
    ids = dataset.split_ids(split)
    if max_samples:
        ids = ids[:max_samples]
    samples = [dataset.load(split, sid) for sid in ids]
    params = dataset.params

    counts = np.zeros(params.num_classes, dtype=np.int64)
    depths = []
    for s in samples:
        vals, c = np.unique(s.semantic, return_counts=True)
        counts[vals] += c
        depths.append(s.depth.mean())
    majority = int(np.argmax(counts))
    mean_depth = float(np.mean(depths))

    iou = IoUAccumulator(params.num_classes)
    pq_acc = PQAccumulator()
    sq_err, sq_n = 0.0, 0
    ssim_sums = {t: 0.0 for t in RESTORATION_TASKS}
    t_hw = params.target_hw
    factor = params.condition_hw // t_hw
    for s in samples:
        const = np.full_like(s.semantic, majority)
        iou.update(const, s.semantic)
        pred_pan = PanopticLabel(const.astype(np.int32), np.zeros_like(const, dtype=np.int32))
        pq_acc.update(pred_pan, PanopticLabel(s.semantic.astype(np.int32), s.instance.astype(np.int32)))
        diff = mean_depth - s.depth
        sq_err += float((diff * diff).sum())
        sq_n += diff.size
        for t in RESTORATION_TASKS:
            small = s.corrupted[t].reshape(t_hw, factor, t_hw, factor, 3).mean(axis=(1, 3))
            small = np.clip(np.floor(small + 0.5), 0, 255).astype(np.uint8)
            ssim_sums[t] += ssim(small, s.clean_target)

    miou_val, _ = iou.result()
    return {
        "semantic_miou": miou_val,
        "panoptic_pq": pq_acc.result().pq,
        "depth_rmse": float(np.sqrt(sq_err / sq_n)),
        "denoise_ssim": ssim_sums["denoise"] / len(samples),
        "derain_ssim": ssim_sums["derain"] / len(samples),
        "light_enhance_ssim": ssim_sums["light_enhance"] / len(samples),
    }


def write_metrics_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task", "metric", "value", "split", "config_hash"])
        for task, metric, value, split, h in rows:
            w.writerow([task, metric, f"{value:.6f}", split, h])
