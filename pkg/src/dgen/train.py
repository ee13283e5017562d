"""Joint multi-task training loop.

Per-step randomness comes from the stream (seed, STREAM_TRAIN, step), so a
run resumed from any checkpoint continues bit-identically.  A non-finite
loss aborts immediately; previously written checkpoints stay on disk.
"""

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .config import RunConfig, config_hash
from .diffusion import epsilon_loss, regression_loss
from .errors import ConfigError, TrainingError
from .model import Denoiser
from .nn import OptimizerState, adamw_step
from .seeds import STREAM_INIT, STREAM_TRAIN, stream_rng
from .synthdata import SyntheticDataset, TaskSampler, sample_batch


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    final_loss: float
    steps: int


def build_model(cfg: RunConfig) -> Denoiser:
    return Denoiser(cfg.generalist(), stream_rng(cfg.seed, STREAM_INIT))


def _check_dataset(cfg: RunConfig, dataset: SyntheticDataset) -> None:
    p = dataset.params
    if p.target_hw != cfg.target_hw or p.condition_hw != cfg.condition_hw:
        raise ConfigError(f"dataset resolutions ({p.target_hw}, {p.condition_hw}) do not match "
                          f"config ({cfg.target_hw}, {cfg.condition_hw})")


def train(cfg: RunConfig, resume=None, log=None) -> TrainResult:
    out_dir = Path(cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = SyntheticDataset(cfg.data_root)
    _check_dataset(cfg, dataset)

    model = build_model(cfg)
    sched = cfg.schedule() if cfg.mode == "diffusion" else None
    opt = OptimizerState.for_store(
        model.store, lr=cfg.learning_rate, warmup_steps=cfg.warmup_steps,
        weight_decay=cfg.weight_decay, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    sampler = TaskSampler()

    start_step = 0
    if resume is not None:
        ckpt_cfg, step, params, opt_blob = load_checkpoint(resume)
        if config_hash(RunConfig.from_dict(ckpt_cfg)) != config_hash(cfg):
            raise ConfigError(f"checkpoint {resume} was written under a different config")
        restore_into(model.store, params, opt, opt_blob)
        start_step = step

    cfg.save(out_dir / "config.json")
    log_path = out_dir / "loss_log.csv"
    new_log = start_step == 0 or not log_path.exists()
    log_file = open(log_path, "w" if new_log else "a", newline="")
    writer = csv.writer(log_file)
    if new_log:
        writer.writerow(["step", "loss", "lr", "elapsed_s"])

    ckpt_path = out_dir / "checkpoint_last.dgen"
    t0 = time.time()
    loss_val = float("nan")
    try:
        for step in range(start_step + 1, cfg.total_steps + 1):
            rng = stream_rng(cfg.seed, STREAM_TRAIN, step)
            cond, target, tasks = sample_batch(dataset, "train", sampler, cfg.batch_size, rng)
            cond = cond.astype(nn.default_dtype())
            model.store.zero_grad()
            if cfg.mode == "diffusion":
                loss, _ = epsilon_loss(model, target, cond, tasks, sched, rng)
            else:
                loss = regression_loss(model, target, cond, tasks)
            loss.backward()
            lr = adamw_step(model.store, opt)
            loss_val = float(loss.data)
            if step % cfg.log_every == 0 or step == cfg.total_steps:
                writer.writerow([step, f"{loss_val:.6f}", f"{lr:.3e}", f"{time.time() - t0:.1f}"])
                log_file.flush()
                if log:
                    log(f"step {step}/{cfg.total_steps} loss {loss_val:.4f} lr {lr:.2e}")
            if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                save_checkpoint(ckpt_path, model.store, cfg.to_json(), step, opt)
    except TrainingError:
        log_file.close()
        raise TrainingError(f"training aborted at a non-finite loss; last good checkpoint: "
                            f"{ckpt_path if ckpt_path.exists() else 'none written yet'}")
    log_file.close()
    return TrainResult(ckpt_path, log_path, loss_val, cfg.total_steps)


def load_model(ckpt_path) -> tuple:
    """(model, RunConfig, step) reconstructed from a checkpoint."""
    ckpt_cfg, step, params, _ = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_dict(ckpt_cfg)
    model = build_model(cfg)
    restore_into(model.store, params)
    return model, cfg, step
