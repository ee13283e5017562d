"""Command-line surface: synth / train / sample / eval / ablate / codec.

Every command is reproducible from (config, --seed); failures exit nonzero
with a single machine-parsable line `error: <ErrorClass>: <message>`.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import nn, pngio
from .codec import (
    DepthRange,
    build_color_table,
    decode_depth,
    decode_instance,
    decode_semantic,
    encode_depth,
    encode_instance,
    encode_semantic,
    latent_roundtrip_probe,
)
from .config import RunConfig, config_hash
from .diffusion import ddim_sample, regression_predict
from .errors import ConfigError, DataError, DgenError
from .evaluate import blind_baselines, evaluate, write_metrics_csv
from .seeds import STREAM_SAMPLE, stream_rng
from .synthdata import SceneParams, SyntheticDataset, generate_dataset
from .tasks import PROMPTS, RESTORATION_TASKS, TASKS, task_index
from .train import load_model, train


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgen",
                                description="Desk-scale diffusion generalist for dense vision tasks")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic multi-task dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, required=True, help="training samples")
    sp.add_argument("--val-count", type=int, default=0)
    sp.add_argument("--target-hw", type=int, default=32)
    sp.add_argument("--condition-hw", type=int, default=64)
    sp.add_argument("--min-shapes", type=int, default=2)
    sp.add_argument("--max-shapes", type=int, default=3)
    sp.add_argument("--max-instances", type=int, default=8)

    tp = sub.add_parser("train", help="train the generalist")
    tp.add_argument("--config", help="JSON config file (defaults otherwise)")
    tp.add_argument("--data", help="dataset root (overrides config)")
    tp.add_argument("--out", help="output directory (overrides config)")
    tp.add_argument("--seed", type=int, help="root seed (overrides config)")
    tp.add_argument("--resume", help="checkpoint to continue from")

    mp = sub.add_parser("sample", help="run one instruction on one image")
    mp.add_argument("--ckpt", required=True)
    mp.add_argument("--input", required=True, help="RGB PNG condition image")
    mp.add_argument("--instruction", required=True)
    mp.add_argument("--steps", type=int, default=0, help="DDIM steps (default: config)")
    mp.add_argument("--trace-stride", type=int, default=0, help="dump a frame every N steps")
    mp.add_argument("--seed", type=int, default=0)
    mp.add_argument("--out", required=True, help="output directory")

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", default="val")
    ep.add_argument("--out", required=True, help="metrics CSV path")
    ep.add_argument("--oracle", action="store_true",
                    help="score ground-truth encodings instead of the model (codec/merge probe)")
    ep.add_argument("--max-samples", type=int, default=0)
    ep.add_argument("--steps", type=int, default=0)
    ep.add_argument("--baselines", action="store_true", help="also print blind baselines")

    ap = sub.add_parser("ablate", help="sweep one config axis, train + eval per value")
    ap.add_argument("--config", help="base JSON config")
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--axis", required=True,
                    choices=["signal_scale", "batch", "resolution", "conditioning", "mode"])
    ap.add_argument("--values", required=True, help="comma-separated axis values")
    ap.add_argument("--seed", type=int, default=0)

    cp = sub.add_parser("codec", help="standalone codec transforms")
    cp.add_argument("action", choices=["encode", "decode", "probe"])
    cp.add_argument("--kind", choices=["semantic", "instance", "depth"], default="semantic")
    cp.add_argument("--input", required=True)
    cp.add_argument("--output", required=True)
    cp.add_argument("--classes", type=int, default=4)
    cp.add_argument("--max-instances", type=int, default=8)
    cp.add_argument("--depth-min", type=float, default=1.0)
    cp.add_argument("--depth-max", type=float, default=10.0)
    cp.add_argument("--factor", type=int, default=8, help="probe down/upsample factor")
    return p


def cmd_synth(args) -> int:
    params = SceneParams(max_instances=args.max_instances, min_shapes=args.min_shapes,
                         max_shapes=args.max_shapes, target_hw=args.target_hw,
                         condition_hw=args.condition_hw)
    counts = {"train": args.count}
    if args.val_count:
        counts["val"] = args.val_count
    manifest = generate_dataset(args.out, args.seed, counts, params)
    for split, ids in manifest["splits"].items():
        print(f"{split}: {len(ids)} scenes x {len(TASKS)} instructions "
              f"({', '.join(TASKS)})")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return 0


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "data", None):
        cfg.data_root = args.data
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_root:
        raise ConfigError("no dataset root: pass --data or set data_root in the config")
    result = train(cfg, resume=args.resume, log=print)
    print(f"finished {result.steps} steps, final loss {result.final_loss:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.log_path}")
    return 0


def cmd_sample(args) -> int:
    model, cfg, _ = load_model(args.ckpt)
    instruction = args.instruction
    task_index(instruction)  # raises with the valid list
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rgb = pngio.read_rgb(args.input)
    cond = pngio.hwc_to_chw(rgb).astype(np.float64)[None] / 255.0 * 2.0 - 1.0
    if cond.shape[2] != cfg.condition_hw or cond.shape[3] != cfg.condition_hw:
        t = nn.interpolate(nn.Tensor(cond), (cfg.condition_hw, cfg.condition_hw), mode="bilinear")
        cond = t.data
    cond = cond.astype(nn.default_dtype())

    steps = args.steps or cfg.ddim_steps
    shape = (1, 3, cfg.target_hw, cfg.target_hw)
    tasks = np.array([task_index(instruction)])
    if cfg.mode == "regression":
        x0 = regression_predict(model, cond, tasks, shape)
        out_rgb = np.floor((np.clip(x0, -1, 1) + 1) / 2 * 255 + 0.5).astype(np.uint8)
        frames = []
    else:
        rng = stream_rng(args.seed, STREAM_SAMPLE)
        result = ddim_sample(model, cond, tasks, cfg.schedule(), shape, steps=steps,
                             rng=rng, trace_stride=args.trace_stride)
        out_rgb, frames = result.rgb, result.frames

    raster = pngio.chw_to_hwc(out_rgb[0])
    pngio.write_rgb(out_dir / "output_rgb.png", raster)
    for step_idx, frame in frames:
        pngio.write_rgb(out_dir / f"trace_{step_idx:03d}.png", pngio.chw_to_hwc(frame[0]))

    if instruction == "semantic_segmentation":
        labels = decode_semantic(raster, build_color_table(4))
        pngio.write_gray16(out_dir / "decoded_labels.png", labels)
    elif instruction == "instance_segmentation":
        inst = decode_instance(raster, 8)
        pngio.write_gray16(out_dir / "decoded_instances.png", inst)
    elif instruction == "depth_estimation":
        rng_d = DepthRange(1.0, 10.0)
        depth = decode_depth(raster, rng_d)
        q = np.round((depth - rng_d.min_depth) / rng_d.span * 65535.0).astype(np.uint16)
        pngio.write_gray16(out_dir / "decoded_depth.png", q)
        (out_dir / "decoded_depth.json").write_text(json.dumps(
            {"min_depth": rng_d.min_depth, "max_depth": rng_d.max_depth,
             "scale": "value = min + (max-min) * raw / 65535"}))
    print(f"prompt: {PROMPTS[instruction]!r}")
    print(f"wrote {out_dir / 'output_rgb.png'}" + (f" and {len(frames)} trace frames" if frames else ""))
    return 0


def cmd_eval(args) -> int:
    model, cfg, _ = (None, None, None)
    if args.oracle:
        # the oracle path still needs the config for sizes/seeds
        _, cfg, _ = load_model(args.ckpt)
        model = None
    else:
        model, cfg, _ = load_model(args.ckpt)
    dataset = SyntheticDataset(args.data)
    result = evaluate(cfg, model, dataset, args.split, oracle=args.oracle,
                      max_samples=args.max_samples, ddim_steps=args.steps, log=print)
    write_metrics_csv(args.out, result.rows)
    for k, v in result.metrics.items():
        print(f"{k}: {v:.4f}")
    if args.baselines:
        for k, v in blind_baselines(dataset, args.split, args.max_samples).items():
            print(f"baseline {k}: {v:.4f}")
    print(f"metrics CSV: {args.out}")
    return 0


_AXIS_SETTERS = {
    "signal_scale": lambda cfg, v: setattr(cfg, "signal_scale", float(v)),
    "batch": lambda cfg, v: setattr(cfg, "batch_size", int(v)),
    "conditioning": lambda cfg, v: setattr(cfg, "conditioning_mode", str(v)),
    "mode": lambda cfg, v: setattr(cfg, "mode", str(v)),
}


def _set_resolution(cfg: RunConfig, v):
    cfg.target_hw = int(v)
    cfg.condition_hw = 2 * int(v)


_AXIS_SETTERS["resolution"] = _set_resolution


def cmd_ablate(args) -> int:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    base.data_root = args.data
    base.seed = args.seed
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("no axis values given")

    rows, failures = [], []
    for v in values:
        cfg = RunConfig.from_dict(base.to_dict())
        _AXIS_SETTERS[args.axis](cfg, v)
        cfg.out_dir = str(out_root / f"{args.axis}_{v}")
        print(f"[ablate] {args.axis}={v} -> {cfg.out_dir}")
        try:
            if args.axis == "resolution":
                cfg.data_root = str(_resolution_dataset(base.data_root, int(v), out_root))
            result = train(cfg)
            dataset = SyntheticDataset(cfg.data_root)
            ev = evaluate(cfg, load_model(result.checkpoint_path)[0], dataset, "val",
                          max_samples=cfg.eval_max_samples)
            for task, metric, value, split, h in ev.rows:
                rows.append((args.axis, v, task, metric, value, split, h))
        except DgenError as e:
            failures.append((v, f"{type(e).__name__}: {e}"))
            print(f"[ablate] {args.axis}={v} failed ({type(e).__name__}), continuing")

    csv_path = out_root / "sweep.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["axis", "value", "task", "metric", "value_metric", "split", "config_hash"])
        for r in rows:
            w.writerow(r)
        for v, msg in failures:
            w.writerow([args.axis, v, "FAILED", msg, "", "", ""])
    _sweep_charts(rows, args.axis, out_root)
    print(f"sweep CSV: {csv_path}")
    return 0 if rows else 1


def _resolution_dataset(base_root: str, target_hw: int, out_root: Path) -> Path:
    """Resolution sweeps need a dataset per target size; regenerate the base
    dataset's scenes (same seed/counts) at the requested resolution."""
    base = SyntheticDataset(base_root)
    if base.params.target_hw == target_hw:
        return Path(base_root)
    derived = out_root / f"data_{target_hw}"
    if not (derived / "manifest.json").exists():
        p = base.params
        params = SceneParams(max_instances=p.max_instances, min_shapes=p.min_shapes,
                             max_shapes=p.max_shapes, target_hw=target_hw,
                             condition_hw=2 * target_hw,
                             depth_min=p.depth_min, depth_max=p.depth_max)
        counts = {s: len(ids) for s, ids in base.manifest["splits"].items()}
        generate_dataset(derived, base.manifest["seed"], counts, params)
    return derived


def _sweep_charts(rows, axis, out_root: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_metric = {}
    for _, v, task, metric, value, _, _ in rows:
        by_metric.setdefault(f"{task}_{metric}", []).append((v, value))
    for name, pairs in by_metric.items():
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(range(len(xs)), ys, marker="o")
        ax.set_xticks(range(len(xs)), xs)
        ax.set_xlabel(axis)
        ax.set_ylabel(name)
        fig.tight_layout()
        fig.savefig(out_root / f"chart_{name}.png", dpi=100)
        plt.close(fig)


def cmd_codec(args) -> int:
    if args.action == "encode":
        if args.kind == "semantic":
            mask = pngio.read_gray16(args.input)
            out = encode_semantic(mask, build_color_table(args.classes))
        elif args.kind == "instance":
            out = encode_instance(pngio.read_gray16(args.input), args.max_instances)
        else:
            rng_d = DepthRange(args.depth_min, args.depth_max)
            raw = pngio.read_gray16(args.input)
            depth = rng_d.min_depth + rng_d.span * raw / 65535.0
            out = encode_depth(depth, rng_d)
        pngio.write_rgb(args.output, out)
    elif args.action == "decode":
        rgb = pngio.read_rgb(args.input)
        if args.kind == "semantic":
            pngio.write_gray16(args.output, decode_semantic(rgb, build_color_table(args.classes)))
        elif args.kind == "instance":
            pngio.write_gray16(args.output, decode_instance(rgb, args.max_instances))
        else:
            rng_d = DepthRange(args.depth_min, args.depth_max)
            depth = decode_depth(rgb, rng_d)
            pngio.write_gray16(args.output, np.round((depth - rng_d.min_depth) / rng_d.span * 65535.0).astype(np.uint16))
    else:  # probe: encode, round-trip through the lossy surrogate, decode, count labels
        mask = pngio.read_gray16(args.input)
        table = build_color_table(args.classes)
        clean_rgb = encode_semantic(mask, table)
        before = len(np.unique(decode_semantic(clean_rgb, table)))
        degraded = latent_roundtrip_probe(clean_rgb, factor=args.factor)
        after_labels = decode_semantic(degraded, table)
        after = len(np.unique(after_labels))
        pngio.write_gray16(args.output, after_labels)
        print(f"labels_before={before} labels_after={after} factor={args.factor}")
    print(f"wrote {args.output}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "codec": cmd_codec,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DgenError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
