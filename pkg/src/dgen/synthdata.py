"""Deterministic synthetic multi-task scenes and the weighted task sampler.

A scene is a handful of colored geometric shapes (rectangle / ellipse /
triangle, semantic class = shape type) layered over a textured background.
Ground truth for every task comes from the same analytic geometry:
semantic and instance maps and depth-by-occlusion-order are rendered at
the target resolution, the input image at the condition resolution, and
the restoration "clean" target is the area-downsampled input.  Scenes
regenerate bit-identically from (seed, generator version).
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pngio
from .codec import (
    DepthRange,
    build_color_table,
    encode_depth,
    encode_instance,
    encode_semantic,
    label_components,
)
from .errors import ConfigError, DataError
from .seeds import STREAM_DATA, stream_rng
from .tasks import PANOPTIC_PAIR, RESTORATION_TASKS, task_index

GENERATOR_VERSION = "dgen-synth-1"

SHAPE_CLASSES = ("rectangle", "ellipse", "triangle")   # semantic ids 1..3; 0 is background stuff

# Instances below this fraction of the frame, or split by occlusion, force a
# redraw: the instance codec's speckle filter must never erase real objects.
_MIN_VISIBLE_FRAC = 0.004
_MAX_SCENE_TRIES = 200


@dataclass
class SceneParams:
    num_classes: int = 4          # background + len(SHAPE_CLASSES)
    max_instances: int = 8
    min_shapes: int = 2
    max_shapes: int = 3
    target_hw: int = 32
    condition_hw: int = 64
    depth_min: float = 1.0
    depth_max: float = 10.0

    def __post_init__(self):
        if self.num_classes != 1 + len(SHAPE_CLASSES):
            raise ConfigError(f"num_classes must be {1 + len(SHAPE_CLASSES)} (background + shape types)")
        if not 2 <= self.min_shapes <= self.max_shapes <= self.max_instances:
            raise ConfigError(f"need 2 <= min_shapes <= max_shapes <= max_instances, got "
                              f"{self.min_shapes}/{self.max_shapes}/{self.max_instances}")
        if self.condition_hw % self.target_hw:
            raise ConfigError(f"condition_hw {self.condition_hw} must be a multiple of target_hw {self.target_hw}")

    @property
    def depth_range(self) -> DepthRange:
        return DepthRange(self.depth_min, self.depth_max)


@dataclass
class SceneSample:
    image: np.ndarray        # (cond, cond, 3) uint8 clean input
    semantic: np.ndarray     # (target, target) int32
    instance: np.ndarray     # (target, target) int32, 0 = background
    depth: np.ndarray        # (target, target) float64
    corrupted: dict          # task -> (cond, cond, 3) uint8
    clean_target: np.ndarray  # (target, target, 3) uint8, area-downsampled image


def _grid(hw: int):
    ax = (np.arange(hw) + 0.5) / hw
    return np.meshgrid(ax, ax, indexing="ij")   # (row=y, col=x) in [0,1]


def _shape_mask(shape: dict, hw: int) -> np.ndarray:
    yy, xx = _grid(hw)
    kind = shape["kind"]
    if kind == "rectangle":
        cy, cx = shape["center"]
        hy, hx = shape["half"]
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    if kind == "ellipse":
        cy, cx = shape["center"]
        hy, hx = shape["half"]
        return ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
    if kind == "triangle":
        pts = shape["points"]
        mask = np.ones((hw, hw), dtype=bool)
        for i in range(3):
            y0, x0 = pts[i]
            y1, x1 = pts[(i + 1) % 3]
            # keep the half-plane containing the opposite vertex
            side = (xx - x0) * (y1 - y0) - (yy - y0) * (x1 - x0)
            y2, x2 = pts[(i + 2) % 3]
            ref = (x2 - x0) * (y1 - y0) - (y2 - y0) * (x1 - x0)
            mask &= (side * ref) >= 0
        return mask
    raise ConfigError(f"unknown shape kind {kind!r}")


def _draw_shape(rng: np.random.Generator) -> dict:
    kind = SHAPE_CLASSES[rng.integers(len(SHAPE_CLASSES))]
    center = rng.uniform(0.25, 0.75, size=2)
    shape = {"kind": kind, "center": center, "class": SHAPE_CLASSES.index(kind) + 1}
    if kind in ("rectangle", "ellipse"):
        shape["half"] = rng.uniform(0.12, 0.26, size=2)
    else:
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=3))
        if np.min(np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))) < 0.7:
            angles = np.array([0.0, 2.2, 4.4]) + rng.uniform(0, 2 * np.pi)
        radius = rng.uniform(0.16, 0.30, size=3)
        shape["points"] = np.stack([shape["center"][0] + radius * np.sin(angles),
                                    shape["center"][1] + radius * np.cos(angles)], axis=1)
    # saturated fill color over a muted background keeps shapes visible
    hue = rng.uniform(0, 1)
    sat = rng.uniform(0.55, 1.0)
    val = rng.uniform(0.55, 1.0)
    shape["color"] = _hsv_to_rgb(hue, sat, val)
    return shape


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array([int(round(255 * c)) for c in rgb], dtype=np.float64)


def _background(rng: np.random.Generator, hw: int) -> np.ndarray:
    c0 = rng.uniform(20, 90, size=3)
    c1 = rng.uniform(20, 90, size=3)
    yy, xx = _grid(hw)
    ramp = (yy + xx)[..., None] / 2.0
    base = c0 * (1 - ramp) + c1 * ramp
    base += rng.uniform(-12, 12, size=(hw, hw, 3))
    return base


def _region_ok(region: np.ndarray, min_pixels: int) -> bool:
    count = int(region.sum())
    if count < min_pixels:
        return False
    comp = label_components(region.astype(np.int32))
    return len(np.unique(comp[region])) == 1


def generate_scene(rng_or_seed, params: SceneParams) -> SceneSample:
    """One deterministic scene; redraws until every instance stays visible,
    connected, and large enough to survive the codec's speckle filter."""
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else np.random.default_rng(rng_or_seed)
    t_hw, c_hw = params.target_hw, params.condition_hw
    min_pixels = max(4, int(np.ceil(_MIN_VISIBLE_FRAC * t_hw * t_hw)))

    for _ in range(_MAX_SCENE_TRIES):
        n = int(rng.integers(params.min_shapes, params.max_shapes + 1))
        shapes = [_draw_shape(rng) for _ in range(n)]
        background = _background(rng, c_hw)

        semantic = np.zeros((t_hw, t_hw), dtype=np.int32)
        instance = np.zeros((t_hw, t_hw), dtype=np.int32)
        depth = np.full((t_hw, t_hw), params.depth_max, dtype=np.float64)
        image = background.copy()

        span = params.depth_max - params.depth_min
        for j, shape in enumerate(shapes):         # j = 0 is backmost
            mask_t = _shape_mask(shape, t_hw)
            mask_c = _shape_mask(shape, c_hw)
            semantic[mask_t] = shape["class"]
            instance[mask_t] = j + 1
            depth[mask_t] = params.depth_min + span * (n - j) / (n + 1)
            image[mask_c] = shape["color"]

        ok = all(_region_ok(instance == j + 1, min_pixels) for j in range(n))
        if not ok:
            continue

        image = np.clip(image, 0, 255).astype(np.uint8)
        factor = c_hw // t_hw
        clean_target = image.reshape(t_hw, factor, t_hw, factor, 3).mean(axis=(1, 3))
        clean_target = np.clip(np.floor(clean_target + 0.5), 0, 255).astype(np.uint8)

        corrupted = {
            "denoise": corrupt_noise(image, sigma=25.0, seed=int(rng.integers(2 ** 31))),
            "derain": corrupt_rain(image, density=0.5, angle_deg=65.0, seed=int(rng.integers(2 ** 31))),
            "light_enhance": corrupt_dark(image, gain=0.35, gamma=1.3),
        }
        return SceneSample(image, semantic, instance, depth, corrupted, clean_target)

    raise DataError(f"could not compose a scene with {params.min_shapes}..{params.max_shapes} "
                    f"visible instances after {_MAX_SCENE_TRIES} tries")


# -- corruptions (pure in (image, params, seed)) --------------------------------


def corrupt_noise(img: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    if sigma < 0:
        raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.asarray(img, dtype=np.uint8).copy()
    rng = np.random.default_rng(seed)
    out = np.asarray(img, dtype=np.float64) + rng.normal(0.0, sigma, size=np.shape(img))
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def corrupt_rain(img: np.ndarray, density: float, angle_deg: float = 65.0, seed: int = 0) -> np.ndarray:
    """Bright line streaks at a fixed angle; `density` in [0, 1] scales the count."""
    if not 0 <= density <= 1:
        raise ConfigError(f"rain density must be in [0, 1], got {density}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if density == 0:
        return img.astype(np.uint8)
    rng = np.random.default_rng(seed)
    overlay = np.zeros((h, w))
    count = max(1, int(density * h * w / 40))
    dy, dx = np.cos(np.radians(angle_deg)), np.sin(np.radians(angle_deg))
    for _ in range(count):
        r = rng.uniform(0, h)
        c = rng.uniform(0, w)
        length = rng.uniform(h / 8, h / 3)
        strength = rng.uniform(60, 150)
        steps = int(length) + 1
        rr = np.clip((r + dy * np.arange(steps)).astype(int), 0, h - 1)
        cc = np.clip((c + dx * np.arange(steps)).astype(int), 0, w - 1)
        overlay[rr, cc] = np.maximum(overlay[rr, cc], strength)
    out = img + overlay[..., None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def corrupt_dark(img: np.ndarray, gain: float, gamma: float = 1.3) -> np.ndarray:
    """Multiplicative darkening with a mild gamma; gain=1, gamma=1 is the identity."""
    if not 0 < gain <= 1:
        raise ConfigError(f"darkening gain must be in (0, 1], got {gain}")
    x = np.asarray(img, dtype=np.float64) / 255.0
    out = 255.0 * (x * gain) ** gamma
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


_CORRUPTION_FILES = {"denoise": "noise", "derain": "rain", "light_enhance": "dark"}


# -- on-disk dataset -------------------------------------------------------------


def generate_dataset(root, seed: int, counts: dict, params: SceneParams) -> dict:
    """Write `<root>/<split>/<id>/{input,sem,inst,depth,noise,rain,dark}.png`
    plus `<root>/manifest.json`; returns the manifest dict."""
    root = Path(root)
    if not counts or all(v == 0 for v in counts.values()):
        raise DataError("refusing to write an empty dataset (no samples requested)")
    rngspec = params.depth_range
    manifest = {
        "version": GENERATOR_VERSION,
        "seed": int(seed),
        "params": {
            "num_classes": params.num_classes,
            "max_instances": params.max_instances,
            "min_shapes": params.min_shapes,
            "max_shapes": params.max_shapes,
            "target_hw": params.target_hw,
            "condition_hw": params.condition_hw,
            "depth_min": params.depth_min,
            "depth_max": params.depth_max,
        },
        "splits": {},
    }
    for split_idx, (split, count) in enumerate(sorted(counts.items())):
        ids = []
        for i in range(count):
            rng = stream_rng(seed, STREAM_DATA, split_idx, i)
            sample = generate_scene(rng, params)
            sid = f"{i:05d}"
            base = root / split / sid
            pngio.write_rgb(base / "input.png", sample.image)
            pngio.write_gray16(base / "sem.png", sample.semantic)
            pngio.write_gray16(base / "inst.png", sample.instance)
            q = np.round((sample.depth - rngspec.min_depth) / rngspec.span * 65535.0).astype(np.uint16)
            pngio.write_gray16(base / "depth.png", q)
            for task, fname in _CORRUPTION_FILES.items():
                pngio.write_rgb(base / f"{fname}.png", sample.corrupted[task])
            ids.append(sid)
        manifest["splits"][split] = ids
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


class SyntheticDataset:
    """Loader over a generated dataset; samples cache in memory after first touch."""

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.exists():
            raise DataError(f"no manifest.json under {self.root}")
        self.manifest = json.loads(mpath.read_text())
        p = self.manifest["params"]
        self.params = SceneParams(**p)
        self._cache: dict = {}

    def split_ids(self, split: str) -> list:
        if split not in self.manifest["splits"]:
            raise DataError(f"split {split!r} not in manifest (have {sorted(self.manifest['splits'])})")
        ids = self.manifest["splits"][split]
        if not ids:
            raise DataError(f"split {split!r} is empty")
        return ids

    def load(self, split: str, sid: str) -> SceneSample:
        key = (split, sid)
        if key in self._cache:
            return self._cache[key]
        base = self.root / split / sid
        if not base.exists():
            raise DataError(f"sample directory missing: {base}")
        image = pngio.read_rgb(base / "input.png")
        semantic = pngio.read_gray16(base / "sem.png").astype(np.int32)
        instance = pngio.read_gray16(base / "inst.png").astype(np.int32)
        rngspec = self.params.depth_range
        depth = rngspec.min_depth + rngspec.span * pngio.read_gray16(base / "depth.png") / 65535.0
        corrupted = {}
        for task, fname in _CORRUPTION_FILES.items():
            f = base / f"{fname}.png"
            if not f.exists():
                raise DataError(f"sample {split}/{sid} is missing modality file {f.name}")
            corrupted[task] = pngio.read_rgb(f)
        t_hw = self.params.target_hw
        factor = self.params.condition_hw // t_hw
        clean = image.reshape(t_hw, factor, t_hw, factor, 3).mean(axis=(1, 3))
        clean = np.clip(np.floor(clean + 0.5), 0, 255).astype(np.uint8)
        sample = SceneSample(image, semantic, instance, depth, corrupted, clean)
        self._cache[key] = sample
        return sample


# -- task sampling ----------------------------------------------------------------

# Source-level weights: panoptic counts once with double mass and expands to
# the (semantic, instance) instruction pair at draw time.
DEFAULT_TASK_WEIGHTS = {
    "depth_estimation": 1.0,
    "semantic_segmentation": 1.0,
    "panoptic": 2.0,
    "denoise": 1.0,
    "derain": 1.0,
    "light_enhance": 1.0,
}


class TaskSampler:
    def __init__(self, weights: dict = None):
        weights = dict(DEFAULT_TASK_WEIGHTS if weights is None else weights)
        if not weights or any(v < 0 for v in weights.values()) or sum(weights.values()) <= 0:
            raise ConfigError(f"invalid task weights {weights}")
        self.sources = sorted(weights)
        w = np.array([weights[s] for s in self.sources], dtype=np.float64)
        self.probs = w / w.sum()

    def draw_source(self, rng: np.random.Generator) -> str:
        return self.sources[rng.choice(len(self.sources), p=self.probs)]

    def draw(self, rng: np.random.Generator) -> tuple:
        """(source task, instruction); panoptic splits evenly over its pair."""
        source = self.draw_source(rng)
        if source == "panoptic":
            return source, PANOPTIC_PAIR[rng.integers(2)]
        return source, source


# -- batch assembly -----------------------------------------------------------------


def encode_target(sample: SceneSample, instruction: str, params: SceneParams) -> np.ndarray:
    """Ground truth for `instruction` as an (H, W, 3) uint8 raster at target size."""
    if instruction == "semantic_segmentation":
        return encode_semantic(sample.semantic, build_color_table(params.num_classes))
    if instruction == "instance_segmentation":
        return encode_instance(sample.instance, params.max_instances)
    if instruction == "depth_estimation":
        return encode_depth(sample.depth, params.depth_range)
    if instruction in RESTORATION_TASKS:
        return sample.clean_target
    raise ConfigError(f"unknown instruction {instruction!r}")


def condition_image(sample: SceneSample, instruction: str) -> np.ndarray:
    """The model input for `instruction`: corrupted for restorations, clean otherwise."""
    if instruction in RESTORATION_TASKS:
        return sample.corrupted[instruction]
    return sample.image


def sample_batch(dataset: SyntheticDataset, split: str, sampler: TaskSampler,
                 batch_size: int, rng: np.random.Generator):
    """Draw a training batch: (condition (N,3,Hc,Wc), target (N,3,Ht,Wt)) in [-1, 1]
    float plus per-example instruction indices."""
    ids = dataset.split_ids(split)
    conds, targets, tasks = [], [], []
    for _ in range(batch_size):
        _, instruction = sampler.draw(rng)
        sid = ids[rng.integers(len(ids))]
        sample = dataset.load(split, sid)
        conds.append(pngio.hwc_to_chw(condition_image(sample, instruction)))
        targets.append(pngio.hwc_to_chw(encode_target(sample, instruction, dataset.params)))
        tasks.append(task_index(instruction))
    cond = np.stack(conds).astype(np.float64) / 255.0 * 2.0 - 1.0
    target = np.stack(targets).astype(np.float64) / 255.0 * 2.0 - 1.0
    return cond, target, np.array(tasks, dtype=int)
