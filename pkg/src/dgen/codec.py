"""Task ground truth <-> RGB codecs.

Dense-prediction targets are re-encoded as plain RGB images so a single
conditional image generator can produce them: class maps through a
base-b color table, depth through a linear 8-bit ramp repeated across
channels, instances through spatially-ordered colors.  Decoding is
nearest-neighbor in RGB space, which tolerates per-channel noise up to
half the table margin.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

VOID_LABEL = 255          # reserved "ignore" id in label maps
BACKGROUND_INSTANCE = 0   # instance id of non-instance pixels


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


# -- color table --------------------------------------------------------------


@dataclass(frozen=True)
class ColorTable:
    num_labels: int
    base: int
    margin: int
    colors: np.ndarray       # (C, 3) uint8
    sentinel: tuple          # void / background color, never in `colors`

    def palette_with_sentinel(self) -> np.ndarray:
        """(C+1, 3) int array; row C is the sentinel."""
        return np.vstack([self.colors.astype(np.int64), np.array(self.sentinel, dtype=np.int64)])


def build_color_table(num_labels: int) -> ColorTable:
    """Deterministic class->color map: index written as 3 digits base ceil(C^(1/3)),
    each digit scaled by the margin int(256/base)."""
    if not 1 <= num_labels <= 100_000:
        raise ConfigError(f"number of labels must be in [1, 100000], got {num_labels}")
    base = 1
    while base ** 3 < num_labels:
        base += 1
    margin = 256 // base
    idx = np.arange(num_labels, dtype=np.int64)
    colors = np.stack([
        (idx // (base * base)) * margin,
        ((idx // base) % base) * margin,
        (idx % base) * margin,
    ], axis=1)
    sentinel = (255, 255, 255)
    if (base - 1) * margin >= 255:
        sentinel = (255, 254, 255)  # plain white could collide with the table
    return ColorTable(num_labels, base, margin, colors.astype(np.uint8), sentinel)


@dataclass(frozen=True)
class DepthRange:
    min_depth: float
    max_depth: float

    def __post_init__(self):
        if not (np.isfinite(self.min_depth) and np.isfinite(self.max_depth)):
            raise ConfigError(f"depth range must be finite, got [{self.min_depth}, {self.max_depth}]")
        if self.max_depth <= self.min_depth:
            raise ConfigError(f"degenerate depth range [{self.min_depth}, {self.max_depth}]")

    @property
    def span(self) -> float:
        return self.max_depth - self.min_depth


# -- semantic -----------------------------------------------------------------


def encode_semantic(mask: np.ndarray, table: ColorTable) -> np.ndarray:
    """Label map (H, W) -> RGB uint8 (H, W, 3); void pixels get the sentinel color."""
    mask = np.asarray(mask)
    void = mask == VOID_LABEL
    bad = (~void) & (mask >= table.num_labels)
    if bad.any():
        h, w = np.argwhere(bad)[0]
        raise DataError(f"label {int(mask[h, w])} at pixel ({h}, {w}) out of range "
                        f"for a {table.num_labels}-class table")
    palette = table.palette_with_sentinel()
    flat = np.where(void, table.num_labels, mask).astype(np.int64)
    return palette[flat].astype(np.uint8)


def nearest_color(rgb: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Per-pixel argmin of squared RGB distance; ties go to the lowest index."""
    px = np.asarray(rgb, dtype=np.int64)
    d = px[..., None, :] - palette[None, None, :, :]
    return np.argmin((d * d).sum(axis=-1), axis=-1)


def decode_semantic(rgb: np.ndarray, table: ColorTable) -> np.ndarray:
    """RGB (H, W, 3) -> label map via nearest table color (total function)."""
    return nearest_color(rgb, table.colors.astype(np.int64)).astype(np.int32)


# -- depth --------------------------------------------------------------------


def encode_depth(depth: np.ndarray, rng: DepthRange) -> np.ndarray:
    """Clamp into range, map linearly onto [0, 255] (round half away from zero),
    replicate across the three channels."""
    d = np.clip(np.asarray(depth, dtype=np.float64), rng.min_depth, rng.max_depth)
    v = _round_half_away(255.0 * (d - rng.min_depth) / rng.span).astype(np.uint8)
    return np.repeat(v[..., None], 3, axis=-1)


def decode_depth(rgb: np.ndarray, rng: DepthRange) -> np.ndarray:
    mean = np.asarray(rgb, dtype=np.float64).mean(axis=-1)
    return rng.min_depth + rng.span * mean / 255.0


# -- instances ----------------------------------------------------------------


def _instance_raster_order(instances: np.ndarray) -> list:
    """Instance ids sorted by (center_row, center_col, id) of their pixel masses."""
    ids = [int(i) for i in np.unique(instances) if i != BACKGROUND_INSTANCE]
    keyed = []
    for i in ids:
        rows, cols = np.nonzero(instances == i)
        keyed.append((rows.mean(), cols.mean(), i))
    keyed.sort()
    return [i for _, _, i in keyed]


def encode_instance(instances: np.ndarray, max_instances: int) -> np.ndarray:
    """Instance map -> RGB; color rank follows raster order of instance centers,
    background pixels get the sentinel color."""
    instances = np.asarray(instances)
    order = _instance_raster_order(instances)
    if len(order) > max_instances:
        raise DataError(f"{len(order)} instances exceed the table capacity {max_instances}")
    table = build_color_table(max_instances)
    out = np.empty(instances.shape + (3,), dtype=np.uint8)
    out[:] = np.array(table.sentinel, dtype=np.uint8)
    for rank, inst_id in enumerate(order):
        out[instances == inst_id] = table.colors[rank]
    return out


def label_components(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """4-connected components of equal-valued regions, labeled 1..K in raster
    order of each component's first pixel (0 stays 0 only for callers that
    pre-mask; here every pixel gets a component)."""
    if connectivity != 4:
        raise ConfigError("only 4-connectivity is supported")
    mask = np.asarray(mask)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    next_label = 0
    for sr in range(h):
        for sc in range(w):
            if labels[sr, sc]:
                continue
            next_label += 1
            val = mask[sr, sc]
            stack = [(sr, sc)]
            labels[sr, sc] = next_label
            while stack:
                r, c = stack.pop()
                if r > 0 and not labels[r - 1, c] and mask[r - 1, c] == val:
                    labels[r - 1, c] = next_label
                    stack.append((r - 1, c))
                if r + 1 < h and not labels[r + 1, c] and mask[r + 1, c] == val:
                    labels[r + 1, c] = next_label
                    stack.append((r + 1, c))
                if c > 0 and not labels[r, c - 1] and mask[r, c - 1] == val:
                    labels[r, c - 1] = next_label
                    stack.append((r, c - 1))
                if c + 1 < w and not labels[r, c + 1] and mask[r, c + 1] == val:
                    labels[r, c + 1] = next_label
                    stack.append((r, c + 1))
    return labels


def _component_neighbors(comp: np.ndarray, comp_id: int) -> np.ndarray:
    region = comp == comp_id
    neigh = np.zeros_like(region)
    neigh[:-1, :] |= region[1:, :]
    neigh[1:, :] |= region[:-1, :]
    neigh[:, :-1] |= region[:, 1:]
    neigh[:, 1:] |= region[:, :-1]
    neigh &= ~region
    return np.unique(comp[neigh])


def decode_instance(rgb: np.ndarray, max_instances: int, min_region_frac: float = 0.001) -> np.ndarray:
    """RGB -> instance map: nearest instance color (sentinel = background),
    split into 4-connected components, absorb sub-threshold speckle into the
    largest neighboring segment, renumber survivors 1..K in raster order."""
    if not 0 <= min_region_frac < 1:
        raise ConfigError(f"min_region_frac must be in [0, 1), got {min_region_frac}")
    table = build_color_table(max_instances)
    palette = table.palette_with_sentinel()
    color_idx = nearest_color(rgb, palette)
    background = color_idx == max_instances  # sentinel row

    h, w = color_idx.shape
    comp = label_components(color_idx)
    comp[background] = 0
    min_pixels = min_region_frac * h * w

    # Iteratively merge the smallest sub-threshold component into its largest
    # neighbor (background if it has none); sizes change as merges land.
    while True:
        ids, counts = np.unique(comp[comp > 0], return_counts=True)
        small = [(c, i) for i, c in zip(ids, counts) if c < min_pixels]
        if not small:
            break
        _, target = min(small)
        neighbors = [n for n in _component_neighbors(comp, target) if n != target]
        candidates = [n for n in neighbors if n != 0]
        if candidates:
            sizes = {int(i): int(c) for i, c in zip(ids, counts)}
            best = max(candidates, key=lambda n: (sizes.get(int(n), 0), -int(n)))
            comp[comp == target] = best
        else:
            comp[comp == target] = 0

    out = np.zeros((h, w), dtype=np.int32)
    next_id = 0
    seen = {}
    for r in range(h):
        for c in range(w):
            cid = comp[r, c]
            if cid == 0:
                continue
            if cid not in seen:
                next_id += 1
                seen[cid] = next_id
            out[r, c] = seen[cid]
    return out


# -- panoptic merge -------------------------------------------------------------


@dataclass
class PanopticLabel:
    """Per-pixel (semantic id, instance id); instance 0 on stuff, semantic
    VOID_LABEL marks pixels excluded from scoring."""
    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        if self.semantic.shape != self.instance.shape:
            raise DataError(f"panoptic maps disagree: {self.semantic.shape} vs {self.instance.shape}")


def merge_panoptic(semantic: np.ndarray, instances: np.ndarray, thing_classes) -> PanopticLabel:
    """Fuse independently decoded semantic and instance maps.

    Each instance region takes the majority thing class inside it (global
    thing majority if the overlap has none); pixels outside instances keep
    their stuff label, while thing-labeled strays become void.
    """
    semantic = np.asarray(semantic)
    instances = np.asarray(instances)
    if semantic.shape != instances.shape:
        raise DataError(f"semantic {semantic.shape} vs instance {instances.shape} size mismatch")
    things = set(int(t) for t in thing_classes)

    def majority(labels: np.ndarray):
        vals, counts = np.unique(labels, return_counts=True)
        keep = [(c, -int(v)) for v, c in zip(vals, counts) if int(v) in things]
        if not keep:
            return None
        c, nv = max(keep)
        return -nv

    global_thing = majority(semantic[semantic != VOID_LABEL])
    out_sem = semantic.astype(np.int32).copy()
    out_inst = np.zeros_like(out_sem)

    for inst_id in np.unique(instances):
        if inst_id == BACKGROUND_INSTANCE:
            continue
        region = instances == inst_id
        cls = majority(semantic[region])
        if cls is None:
            cls = global_thing
        if cls is None:
            # no thing evidence anywhere: smallest declared thing class
            cls = min(things) if things else VOID_LABEL
        out_sem[region] = cls
        out_inst[region] = inst_id

    outside = instances == BACKGROUND_INSTANCE
    stray_things = outside & np.isin(semantic, sorted(things))
    out_sem[stray_things] = VOID_LABEL
    return PanopticLabel(out_sem, out_inst)


# -- latent-path surrogate probe ---------------------------------------------------


def latent_roundtrip_probe(rgb: np.ndarray, factor: int = 8) -> np.ndarray:
    """Area-average downsample by `factor`, bilinear upsample back.

    Stands in for an encode/decode trip through a lossy latent space: on
    piecewise-constant codec images it smears colors across region
    boundaries, which the nearest-neighbor decoder then maps to spurious
    extra labels.
    """
    rgb = np.asarray(rgb)
    h, w = rgb.shape[:2]
    if factor < 1:
        raise ConfigError(f"probe factor must be >= 1, got {factor}")
    if h % factor or w % factor:
        raise ConfigError(f"probe factor {factor} does not divide image size {(h, w)}")
    if factor == 1:
        return rgb.copy()
    x = rgb.astype(np.float64)
    small = x.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))

    # bilinear upsample, align_corners=False (same convention as nn.interpolate)
    def axis_matrix(n_in, n_out):
        rows = np.arange(n_out)
        center = np.clip((rows + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
        i0 = np.floor(center).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        w1 = center - i0
        m = np.zeros((n_out, n_in))
        np.add.at(m, (rows, i0), 1.0 - w1)
        np.add.at(m, (rows, i1), w1)
        return m

    mh = axis_matrix(h // factor, h)
    mw = axis_matrix(w // factor, w)
    up = np.einsum("oh,hwc,pw->opc", mh, small, mw, optimize=True)
    return np.clip(_round_half_away(up), 0, 255).astype(np.uint8)
