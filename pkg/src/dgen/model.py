"""The conditional pixel-space denoiser.

Encoder-decoder over NCHW with skip connections, timestep embedding added
per residual block, and (self + task cross) attention at the interior
resolution levels only; the outermost level carries no attention, which is
what makes pixel-space training at larger targets affordable.  Image
conditioning is channel concatenation: either two interpolated stages of a
trainable 4-stage condition encoder or, in the ablation mode, the raw
resized condition image.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .nn import Tensor
from .nn.tensor import make_op
from .tasks import TASKS, task_index

# Frozen stand-in for a pretrained text encoder: fixed orthogonal task
# embeddings drawn from a constant seed, never trained, identical across runs.
_TASK_EMBED_SEED = 0x7A5C


@dataclass
class GeneralistConfig:
    target_hw: int = 32
    condition_hw: int = 64
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 3)
    blocks_per_level: int = 1
    attention_levels: tuple = (1, 2)
    num_heads: int = 4
    norm_groups: int = 8
    encoder_channels: tuple = (32, 64, 96, 96)
    task_vocab: tuple = TASKS
    conditioning_mode: str = "encoder_features"   # or "raw_concat"
    mode: str = "diffusion"                       # or "regression"
    zero_init_last: bool = True

    def __post_init__(self):
        self.channel_mult = tuple(self.channel_mult)
        self.attention_levels = tuple(self.attention_levels)
        self.encoder_channels = tuple(self.encoder_channels)
        self.task_vocab = tuple(self.task_vocab)
        levels = len(self.channel_mult)
        if not self.task_vocab:
            raise ConfigError("task_vocab must not be empty")
        if self.condition_hw < self.target_hw:
            raise ConfigError(f"condition_hw {self.condition_hw} < target_hw {self.target_hw}")
        if 0 in self.attention_levels:
            raise ConfigError("the outermost level (0) must not carry self-attention")
        if any(not 0 < lv < levels for lv in self.attention_levels):
            raise ConfigError(f"attention_levels {self.attention_levels} out of range for {levels} levels")
        if self.target_hw % (2 ** (levels - 1)):
            raise ConfigError(f"target_hw {self.target_hw} not divisible by 2^{levels - 1}")
        if self.condition_hw % 16:
            raise ConfigError(f"condition_hw {self.condition_hw} must be divisible by 16 (4 encoder stages)")
        if len(self.encoder_channels) != 4:
            raise ConfigError(f"encoder_channels needs 4 stages, got {len(self.encoder_channels)}")
        if self.conditioning_mode not in ("encoder_features", "raw_concat"):
            raise ConfigError(f"unknown conditioning_mode {self.conditioning_mode!r}")
        if self.mode not in ("diffusion", "regression"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for ch in self.level_channels() + list(self.encoder_channels):
            if ch % self.norm_groups:
                raise ConfigError(f"channel width {ch} not divisible by norm_groups {self.norm_groups}")
        for lv in self.attention_levels:
            if self.level_channels()[lv] % self.num_heads:
                raise ConfigError(f"attention channels {self.level_channels()[lv]} not divisible "
                                  f"by {self.num_heads} heads")

    def level_channels(self) -> list:
        return [self.base_channels * m for m in self.channel_mult]

    @property
    def time_dim(self) -> int:
        return 4 * self.base_channels

    def encoder_stage_resolutions(self) -> list:
        return [self.condition_hw // (2 ** (i + 1)) for i in range(4)]

    def bracket_stages(self) -> tuple:
        """The two consecutive encoder stages whose resolutions bracket target_hw."""
        res = self.encoder_stage_resolutions()
        ge = [i for i, r in enumerate(res) if r >= self.target_hw]
        i = min(max(ge) if ge else 0, 2)
        return (i, i + 1)

    def condition_channels(self) -> int:
        if self.conditioning_mode == "raw_concat":
            return 3
        i, j = self.bracket_stages()
        return self.encoder_channels[i] + self.encoder_channels[j]


@dataclass(frozen=True)
class TaskToken:
    name: str
    vector: np.ndarray


def task_embeddings(vocab, dim: int) -> np.ndarray:
    """(n_tasks, dim) orthonormal rows from the constant embedding seed."""
    if dim < len(vocab):
        raise ConfigError(f"task embedding dim {dim} < vocabulary size {len(vocab)}")
    rng = np.random.default_rng(_TASK_EMBED_SEED)
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[: len(vocab)].astype(np.float64)


def task_tokens(config: GeneralistConfig) -> list:
    mat = task_embeddings(config.task_vocab, config.time_dim)
    return [TaskToken(name, mat[i]) for i, name in enumerate(config.task_vocab)]


def sinusoidal_time_embedding(t, dim: int) -> np.ndarray:
    """Standard sinusoidal frequencies; (N, dim) float array."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


# -- parameterized layers ------------------------------------------------------


class Conv:
    def __init__(self, store, name, cin, cout, k=3, stride=1, rng=None, zero=False):
        self.stride = stride
        self.padding = k // 2
        if zero:
            w = np.zeros((cout, cin, k, k))
        else:
            w = rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / (cin * k * k))
        self.w = store.add(f"{name}.weight", w)
        self.b = store.add(f"{name}.bias", np.zeros(cout))

    def __call__(self, x):
        return nn.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Dense:
    def __init__(self, store, name, fin, fout, rng=None, zero=False):
        if zero:
            w = np.zeros((fout, fin))
        else:
            w = rng.standard_normal((fout, fin)) * math.sqrt(1.0 / fin)
        self.w = store.add(f"{name}.weight", w)
        self.b = store.add(f"{name}.bias", np.zeros(fout))

    def __call__(self, x):
        return nn.linear(x, self.w, self.b)


class Norm:
    def __init__(self, store, name, channels, groups):
        self.groups = groups
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))

    def __call__(self, x):
        return nn.group_norm(x, self.groups, self.gamma, self.beta)


class ResBlock:
    def __init__(self, store, name, cin, cout, time_dim, groups, rng, zero_last):
        self.norm1 = Norm(store, f"{name}.norm1", cin, groups)
        self.conv1 = Conv(store, f"{name}.conv1", cin, cout, rng=rng)
        self.time = Dense(store, f"{name}.time", time_dim, cout, rng=rng)
        self.norm2 = Norm(store, f"{name}.norm2", cout, groups)
        self.conv2 = Conv(store, f"{name}.conv2", cout, cout, rng=rng, zero=zero_last)
        self.skip = Conv(store, f"{name}.skip", cin, cout, k=1, rng=rng) if cin != cout else None

    def __call__(self, x, temb):
        n = temb.shape[0]
        h = self.conv1(nn.silu(self.norm1(x)))
        h = h + self.time(nn.silu(temb)).reshape((n, -1, 1, 1))
        h = self.conv2(nn.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip else x)


class AttentionBlock:
    """Self-attention over spatial tokens, then cross-attention to the task token."""

    def __init__(self, store, name, channels, heads, task_dim, groups, rng, zero_last):
        self.heads = heads
        self.channels = channels
        self.norm_s = Norm(store, f"{name}.self.norm", channels, groups)
        self.qkv = Dense(store, f"{name}.self.qkv", channels, 3 * channels, rng=rng)
        self.proj_s = Dense(store, f"{name}.self.proj", channels, channels, rng=rng, zero=zero_last)
        self.norm_c = Norm(store, f"{name}.cross.norm", channels, groups)
        self.q_c = Dense(store, f"{name}.cross.q", channels, channels, rng=rng)
        self.kv_c = Dense(store, f"{name}.cross.kv", task_dim, 2 * channels, rng=rng)
        # never zero-init: the task pathway must be live from the first step
        self.proj_c = Dense(store, f"{name}.cross.proj", channels, channels, rng=rng)

    def _heads(self, x, n, tokens):
        # (N, T, C) -> (N, heads, T, C/heads)
        return x.reshape((n, tokens, self.heads, self.channels // self.heads)).transpose((0, 2, 1, 3))

    def _unheads(self, x, n, tokens):
        return x.transpose((0, 2, 1, 3)).reshape((n, tokens, self.channels))

    def __call__(self, x, task_emb):
        n, c, h, w = x.shape
        tokens = h * w

        def to_tok(t):
            return t.reshape((n, c, tokens)).transpose((0, 2, 1))

        def to_map(t):
            return t.transpose((0, 2, 1)).reshape((n, c, h, w))

        tok = to_tok(self.norm_s(x))
        qkv = self.qkv(tok)
        q = self._heads(_slice_last(qkv, 0, c), n, tokens)
        k = self._heads(_slice_last(qkv, c, 2 * c), n, tokens)
        v = self._heads(_slice_last(qkv, 2 * c, 3 * c), n, tokens)
        attn = self._unheads(nn.attention(q, k, v), n, tokens)
        x = x + to_map(self.proj_s(attn))

        tok = to_tok(self.norm_c(x))
        qc = self._heads(self.q_c(tok), n, tokens)
        kv = self.kv_c(task_emb)          # (N, 1, 2C)
        kc = self._heads(_slice_last(kv, 0, c), n, 1)
        vc = self._heads(_slice_last(kv, c, 2 * c), n, 1)
        cross = self._unheads(nn.attention(qc, kc, vc), n, tokens)
        return x + to_map(self.proj_c(cross))


def _slice_last(t: Tensor, start: int, stop: int) -> Tensor:
    """Differentiable slice along the last axis."""
    data = t.data[..., start:stop]

    def backward(g):
        if t.requires_grad:
            full = np.zeros_like(t.data)
            full[..., start:stop] = g
            t._accumulate(full)

    return make_op(data, (t,), backward, "slice")


class ConditionEncoder:
    """Trainable 4-stage pyramid at strides 2/4/8/16 of the condition image."""

    def __init__(self, store, config: GeneralistConfig, rng):
        self.stages = []
        cin = 3
        for i, cout in enumerate(config.encoder_channels):
            name = f"encoder.stage{i}"
            self.stages.append({
                "down": Conv(store, f"{name}.down", cin, cout, stride=2, rng=rng),
                "norm1": Norm(store, f"{name}.norm1", cout, config.norm_groups),
                "conv": Conv(store, f"{name}.conv", cout, cout, rng=rng),
                "norm2": Norm(store, f"{name}.norm2", cout, config.norm_groups),
            })
            cin = cout

    def __call__(self, image) -> list:
        feats = []
        h = image
        for st in self.stages:
            h = nn.silu(st["norm1"](st["down"](h)))
            h = nn.silu(st["norm2"](st["conv"](h)))
            feats.append(h)
        return feats


def condition_concat(x_t, condition_features, config: GeneralistConfig):
    """Channel-concatenate the noised target with its conditioning.

    encoder_features mode: `condition_features` is the 4-stage pyramid; the
    two bracketing stages are bilinearly interpolated to the target size.
    raw_concat mode: `condition_features` is the raw condition image.
    """
    size = (config.target_hw, config.target_hw)
    if config.conditioning_mode == "raw_concat":
        resized = nn.interpolate(nn.as_tensor(condition_features), size, mode="bilinear")
        return nn.concat([nn.as_tensor(x_t), resized], axis=1)
    i, j = config.bracket_stages()
    fi = nn.interpolate(condition_features[i], size, mode="bilinear")
    fj = nn.interpolate(condition_features[j], size, mode="bilinear")
    return nn.concat([nn.as_tensor(x_t), fi, fj], axis=1)


class Denoiser:
    """Task-conditioned denoising network; one parameter set serves all tasks."""

    def __init__(self, config: GeneralistConfig, rng: np.random.Generator):
        self.config = config
        self.store = nn.ParameterStore()
        self.task_matrix = task_embeddings(config.task_vocab, config.time_dim)
        zl = config.zero_init_last
        groups = config.norm_groups
        tdim = config.time_dim
        chans = config.level_channels()
        levels = len(chans)

        self.encoder = None
        if config.conditioning_mode == "encoder_features":
            self.encoder = ConditionEncoder(self.store, config, rng)

        self.time1 = Dense(self.store, "time.fc1", tdim, tdim, rng=rng)
        self.time2 = Dense(self.store, "time.fc2", tdim, tdim, rng=rng)

        cin = 3 + config.condition_channels()
        self.conv_in = Conv(self.store, "unet.conv_in", cin, chans[0], rng=rng)

        self.down_blocks = []
        self.down_attn = []
        self.downsample = []
        for i in range(levels):
            blocks, attns = [], []
            for b in range(config.blocks_per_level):
                blocks.append(ResBlock(self.store, f"unet.down{i}.block{b}", chans[i], chans[i],
                                       tdim, groups, rng, zl))
                attns.append(AttentionBlock(self.store, f"unet.down{i}.attn{b}", chans[i],
                                            config.num_heads, tdim, groups, rng, zl)
                             if i in config.attention_levels else None)
            self.down_blocks.append(blocks)
            self.down_attn.append(attns)
            if i < levels - 1:
                self.downsample.append(Conv(self.store, f"unet.down{i}.downsample",
                                            chans[i], chans[i + 1], stride=2, rng=rng))

        self.mid_block1 = ResBlock(self.store, "unet.mid.block1", chans[-1], chans[-1], tdim, groups, rng, zl)
        self.mid_attn = AttentionBlock(self.store, "unet.mid.attn", chans[-1], config.num_heads,
                                       tdim, groups, rng, zl)
        self.mid_block2 = ResBlock(self.store, "unet.mid.block2", chans[-1], chans[-1], tdim, groups, rng, zl)

        self.up_conv = []
        self.up_blocks = []
        self.up_attn = []
        for i in reversed(range(levels - 1)):
            self.up_conv.append(Conv(self.store, f"unet.up{i}.upsample", chans[i + 1], chans[i], rng=rng))
            blocks, attns = [], []
            for b in range(config.blocks_per_level):
                cin_b = 2 * chans[i] if b == 0 else chans[i]
                blocks.append(ResBlock(self.store, f"unet.up{i}.block{b}", cin_b, chans[i],
                                       tdim, groups, rng, zl))
                attns.append(AttentionBlock(self.store, f"unet.up{i}.attn{b}", chans[i],
                                            config.num_heads, tdim, groups, rng, zl)
                             if i in config.attention_levels else None)
            self.up_blocks.append(blocks)
            self.up_attn.append(attns)

        self.norm_out = Norm(self.store, "unet.norm_out", chans[0], groups)
        self.conv_out = Conv(self.store, "unet.conv_out", chans[0], 3, rng=rng, zero=zl)

    # -- public surface ---------------------------------------------------

    def num_parameters(self) -> int:
        return self.store.num_values()

    def task_indices(self, task) -> np.ndarray:
        if isinstance(task, str):
            task = [task]
        if isinstance(task, (list, tuple)) and task and isinstance(task[0], str):
            return np.array([task_index(t, self.config.task_vocab) for t in task])
        arr = np.atleast_1d(np.asarray(task, dtype=int))
        if np.any(arr < 0) or np.any(arr >= len(self.config.task_vocab)):
            raise ConfigError(f"task index out of range for vocabulary of {len(self.config.task_vocab)}")
        return arr

    def encode_condition(self, image) -> list:
        """Multi-scale features of the condition image (trainable pyramid)."""
        if self.encoder is None:
            raise ConfigError("encode_condition requires conditioning_mode='encoder_features'")
        image = nn.as_tensor(image)
        c = self.config
        if image.shape[2] != c.condition_hw or image.shape[3] != c.condition_hw:
            raise ShapeError(f"condition image {image.shape} does not match condition_hw {c.condition_hw}")
        return self.encoder(image)

    def __call__(self, x_t, t, condition, task):
        return self.forward(x_t, t, condition, task)

    def forward(self, x_t, t, condition, task):
        c = self.config
        x_t = nn.as_tensor(x_t)
        condition = nn.as_tensor(condition)
        if x_t.ndim != 4 or x_t.shape[1] != 3 or x_t.shape[2] != c.target_hw or x_t.shape[3] != c.target_hw:
            raise ShapeError(f"x_t shape {x_t.shape} does not match (N, 3, {c.target_hw}, {c.target_hw})")
        if condition.shape[0] != x_t.shape[0]:
            raise ShapeError(f"batch mismatch: x_t {x_t.shape} vs condition {condition.shape}")
        n = x_t.shape[0]

        tasks = self.task_indices(task)
        if tasks.shape[0] == 1 and n > 1:
            tasks = np.repeat(tasks, n)
        task_emb = Tensor(self.task_matrix[tasks][:, None, :])      # (N, 1, tdim)

        t_arr = np.atleast_1d(np.asarray(t))
        if t_arr.shape[0] == 1 and n > 1:
            t_arr = np.repeat(t_arr, n)
        temb = Tensor(sinusoidal_time_embedding(t_arr, c.time_dim))
        temb = self.time2(nn.silu(self.time1(temb)))

        if c.conditioning_mode == "encoder_features":
            cond_feats = self.encode_condition(condition)
        else:
            if condition.shape[2] != c.condition_hw or condition.shape[3] != c.condition_hw:
                raise ShapeError(f"condition image {condition.shape} does not match {c.condition_hw}")
            cond_feats = condition
        h = self.conv_in(condition_concat(x_t, cond_feats, c))

        levels = len(c.channel_mult)
        skips = []
        for i in range(levels):
            for block, attn in zip(self.down_blocks[i], self.down_attn[i]):
                h = block(h, temb)
                if attn is not None:
                    h = attn(h, task_emb)
            if i < levels - 1:
                skips.append(h)
                h = self.downsample[i](h)

        h = self.mid_block1(h, temb)
        h = self.mid_attn(h, task_emb)
        h = self.mid_block2(h, temb)

        for pos, i in enumerate(reversed(range(levels - 1))):
            size = (c.target_hw // (2 ** i), c.target_hw // (2 ** i))
            h = self.up_conv[pos](nn.interpolate(h, size, mode="nearest"))
            h = nn.concat([h, skips.pop()], axis=1)
            for block, attn in zip(self.up_blocks[pos], self.up_attn[pos]):
                h = block(h, temb)
                if attn is not None:
                    h = attn(h, task_emb)

        return self.conv_out(nn.silu(self.norm_out(h)))

    def expected_attention_calls(self) -> int:
        """Attention invocations per forward pass (for the op-count probe)."""
        c = self.config
        per_block = 2  # one self + one cross call
        down = sum(c.blocks_per_level for i in range(len(c.channel_mult)) if i in c.attention_levels)
        up = sum(c.blocks_per_level for i in range(len(c.channel_mult) - 1) if i in c.attention_levels)
        return per_block * (down + up + 1)  # +1 for the middle block
