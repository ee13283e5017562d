"""Run configuration: one flat record covering model, schedule and training.

Serializes to JSON with a loss-free round trip; unknown keys are rejected.
Every emitted CSV row carries `config_hash(cfg)` so results stay tied to an
exact configuration.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .diffusion import DiffusionSchedule
from .errors import ConfigError
from .model import GeneralistConfig
from .tasks import TASKS


@dataclass
class RunConfig:
    # bookkeeping
    seed: int = 0
    data_root: str = ""
    out_dir: str = ""
    # model
    target_hw: int = 32
    condition_hw: int = 64
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 3)
    blocks_per_level: int = 1
    attention_levels: tuple = (1, 2)
    num_heads: int = 4
    norm_groups: int = 8
    encoder_channels: tuple = (32, 48, 64, 64)
    task_vocab: tuple = TASKS
    conditioning_mode: str = "encoder_features"
    mode: str = "diffusion"
    zero_init_last: bool = True
    # diffusion schedule
    timesteps: int = 1000
    signal_scale: float = 0.5
    ddim_steps: int = 50
    # optimization; warmup defaults to total_steps/9 (20k of 180k scaled down)
    batch_size: int = 32
    total_steps: int = 3000
    warmup_steps: int = -1
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # harness
    checkpoint_every: int = 1000
    log_every: int = 25
    eval_max_samples: int = 0   # 0 = whole split

    def __post_init__(self):
        for name in ("channel_mult", "attention_levels", "encoder_channels", "task_vocab"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be positive, got {self.total_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.warmup_steps < 0:
            self.warmup_steps = self.total_steps // 9
        # fail fast on bad model/schedule combinations
        self.generalist()
        if not 1 <= self.ddim_steps <= self.timesteps:
            raise ConfigError(f"ddim_steps must be in [1, {self.timesteps}], got {self.ddim_steps}")

    def generalist(self) -> GeneralistConfig:
        return GeneralistConfig(
            target_hw=self.target_hw,
            condition_hw=self.condition_hw,
            base_channels=self.base_channels,
            channel_mult=self.channel_mult,
            blocks_per_level=self.blocks_per_level,
            attention_levels=self.attention_levels,
            num_heads=self.num_heads,
            norm_groups=self.norm_groups,
            encoder_channels=self.encoder_channels,
            task_vocab=self.task_vocab,
            conditioning_mode=self.conditioning_mode,
            mode=self.mode,
            zero_init_last=self.zero_init_last,
        )

    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule(num_steps=self.timesteps, signal_scale=self.signal_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config file {path}: {e}")
        if not isinstance(d, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
