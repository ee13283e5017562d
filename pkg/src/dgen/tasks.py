"""Closed instruction vocabulary and display prompts."""

from .errors import ConfigError

TASKS = (
    "semantic_segmentation",
    "instance_segmentation",
    "depth_estimation",
    "denoise",
    "derain",
    "light_enhance",
)

# Display strings mirroring the captioned prompt family
PROMPTS = {
    "semantic_segmentation": "Performance semantic segmentation",
    "instance_segmentation": "Performance instance segmentation",
    "depth_estimation": "Performance depth estimation",
    "denoise": "Performance image restoration denoising",
    "derain": "Performance image restoration deraining",
    "light_enhance": "Performance image restoration light enhancement",
}

# Panoptic segmentation is evaluated as the (semantic, instance) instruction pair.
PANOPTIC_PAIR = ("semantic_segmentation", "instance_segmentation")
RESTORATION_TASKS = ("denoise", "derain", "light_enhance")


def task_index(name: str, vocab=TASKS) -> int:
    try:
        return vocab.index(name)
    except ValueError:
        raise ConfigError(f"unknown instruction {name!r}; valid: {', '.join(vocab)}")
