"""AdamW with bias-corrected moments, decoupled weight decay, linear warmup."""

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


@dataclass
class OptimizerState:
    lr: float = 1e-4
    warmup_steps: int = 0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for p in store:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state

    def effective_lr(self, step: int) -> float:
        if self.warmup_steps > 0:
            return self.lr * min(1.0, step / self.warmup_steps)
        return self.lr


def adamw_step(store: ParameterStore, state: OptimizerState) -> float:
    """One update over every parameter in `store`; returns the lr used.

    Missing gradients are treated as zero (the moments still decay), so a
    zero-gradient step with zero weight decay leaves parameters unchanged.
    """
    state.step += 1
    t = state.step
    lr = state.effective_lr(t)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in store:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.value.data = p.data - lr * update
    return lr
