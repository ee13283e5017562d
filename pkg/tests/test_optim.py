"""AdamW: warmup schedule, decoupled decay, scalar-oracle trajectories."""

import numpy as np

from dgen.nn import OptimizerState, ParameterStore, adamw_step

from oracles import scalar_adamw


def make_store(values: dict) -> ParameterStore:
    store = ParameterStore()
    for name, v in values.items():
        store.add(name, np.asarray(v, dtype=np.float32))
    return store


class TestWarmup:
    def test_linear_warmup_midpoint(self):
        state = OptimizerState(lr=1e-4, warmup_steps=20_000)
        assert np.isclose(state.effective_lr(10_000), 5e-5)

    def test_warmup_caps_at_base(self):
        state = OptimizerState(lr=1e-4, warmup_steps=100)
        assert np.isclose(state.effective_lr(100), 1e-4)
        assert np.isclose(state.effective_lr(5000), 1e-4)

    def test_no_warmup_is_constant(self):
        state = OptimizerState(lr=3e-3, warmup_steps=0)
        assert np.isclose(state.effective_lr(1), 3e-3)


class TestAdamWStep:
    def test_zero_grad_zero_decay_is_identity(self):
        store = make_store({"w": np.ones((3, 3))})
        state = OptimizerState.for_store(store, lr=0.1, weight_decay=0.0)
        for _ in range(5):
            store.zero_grad()
            adamw_step(store, state)
        assert np.array_equal(store["w"].data, np.ones((3, 3), dtype=np.float32))
        assert state.step == 5

    def test_single_step_matches_scalar_oracle(self):
        store = make_store({"theta": [1.0]})
        store["theta"].value.grad = np.array([2.0], dtype=np.float32)
        state = OptimizerState.for_store(store, lr=0.1, beta1=0.9, beta2=0.999,
                                         eps=1e-8, weight_decay=0.0)
        adamw_step(store, state)
        expected = scalar_adamw(1.0, [2.0], lr=0.1, beta1=0.9, beta2=0.999,
                                eps=1e-8, weight_decay=0.0)
        # hand math: m_hat = 2, v_hat = 4 -> theta' = 1 - 0.1 * 2 / (2 + 1e-8)
        assert abs(expected - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))) < 1e-12
        assert abs(float(store["theta"].data[0]) - expected) < 1e-6

    def test_multi_step_trajectory_matches_oracle(self):
        grads = [0.5, -1.0, 2.0, 0.1, -0.3]
        store = make_store({"theta": [0.7]})
        state = OptimizerState.for_store(store, lr=0.05, beta1=0.9, beta2=0.99,
                                         eps=1e-8, weight_decay=0.01, warmup_steps=3)
        for g in grads:
            store["theta"].value.grad = np.array([g], dtype=np.float32)
            adamw_step(store, state)
        expected = scalar_adamw(0.7, grads, lr=0.05, beta1=0.9, beta2=0.99,
                                eps=1e-8, weight_decay=0.01, warmup=3)
        assert abs(float(store["theta"].data[0]) - expected) < 1e-5

    def test_decoupled_decay_shrinks_without_gradient_coupling(self):
        store = make_store({"w": [10.0]})
        state = OptimizerState.for_store(store, lr=0.1, weight_decay=0.5)
        store.zero_grad()
        adamw_step(store, state)
        # zero grad: update term is 0, decay term is lr * wd * theta
        assert np.isclose(float(store["w"].data[0]), 10.0 - 0.1 * 0.5 * 10.0)

    def test_step_counter_strictly_increments(self):
        store = make_store({"w": [1.0]})
        state = OptimizerState.for_store(store, lr=0.1)
        seen = []
        for _ in range(4):
            adamw_step(store, state)
            seen.append(state.step)
        assert seen == [1, 2, 3, 4]
