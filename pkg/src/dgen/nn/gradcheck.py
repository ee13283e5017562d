"""Central finite-difference gradient verification (float64 suites)."""

import numpy as np

from .tensor import Tensor, no_grad


def finite_difference_check(build_loss, leaves, h: float = 1e-3, n_coords: int = 50,
                            rng=None, rel_floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build_loss()` must rebuild the forward graph from the given leaf
    Tensors each call.  Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, rel_floor).
    Run under float64 (`use_dtype("float64")`) for meaningful results.
    """
    rng = rng or np.random.default_rng(0)
    leaves = list(leaves)

    loss = build_loss()
    loss.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in leaves]

    worst = 0.0
    coords = []
    total = sum(t.size for t in leaves)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + [t.size for t in leaves])
    for flat in np.sort(picks):
        li = int(np.searchsorted(offsets, flat, side="right") - 1)
        coords.append((li, int(flat - offsets[li])))

    for li, ci in coords:
        t = leaves[li]
        orig = t.data.flat[ci]
        with no_grad():
            t.data.flat[ci] = orig + h
            f_plus = float(build_loss().data)
            t.data.flat[ci] = orig - h
            f_minus = float(build_loss().data)
        t.data.flat[ci] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = 0.0 if analytic[li] is None else float(analytic[li].flat[ci])
        err = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
        worst = max(worst, err)
    return worst


def random_leaf(shape, rng, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)
