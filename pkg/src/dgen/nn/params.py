"""Named parameters and the store the optimizer/checkpoint operate on."""

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor


class Parameter:
    """A named trainable tensor; the gradient lives on `value.grad`."""

    def __init__(self, name: str, value: Tensor):
        self.name = name
        self.value = value

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParameterStore:
    """Ordered name -> Parameter map with canonical (lexicographic) serialization order."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = Parameter(name, t)
        return t

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def names(self) -> list:
        return list(self._params)

    def sorted_names(self) -> list:
        return sorted(self._params)

    def num_values(self) -> int:
        return sum(p.data.size for p in self)

    def zero_grad(self):
        for p in self:
            p.value.grad = None

    def load_arrays(self, arrays: dict):
        """Overwrite parameter data in place, validating every shape."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ShapeError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in arrays.items():
            p = self._params[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} vs expected {p.data.shape}")
            p.value.data = arr.astype(p.data.dtype)
