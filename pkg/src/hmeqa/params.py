"""Named collections of trainable tensors."""

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def glorot_uniform(rng, shape, fan_in=None, fan_out=None):
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else 1
    if fan_out is None:
        fan_out = shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterSet:
    """Ordered mapping from parameter name to a trainable :class:`Tensor`.

    Names are dotted paths (``vm.m.W_oc``); ``scope`` returns a view that
    prefixes lookups so submodules can address their own bank.
    """

    def __init__(self):
        self._tensors = {}

    def add(self, name, value):
        if name in self._tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def scope(self, prefix):
        return _Scope(self, prefix)

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def num_scalars(self):
        return int(sum(t.size for t in self._tensors.values()))

    def manifest(self):
        """List of ``(name, shape)`` pairs describing the set's layout."""
        return [(n, tuple(t.shape)) for n, t in self._tensors.items()]

    def state(self):
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_state(self, arrays):
        for n, t in self._tensors.items():
            src = np.asarray(arrays[n])
            if src.shape != t.shape:
                raise ContractError(f"shape mismatch for {n}: {src.shape} vs {t.shape}")
            t.data = src.astype(t.data.dtype, copy=True)

    def astype(self, dtype):
        for t in self._tensors.values():
            t.data = t.data.astype(dtype)


class _Scope:
    def __init__(self, params, prefix):
        self.params = params
        self.prefix = prefix

    def __getitem__(self, name):
        return self.params[f"{self.prefix}.{name}"]

    def __contains__(self, name):
        return f"{self.prefix}.{name}" in self.params

    def add(self, name, value):
        return self.params.add(f"{self.prefix}.{name}", value)

    def scope(self, prefix):
        return _Scope(self.params, f"{self.prefix}.{prefix}")
