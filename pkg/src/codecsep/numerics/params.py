import hashlib

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Named parameter tensors plus per-parameter Adam state.

    Names are unique and ordered by insertion. Freezing flips requires_grad so
    downstream ops skip gradient work entirely for those tensors.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = np.asarray(array, dtype=self.dtype)
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def adam_state(self, name):
        return self._m[name], self._v[name]

    def num_params(self):
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def set_trainable(self, trainable, prefix=""):
        for name, t in self._params.items():
            if name.startswith(prefix):
                t.requires_grad = bool(trainable)

    def trainable_names(self):
        return [n for n, t in self._params.items() if t.requires_grad]

    def content_hash(self, prefix=""):
        h = hashlib.sha256()
        for name in sorted(self._params):
            if not name.startswith(prefix):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name].data).tobytes())
        return h.hexdigest()

    def state_arrays(self):
        return {name: t.data for name, t in self._params.items()}

    def load_state_arrays(self, arrays, prefix=""):
        for name, t in self._params.items():
            if not name.startswith(prefix):
                continue
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            src = np.asarray(arrays[name], dtype=self.dtype)
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{src.shape} vs {t.data.shape}")
            t.data = src.copy()
            self._m[name] = np.zeros_like(t.data)
            self._v[name] = np.zeros_like(t.data)
