from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericError


class ParamSet:
    """Named trainable tensors with co-indexed gradients.

    ``buffers`` hold non-trainable state (batchnorm running statistics) that
    travels with the parameters into checkpoints but is never optimised.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise DataError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise DataError(f"duplicate buffer {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    def accumulate(self, name: str, grad) -> None:
        self.grads[name] += grad

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet(dtype)
        for k, v in self.params.items():
            out.add(k, v)
        for k, v in self.buffers.items():
            out.add_buffer(k, v)
        out.step = self.step
        return out

    def copy(self) -> "ParamSet":
        return self.astype(self.dtype)

    def check_finite(self) -> None:
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"parameter {k} became non-finite")

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then buffers, as (name, array) pairs for checkpointing."""
        out = [(k, v) for k, v in self.params.items()]
        out += [(f"buffer:{k}", v) for k, v in self.buffers.items()]
        return out

    @classmethod
    def from_tensors(cls, tensors, dtype=np.float32) -> "ParamSet":
        ps = cls(dtype)
        for name, arr in tensors:
            if name.startswith("buffer:"):
                ps.add_buffer(name[len("buffer:"):], arr)
            else:
                ps.add(name, arr)
        return ps

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.03
    decoupled_weight_decay: bool = True
    dropout_p: float = 0.5
    epochs: int = 800
    batch_size: int = 32
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 <= self.dropout_p < 1:
            raise DataError("dropout_p must lie in [0, 1)")
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise DataError("dtype must be float32 or float64")
