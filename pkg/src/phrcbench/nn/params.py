"""Parameter storage, network configuration, and initialization."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, grad_enabled


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters shared by both estimator branches."""

    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    d_z: int = 16
    n_mix: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.n_mix < 1:
            raise ConfigError("n_mix must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        fields = {k: d[k] for k in ("d_model", "n_heads", "n_layers", "d_ff", "d_z", "n_mix", "dropout")}
        return NetConfig(**fields)


class ParamTensor:
    """Named flat float64 parameter with a same-size gradient accumulator."""

    __slots__ = ("name", "shape", "values", "grad")

    def __init__(self, name: str, shape, values):
        self.name = name
        self.shape = tuple(int(n) for n in shape)
        size = int(np.prod(self.shape)) if self.shape else 1
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != size:
            raise ConfigError(f"{name}: {values.size} values for shape {self.shape}")
        self.values = values
        self.grad = np.zeros(size, dtype=np.float64)

    def array(self) -> np.ndarray:
        return self.values.reshape(self.shape)


class ParamStore:
    """Ordered name -> ParamTensor map plus the per-step leaf registry.

    ``leaf`` hands out graph nodes view-sharing the parameter memory; after a
    backward pass ``collect_grads`` folds every leaf gradient back into the
    owning ParamTensor.
    """

    def __init__(self):
        self._params: dict[str, ParamTensor] = {}
        self._leaves: list = []

    def add(self, name: str, values: np.ndarray) -> ParamTensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter {name}")
        p = ParamTensor(name, np.asarray(values).shape, values)
        self._params[name] = p
        return p

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> ParamTensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def leaf(self, name: str) -> Tensor:
        p = self._params[name]
        t = Tensor(p.array())
        if grad_enabled():
            self._leaves.append((p, t))
        return t

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[:] = 0.0
        self._leaves.clear()

    def collect_grads(self) -> None:
        for p, t in self._leaves:
            if t.grad is not None:
                p.grad += np.asarray(t.grad).ravel()
        self._leaves.clear()


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    lim = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-lim, lim, shape)


def init_affine(store: ParamStore, rng, name: str, d_in: int, d_out: int) -> None:
    store.add(f"{name}.w", uniform_init(rng, d_in, (d_in, d_out)))
    store.add(f"{name}.b", np.zeros(d_out))


def init_layernorm(store: ParamStore, name: str, d: int) -> None:
    store.add(f"{name}.g", np.ones(d))
    store.add(f"{name}.b", np.zeros(d))


def init_attention(store: ParamStore, rng, name: str, cfg: NetConfig) -> None:
    for h in range(cfg.n_heads):
        for tag in ("wq", "wk", "wv"):
            store.add(f"{name}.h{h}.{tag}", uniform_init(rng, cfg.d_model, (cfg.d_model, cfg.d_k)))
    init_affine(store, rng, f"{name}.out", cfg.d_model, cfg.d_model)


def init_block(store: ParamStore, rng, name: str, cfg: NetConfig) -> None:
    init_layernorm(store, f"{name}.ln1", cfg.d_model)
    init_attention(store, rng, f"{name}.attn", cfg)
    init_layernorm(store, f"{name}.ln2", cfg.d_model)
    init_affine(store, rng, f"{name}.ff1", cfg.d_model, cfg.d_ff)
    init_affine(store, rng, f"{name}.ff2", cfg.d_ff, cfg.d_model)


def init_conv(store: ParamStore, rng, name: str, kernel: int, d_in: int, d_out: int) -> None:
    store.add(f"{name}.w", uniform_init(rng, kernel * d_in, (kernel, d_in, d_out)))
    store.add(f"{name}.b", np.zeros(d_out))
