"""Parameter containers and the small layer zoo the model is built from."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .tensor import (
    Tensor,
    conv2d,
    depthwise_conv3x3,
    gelu,
    layer_norm,
    matmul,
)


class SeedStream:
    """Deterministic supply of independent generators for layer init.

    Each ``generator()`` call spawns the next child of one seed sequence,
    so two models that draw in the same order get identical weights for
    their shared components even when one of them skips optional layers
    (the caller draws for the skipped slot and discards).
    """

    def __init__(self, entropy):
        if isinstance(entropy, np.random.SeedSequence):
            self._seq = entropy
        else:
            self._seq = np.random.SeedSequence(entropy)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seq.spawn(1)[0]))

    def split(self, n: int) -> list["SeedStream"]:
        return [SeedStream(child) for child in self._seq.spawn(n)]


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until everything lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    for _ in range(16):
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(out, -2.0 * std, 2.0 * std)


class Module:
    """Minimal parameter/submodule registry with recursive named access."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={missing[:4]} extra={extra[:4]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ConfigError(f"parameter '{name}' has shape {arr.shape}, expected {p.data.shape}")
            p.data = arr.copy()


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            self._modules[str(i)] = m

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    """Affine map; std=None picks the fan-in scaled default."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, std: float | None = None):
        super().__init__()
        if std is None:
            std = 1.0 / math.sqrt(in_dim)
        self.weight = Tensor(trunc_normal(rng, (in_dim, out_dim), std), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, eps=self.eps)


class Conv2d(Module):
    """k×k cross-correlation on H×W×C maps, fan-in scaled init."""

    def __init__(self, cin: int, cout: int, k: int, stride: int, padding: int, rng: np.random.Generator):
        super().__init__()
        std = math.sqrt(2.0 / (k * k * cin))
        self.weight = Tensor(trunc_normal(rng, (k, k, cin, cout), std), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv3x3(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        std = math.sqrt(2.0 / 9.0)
        self.weight = Tensor(trunc_normal(rng, (3, 3, channels), std), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return depthwise_conv3x3(x, self.weight, self.bias)


class MixFFN(Module):
    """Token MLP with an inner depthwise 3×3 conv on the 2D layout.

    The conv injects positional information; the block is pre-normed and
    residual, so zero output-projection weights make it an identity.
    """

    def __init__(self, dim: int, expansion: int, rng: np.random.Generator, std: float | None = None):
        super().__init__()
        hidden = dim * expansion
        self.norm = LayerNorm(dim)
        self.expand = Linear(dim, hidden, rng, std=std)
        self.conv = DepthwiseConv3x3(hidden, rng)
        self.project = Linear(hidden, dim, rng, std=std)
        self.hidden = hidden

    def __call__(self, tokens: Tensor, grid: tuple[int, int]) -> Tensor:
        height, width = grid
        n, _ = tokens.shape
        if n != height * width:
            raise ConfigError(f"token count {n} does not match grid {height}x{width}")
        x = self.norm(tokens)
        h = self.expand(x)
        h = self.conv(h.reshape(height, width, self.hidden))
        h = gelu(h.reshape(n, self.hidden))
        return tokens + self.project(h)
