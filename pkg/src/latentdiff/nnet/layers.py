"""Dense-network building blocks with explicit forward/backward passes.

The layer vocabulary is deliberately small: affine, relu, layer norm,
inverted dropout, sequential composition and residual blocks. Every
module consumes a batch matrix (rows are samples) and produces a cache
sufficient for the matching backward call. Gradients accumulate into
``Parameter.grad``; call ``zero_grad`` between steps.

Everything is float64 by default so gradient checks and covariance work
have numerical headroom; pass ``dtype=np.float32`` at construction for
single precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAYERNORM_EPS = 1e-5


class ConfigurationError(ValueError):
    """Invalid layer or embedding configuration."""


class Parameter:
    """A named trainable array with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.array(value, copy=True)
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter({self.name}, shape={self.value.shape})"


@dataclass
class Context:
    """Per-call forward state: training mode and the dropout stream."""

    train: bool = False
    rng: np.random.Generator | None = None


EVAL = Context(train=False)


class Module:
    def params(self) -> list[Parameter]:
        return []

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def forward(self, x: np.ndarray, ctx: Context = EVAL):
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, cache):
        raise NotImplementedError

    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.params()))


class Affine(Module):
    """y = x @ W + b with W of shape (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 name: str = "affine", dtype=np.float64):
        scale = 1.0 / np.sqrt(in_dim)
        if rng is None:
            w = np.zeros((in_dim, out_dim))
        else:
            w = rng.uniform(-scale, scale, size=(in_dim, out_dim))
        self.w = Parameter(f"{name}.w", w.astype(dtype))
        self.b = Parameter(f"{name}.b", np.zeros(out_dim, dtype=dtype))
        self.in_dim = in_dim
        self.out_dim = out_dim

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x, ctx: Context = EVAL):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"affine expects (n, {self.in_dim}) input, got {x.shape}")
        return x @ self.w.value + self.b.value, x

    def backward(self, grad_out, cache):
        x = cache
        self.w.grad += x.T @ grad_out
        self.b.grad += grad_out.sum(axis=0)
        return grad_out @ self.w.value.T


class Relu(Module):
    def forward(self, x, ctx: Context = EVAL):
        return np.maximum(x, 0.0), x

    def backward(self, grad_out, cache):
        return grad_out * (cache > 0)


class LayerNorm(Module):
    """Per-sample normalization over the feature axis with learnable gain/bias."""

    def __init__(self, dim: int, name: str = "ln", dtype=np.float64, eps: float = LAYERNORM_EPS):
        self.gain = Parameter(f"{name}.gain", np.ones(dim, dtype=dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(dim, dtype=dtype))
        self.dim = dim
        self.eps = eps

    def params(self) -> list[Parameter]:
        return [self.gain, self.bias]

    def forward(self, x, ctx: Context = EVAL):
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        y = xhat * self.gain.value + self.bias.value
        return y, (xhat, inv_std)

    def backward(self, grad_out, cache):
        xhat, inv_std = cache
        d = xhat.shape[1]
        self.gain.grad += (grad_out * xhat).sum(axis=0)
        self.bias.grad += grad_out.sum(axis=0)
        dxhat = grad_out * self.gain.value
        # Standard layer-norm gradient with both mean and variance terms.
        return (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) * inv_std


class Dropout(Module):
    """Inverted dropout: active only in train mode, identity in eval."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, ctx: Context = EVAL):
        if not ctx.train or self.rate == 0.0:
            return x, None
        if ctx.rng is None:
            raise ConfigurationError("train-mode dropout requires a Context rng")
        keep = 1.0 - self.rate
        mask = (ctx.rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, grad_out, cache):
        if cache is None:
            return grad_out
        return grad_out * cache


class Sequential(Module):
    def __init__(self, modules: list[Module]):
        self.modules = list(modules)

    def params(self) -> list[Parameter]:
        out: list[Parameter] = []
        for m in self.modules:
            out.extend(m.params())
        return out

    def forward(self, x, ctx: Context = EVAL):
        caches = []
        for m in self.modules:
            x, c = m.forward(x, ctx)
            caches.append(c)
        return x, caches

    def backward(self, grad_out, cache):
        for m, c in zip(reversed(self.modules), reversed(cache)):
            grad_out = m.backward(grad_out, c)
        return grad_out


class Residual(Module):
    """y = x + inner(x); inner must preserve width."""

    def __init__(self, inner: Module):
        self.inner = inner

    def params(self) -> list[Parameter]:
        return self.inner.params()

    def forward(self, x, ctx: Context = EVAL):
        y, c = self.inner.forward(x, ctx)
        if y.shape != x.shape:
            raise ConfigurationError(
                f"residual branch changed shape {x.shape} -> {y.shape}")
        return x + y, c

    def backward(self, grad_out, cache):
        return grad_out + self.inner.backward(grad_out, cache)


def residual_block(width: int, dropout: float, rng: np.random.Generator,
                   name: str = "block", dtype=np.float64) -> Residual:
    """LayerNorm -> affine -> relu -> dropout -> affine, wrapped in a skip."""
    return Residual(Sequential([
        LayerNorm(width, name=f"{name}.ln", dtype=dtype),
        Affine(width, width, rng, name=f"{name}.fc1", dtype=dtype),
        Relu(),
        Dropout(dropout),
        Affine(width, width, rng, name=f"{name}.fc2", dtype=dtype),
    ]))


@dataclass
class LayerSpec:
    """One dense layer: optional pre-norm, affine, activation tag, dropout."""

    in_dim: int
    out_dim: int
    activation: str = "identity"  # relu | identity
    layer_norm: bool = False
    dropout: float = 0.0


class DenseNet(Module):
    """An MLP assembled from ``LayerSpec`` entries.

    Consecutive layer dimensions must chain. The flat module list keeps
    forward/backward trivial while the specs retain the declarative shape.
    """

    def __init__(self, specs: list[LayerSpec], rng: np.random.Generator,
                 name: str = "net", dtype=np.float64):
        if not specs:
            raise ConfigurationError("DenseNet needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigurationError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        modules: list[Module] = []
        for i, s in enumerate(specs):
            if s.activation not in ("relu", "identity"):
                raise ConfigurationError(f"unknown activation {s.activation!r}")
            if s.layer_norm:
                modules.append(LayerNorm(s.in_dim, name=f"{name}.l{i}.ln", dtype=dtype))
            modules.append(Affine(s.in_dim, s.out_dim, rng, name=f"{name}.l{i}", dtype=dtype))
            if s.activation == "relu":
                modules.append(Relu())
            if s.dropout > 0:
                modules.append(Dropout(s.dropout))
        self.specs = list(specs)
        self.net = Sequential(modules)
        self.in_dim = specs[0].in_dim
        self.out_dim = specs[-1].out_dim

    def params(self) -> list[Parameter]:
        return self.net.params()

    def forward(self, x, ctx: Context = EVAL):
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in network input")
        return self.net.forward(x, ctx)

    def backward(self, grad_out, cache):
        return self.net.backward(grad_out, cache)


def mlp(dims: list[int], rng: np.random.Generator, activation: str = "relu",
        final_activation: str = "identity", name: str = "mlp", dtype=np.float64) -> DenseNet:
    """Plain MLP: hidden layers use `activation`, last layer `final_activation`."""
    specs = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        specs.append(LayerSpec(a, b, activation=final_activation if last else activation))
    return DenseNet(specs, rng, name=name, dtype=dtype)


def sinusoidal_embed(t: int | np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sin/cos positional encoding of timestep indices.

    Layout per pair i: [sin(t * w_i), cos(t * w_i)] with w_i = 10000^(-2i/dim),
    so t=0 maps to [0, 1, 0, 1, ...]. Accepts a scalar (returns shape (dim,))
    or an integer vector (returns shape (n, dim)).
    """
    if dim <= 0 or dim % 2 != 0:
        raise ConfigurationError(f"embedding width must be positive and even, got {dim}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t_arr < 0):
        raise ConfigurationError("timestep index must be nonnegative")
    half = dim // 2
    freqs = np.power(10000.0, -2.0 * np.arange(half) / dim)
    angles = t_arr[:, None] * freqs[None, :]
    out = np.empty((t_arr.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return out[0]
    return out
