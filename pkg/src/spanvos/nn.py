"""Parameter containers, layers, and the optimizer.

Weights live in Tensors with requires_grad=True.  Modules register
parameters and submodules in insertion order so that parameter iteration,
checkpoints, and optimizer state are all deterministic given the config
and seed.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import SchemaError


class Module:
    """Container tracking parameters and submodules in registration order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register(self, name, value):
        """Register a parameter or submodule under an explicit name."""
        setattr(self, name, value)
        return value

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: np.array(p.data) for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise SchemaError(f"state mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise SchemaError(f"shape mismatch for '{name}': {arr.shape} vs {p.shape}")
            p.data = arr

    def astype(self, dtype):
        """Cast all parameters in place (f32 for training, f64 for checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self.register(f"item{len(self._items)}", module)
        self._items.append(module)
        return module

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def xavier_uniform(rng, fan_in, fan_out, shape=None, dtype=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    arr = rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
    return arr.astype(dtype or ad.default_dtype())


def he_normal(rng, fan_in, shape, dtype=None):
    arr = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return arr.astype(dtype or ad.default_dtype())


class Linear(Module):
    """y = x @ w + b with w stored (in_dim, out_dim)."""

    def __init__(self, in_dim, out_dim, rng, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((in_dim, out_dim), dtype=ad.default_dtype())
        else:
            w = xavier_uniform(rng, in_dim, out_dim)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=ad.default_dtype()), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class MLP(Module):
    """Linear stack with ReLU between layers and none after the last."""

    def __init__(self, dims, rng, zero_last=False):
        super().__init__()
        self.layers = ModuleList()
        for i in range(len(dims) - 1):
            zero = zero_last and i == len(dims) - 2
            self.layers.append(Linear(dims[i], dims[i + 1], rng, zero_init=zero))

    def __call__(self, x):
        return ad.mlp_forward(x, [(layer.w, layer.b) for layer in self.layers])


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, pad, rng):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        self.w = Tensor(he_normal(rng, fan_in, (out_ch, in_ch, kernel, kernel)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=ad.default_dtype()), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        y = ad.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        bias = ad.reshape(self.b, (-1, 1, 1))
        return ad.add(y, bias)


class CrossAttention(Module):
    """Single attention layer: softmax(Wq(q) Wk(kv)ᵀ / sqrt(d)) Wv(kv), then Wo.

    No residual or normalization inside; callers add those where the model
    definition asks for them.  Supports multiple heads by channel split.
    """

    def __init__(self, dim, rng, num_heads=1):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def zero_(self):
        """Zero every projection (used to expose the pure residual path)."""
        for layer in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            layer.w.data[:] = 0
            layer.b.data[:] = 0
        return self

    def _split(self, x):
        # (..., L, C) -> (..., H, L, C/H)
        h = self.num_heads
        lead = x.shape[:-2]
        l, c = x.shape[-2], x.shape[-1]
        x = ad.reshape(x, lead + (l, h, c // h))
        order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return ad.transpose(x, order)

    def _merge(self, x):
        lead = x.shape[:-3]
        h, l, d = x.shape[-3], x.shape[-2], x.shape[-1]
        order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        x = ad.transpose(x, order)
        return ad.reshape(x, lead + (l, h * d))

    def forward_qkv(self, q_in, k_in, v_in):
        """Separate sources for queries, keys, and values (e.g. position-free values)."""
        q = self.q_proj(q_in)
        k = self.k_proj(k_in)
        v = self.v_proj(v_in)
        if self.num_heads > 1:
            out = ad.scaled_dot_attention(self._split(q), self._split(k), self._split(v))
            out = self._merge(out)
        else:
            out = ad.scaled_dot_attention(q, k, v)
        return self.out_proj(out)

    def __call__(self, query, kv):
        return self.forward_qkv(query, kv, kv)


class Adam:
    """Adam with bias correction and a single step-decay on the learning rate."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 decay_step=None, decay_factor=0.1):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay_step = decay_step
        self.decay_factor = decay_factor
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self):
        if self.decay_step is not None and self.t >= self.decay_step:
            return self.lr * self.decay_factor
        return self.lr

    def step(self):
        self.t += 1
        lr = self.current_lr()
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_checkpoint(path, module, config_dict):
    """Write weights plus the run config into one .npz (no pickling)."""
    payload = {f"param::{k}": v for k, v in module.state_dict().items()}
    payload["__config__"] = np.frombuffer(
        json.dumps(config_dict, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Return (state_dict, config_dict) from a checkpoint file."""
    with np.load(path, allow_pickle=False) as blob:
        if "__config__" not in blob:
            raise SchemaError(f"not a checkpoint file: {path}")
        config = json.loads(bytes(blob["__config__"]).decode("utf-8"))
        state = {k[len("param::"):]: blob[k] for k in blob.files if k.startswith("param::")}
    return state, config
