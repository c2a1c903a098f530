"""Parametric layers: convolution, group norm, dense, spectral attention."""
import math

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .tensor import Tensor, reduce_mean, relu, reshape, sigmoid, mul


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def kaiming_normal(shape, fan_in, rng, dtype=np.float32):
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def gn_groups(channels, max_groups=32):
    """Group count used for ``channels`` features: ``gcd(32, C)``."""
    return math.gcd(max_groups, channels)


class Module:
    """Minimal parameter container.

    Parameters are Tensors with ``requires_grad`` stored as attributes;
    children are Modules, or lists of Modules, stored as attributes. Names
    follow attribute insertion order, e.g. ``block1.conv.weight``.
    """

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    """Square-kernel convolution, padding ``(k-1)//2`` on both sides.

    Output extent is ``(n + 2p - k) // stride + 1``: identical at stride 1,
    ``ceil(n / 2)`` at stride 2 for k=3.
    """

    def __init__(self, cin, cout, kernel=3, stride=1, bias=True, rng=None):
        if kernel not in (1, 3):
            raise ConfigError(f"kernel must be 1 or 3, got {kernel}")
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        if cin < 1 or cout < 1:
            raise ConfigError(f"conv needs positive channels, got {cin}->{cout}")
        rng = _rng(rng)
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.padding = (kernel - 1) // 2
        self.weight = Tensor(kaiming_normal((cout, cin, kernel, kernel), cin * kernel * kernel, rng),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True) if bias else None

    def out_size(self, h, w):
        return (F.conv_out_size(h, self.kernel, self.stride, self.padding),
                F.conv_out_size(w, self.kernel, self.stride, self.padding))

    def forward(self, x):
        if x.shape[0] != self.cin:
            raise ShapeError(f"conv expects {self.cin} input channels, got {x.shape[0]}")
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, channels, num_groups=None, eps=1e-5):
        num_groups = gn_groups(channels) if num_groups is None else num_groups
        if num_groups < 1 or channels % num_groups:
            raise ConfigError(f"{channels} channels cannot be split into {num_groups} groups")
        self.channels, self.num_groups, self.eps = channels, num_groups, eps
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta_shift = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def forward(self, x):
        if x.shape[0] != self.channels:
            raise ShapeError(f"group norm expects {self.channels} channels, got {x.shape[0]}")
        return F.group_norm(x, self.gamma, self.beta_shift, self.num_groups, self.eps)


class Dense(Module):
    def __init__(self, fan_in, fan_out, bias=False, rng=None):
        rng = _rng(rng)
        self.weight = Tensor(kaiming_normal((fan_out, fan_in), fan_in, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out, np.float32), requires_grad=True) if bias else None

    def forward(self, v):
        return F.linear(v, self.weight, self.bias)


class SpectralAttention(Module):
    """Channel gating from the spatial mean of each feature map.

    ``T = sigmoid(W2 relu(W1 mean_hw(X)))``, ``Y = T * X`` per channel.
    The bottleneck width is ``max(1, C // r)``; neither dense layer has a bias.
    """

    def __init__(self, channels, reduction_ratio=16, rng=None):
        if reduction_ratio < 1:
            raise ConfigError(f"reduction ratio must be positive, got {reduction_ratio}")
        rng = _rng(rng)
        self.channels = channels
        self.reduction_ratio = reduction_ratio
        self.hidden = max(1, channels // reduction_ratio)
        self.fc1 = Dense(channels, self.hidden, rng=rng)
        self.fc2 = Dense(self.hidden, channels, rng=rng)

    def gate(self, x):
        s = reduce_mean(x, (1, 2))
        return sigmoid(self.fc2(relu(self.fc1(s))))

    def forward(self, x):
        if x.shape[0] != self.channels:
            raise ShapeError(f"attention expects {self.channels} channels, got {x.shape[0]}")
        t = self.gate(x)
        return mul(x, reshape(t, (self.channels, 1, 1)))


class BasicModule(Module):
    """3x3 conv -> group norm -> ReLU."""

    def __init__(self, cin, cout, rng=None):
        rng = _rng(rng)
        self.conv = Conv2d(cin, cout, 3, 1, rng=rng)
        self.gn = GroupNorm(cout)

    def forward(self, x):
        return relu(self.gn(self.conv(x)))


class Downsample(Module):
    """Stride-2 3x3 conv -> ReLU (no normalization)."""

    def __init__(self, cin, cout, rng=None):
        self.conv = Conv2d(cin, cout, 3, 2, rng=_rng(rng))

    def forward(self, x):
        return relu(self.conv(x))
