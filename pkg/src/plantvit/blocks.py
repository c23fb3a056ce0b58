"""Parameterized layers and the network's named building blocks.

``Module`` gives a tiny torch-like container: parameters and buffers are
discovered from attributes in definition order, which fixes the dotted names
used by checkpoints.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .errors import ConfigError


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in getattr(self, "_buffers", {}).items():
            yield prefix + name, value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters followed by buffers, as copies."""
        state = OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())
        state.update((n, b.copy()) for n, b in self.named_buffers())
        return state

    def load_state_dict(self, state: dict, strict: bool = True):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        if strict:
            missing = (set(own) | set(bufs)) - set(state)
            extra = set(state) - set(own) - set(bufs)
            if missing or extra:
                raise ConfigError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in state.items():
            target = own[name].data if name in own else bufs.get(name)
            if target is None:
                continue
            if target.shape != arr.shape:
                raise ConfigError(f"{name}: shape {arr.shape} != {target.shape}")
            target[...] = arr


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# primitive layers
# ---------------------------------------------------------------------------

class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, padding=0, groups=1, bias=True):
        if cin % groups or cout % groups:
            raise ConfigError(f"Conv2d: channels {cin}->{cout} not divisible by groups={groups}")
        fan_in = (cin // groups) * kernel * kernel
        self.weight = Parameter(_uniform(rng, (cout, cin // groups, kernel, kernel), fan_in))
        self.bias = Parameter(_uniform(rng, (cout,), fan_in), decay=False) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Parameter(np.ones(channels), decay=False)
        self.beta = Parameter(np.zeros(channels), decay=False)
        dt = ag.get_dtype()
        self._buffers = OrderedDict(running_mean=np.zeros(channels, dtype=dt),
                                    running_var=np.ones(channels, dtype=dt))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ag.batch_norm2d(x, self.gamma, self.beta, self._buffers["running_mean"],
                               self._buffers["running_var"], self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, din, dout, rng, bias=True):
        self.weight = Parameter(_uniform(rng, (dout, din), din))
        self.bias = Parameter(_uniform(rng, (dout,), din), decay=False) if bias else None

    def forward(self, x):
        return ag.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gamma = Parameter(np.ones(d), decay=False)
        self.beta = Parameter(np.zeros(d), decay=False)
        self.eps = eps

    def forward(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


# ---------------------------------------------------------------------------
# named blocks
# ---------------------------------------------------------------------------

class DepthConvBlock(Module):
    """Depthwise separable convolution: depthwise -> BN -> ReLU -> 1x1 -> BN [-> ReLU].

    The default is a 3x3 depthwise filter with padding 1. The patch
    embedding uses ``kernel == stride == patch size``, no padding and no
    final activation.
    """

    def __init__(self, cin, cout, rng, stride=1, kernel=3, padding=1, final_act=True):
        self.depthwise = Conv2d(cin, cin, kernel, rng, stride=stride, padding=padding, groups=cin, bias=False)
        self.bn1 = BatchNorm2d(cin)
        self.pointwise = Conv2d(cin, cout, 1, rng)
        self.bn2 = BatchNorm2d(cout)
        self.stride, self.final_act = stride, final_act

    def forward(self, x):
        H, W = x.shape[2:]
        if H % self.stride or W % self.stride:
            raise ConfigError(f"DepthConvBlock: spatial size {H}x{W} not divisible by stride {self.stride}")
        x = ag.relu(self.bn1(self.depthwise(x)))
        x = self.bn2(self.pointwise(x))
        return ag.relu(x) if self.final_act else x


class GroupConvBlock(Module):
    """3x3 group convolution with ``C/2`` groups and an identity residual.

    ``out = ReLU(BN(groupconv(x)) + x)``.
    """

    def __init__(self, channels, rng):
        if channels % 2:
            raise ConfigError(f"GroupConvBlock needs an even channel count, got {channels}")
        self.conv = Conv2d(channels, channels, 3, rng, padding=1, groups=channels // 2)
        self.bn = BatchNorm2d(channels)

    def forward(self, x):
        return ag.relu(self.bn(self.conv(x)) + x)


class CBAM(Module):
    """Channel attention followed by spatial attention.

    The channel MLP (``w0``: C -> C/r, ``w1``: C/r -> C, bias-free) is shared
    between the average- and max-pooled descriptors. The spatial map comes
    from a 7x7 convolution over the stacked channel-mean and channel-max maps.
    """

    def __init__(self, channels, rng, reduction=8):
        if channels % reduction:
            raise ConfigError(f"CBAM: channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.w0 = Parameter(_uniform(rng, (hidden, channels), channels))
        self.w1 = Parameter(_uniform(rng, (channels, hidden), hidden))
        self.spatial_weight = Parameter(_uniform(rng, (1, 2, 7, 7), 2 * 49))

    def _mlp(self, v):
        return ag.linear(ag.relu(ag.linear(v, self.w0)), self.w1)

    def channel_map(self, F):
        B, C = F.shape[:2]
        logits = self._mlp(ag.global_avg_pool2d(F)) + self._mlp(ag.global_max_pool2d(F))
        return ag.sigmoid(logits).reshape(B, C, 1, 1)

    def spatial_map(self, F):
        pooled = ag.concat([ag.channel_avg(F), ag.channel_max(F)], axis=1)
        return ag.sigmoid(ag.conv2d(pooled, self.spatial_weight, padding=3))

    def channel(self, F):
        return self.channel_map(F) * F

    def spatial(self, F):
        return self.spatial_map(F) * F

    def forward(self, F):
        return self.spatial(self.channel(F))


class PatchEmbedding(Module):
    """CBAM -> patch DepthConv (kernel = stride = p) -> row-major tokens + positional table."""

    def __init__(self, cin, dim, patch, num_tokens, rng, cbam=True, reduction=8):
        self.cbam = CBAM(cin, rng, reduction) if cbam else None
        self.proj = DepthConvBlock(cin, dim, rng, stride=patch, kernel=patch, padding=0, final_act=False)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(num_tokens, dim)))
        self.patch = patch

    def forward(self, x):
        H, W = x.shape[2:]
        p = self.patch
        if H % p or W % p:
            raise ConfigError(f"PatchEmbedding: feature map {H}x{W} not divisible by patch size {p}")
        L = (H // p) * (W // p)
        if L != self.pos.shape[0]:
            raise ConfigError(f"PatchEmbedding: {L} tokens but positional table has {self.pos.shape[0]}")
        if self.cbam is not None:
            x = self.cbam(x)
        t = self.proj(x)
        B, d = t.shape[:2]
        tokens = t.reshape(B, d, L).transpose(0, 2, 1)
        return tokens + self.pos


class LinearSelfAttention(Module):
    """Separable self-attention with a single score column; cost is linear in tokens.

    One projection yields a score column ``q`` (1), keys and values (d each).
    Scores are softmax-normalized over tokens, the keys are pooled into one
    context vector, and the output is ``W_out(GELU(V) * context) + b_out``.
    """

    def __init__(self, dim, rng, dropout=0.0):
        self.qkv = Linear(dim, 1 + 2 * dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dim, self.dropout = dim, dropout

    def scores(self, x, rng=None):
        """Return ``(alpha, keys, values)`` after projection and score dropout."""
        d = self.dim
        proj = self.qkv(x)
        q = proj[:, :, :1]
        k = proj[:, :, 1:1 + d]
        v = proj[:, :, 1 + d:]
        alpha = ag.dropout(ag.softmax(q, axis=1), self.dropout, self.training, rng)
        return alpha, k, v

    def context(self, x, rng=None):
        alpha, k, _ = self.scores(x, rng)
        return (alpha * k).sum(axis=1, keepdims=True)

    def forward(self, x, rng=None):
        alpha, k, v = self.scores(x, rng)
        ctx = (alpha * k).sum(axis=1, keepdims=True)
        return self.out(ag.gelu(v) * ctx)


class EncoderBlock(Module):
    """``X' = LN(X + Attn(X))``; ``X'' = LN(X' + FFN(X'))`` with a GELU FFN."""

    def __init__(self, dim, ffn_dim, rng, dropout=0.0):
        self.attn = LinearSelfAttention(dim, rng, dropout)
        self.ln1 = LayerNorm(dim)
        self.ffn1 = Linear(dim, ffn_dim, rng)
        self.ffn2 = Linear(ffn_dim, dim, rng)
        self.ln2 = LayerNorm(dim)
        self.dropout = dropout

    def ffn(self, x, rng=None):
        hidden = ag.dropout(ag.gelu(self.ffn1(x)), self.dropout, self.training, rng)
        return self.ffn2(hidden)

    def forward(self, x, rng=None):
        x = self.ln1(x + self.attn(x, rng))
        return self.ln2(x + self.ffn(x, rng))


class ClassifierHead(Module):
    """Token mean -> dropout -> linear logits."""

    def __init__(self, dim, num_classes, rng, dropout=0.0):
        self.fc = Linear(dim, num_classes, rng)
        self.fc.bias.data[...] = 0.0
        self.dropout = dropout

    def forward(self, x, rng=None):
        z = ag.dropout(ag.seq_mean(x), self.dropout, self.training, rng)
        return self.fc(z)
