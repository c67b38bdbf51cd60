"""
Stateful layers over the tensor primitives.

A :class:`Module` owns named parameters (trainable tensors), named buffers
(batch-norm running statistics) and child modules, all kept in insertion
order so parameter names and iteration order are deterministic.
"""
import math

import numpy as np

from spatiospatial.tensor import ops
from spatiospatial.tensor.core import DEFAULT_DTYPE, Tensor
from spatiospatial.utils.errors import ContractError


class Parameter(Tensor):
    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, value):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_children(self):
        return iter(self._modules.items())

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._modules.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._modules.items():
            yield from child.named_buffers(prefix + name + ".")

    def state(self):
        """Ordered name -> tensor map of parameters followed by buffers."""
        entries = dict(self.named_parameters())
        entries.update(self.named_buffers())
        return entries

    def modules(self):
        yield self
        for child in self._modules.values():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def to(self, dtype):
        """Cast every parameter and buffer in place to float32 or float64."""
        dtype = np.dtype(dtype)
        for t in list(self.state().values()):
            t.data = np.ascontiguousarray(t.data, dtype=dtype)
            t.grad = None
        return self

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class Conv3d(Module):
    """
    Bias-free 3D convolution (a batch norm always follows).
    Weights ~ N(0, 2 / fan_out), fan_out = out_channels * kd * kh * kw.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.params = ops.Conv3dParams(kernel=kernel, stride=stride, padding=padding,
                                       in_channels=in_channels, out_channels=out_channels)
        kd, kh, kw = self.params.kernel
        fan_out = out_channels * kd * kh * kw
        rng = rng if rng is not None else np.random.default_rng()
        std = math.sqrt(2.0 / fan_out)
        self.weight = Parameter(rng.normal(0.0, std, size=(out_channels, in_channels, kd, kh, kw)), dtype=dtype)

    def forward(self, x):
        return ops.conv3d(x, self.weight, None, self.params)

    def __repr__(self):
        p = self.params
        return (f"Conv3d({p.in_channels}, {p.out_channels}, kernel={p.kernel}, "
                f"stride={p.stride}, padding={p.padding})")


class BatchNorm3d(Module):
    def __init__(self, num_features, momentum=0.1, eps=1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features), dtype=dtype)
        self.beta = Parameter(np.zeros(num_features), dtype=dtype)
        self.register_buffer("running_mean", Tensor(np.zeros(num_features), dtype=dtype))
        self.register_buffer("running_var", Tensor(np.ones(num_features), dtype=dtype))

    def forward(self, x):
        return ops.batchnorm3d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               momentum=self.momentum, eps=self.eps, training=self.training)

    def __repr__(self):
        return f"BatchNorm3d({self.gamma.size})"


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class Linear(Module):
    """Fully connected layer; weight and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, in_features, out_features, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_features, in_features)), dtype=dtype)
        self.bias = Parameter(rng.uniform(-bound, bound, size=(out_features,)), dtype=dtype)

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Dropout(Module):
    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng()

    def forward(self, x):
        return ops.dropout(x, self.p, self.training, self.rng)


class AdaptiveAvgPoolUnit(Module):
    def forward(self, x):
        return ops.adaptive_avg_pool_unit(x)


class Sequential(Module):
    """Children run in order; names are the keyword names given."""

    def __init__(self, **layers):
        super().__init__()
        for name, layer in layers.items():
            setattr(self, name, layer)

    def forward(self, x):
        for _, layer in self.named_children():
            x = layer(x)
        return x


def count_parameters(module, trainable_only=True):
    """Sum of element counts over the module's parameters."""
    return sum(p.size for p in module.parameters() if p.requires_grad or not trainable_only)
