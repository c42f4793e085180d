"""Stateful layer wrappers around :mod:`.functional` with a Sequential container."""

from __future__ import annotations

import numpy as np

from . import functional as F


class Layer:
    """A forward/backward pair with named parameters and their gradients."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"{type(self).__name__}({shapes})"


def _init(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)


class Conv3D(Layer):
    def __init__(self, c_in, c_out, k=3, pad=1, rng=None, dtype=np.float32, input_grad=True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.pad = pad
        self.input_grad = input_grad
        self.params["weight"] = _init(rng, (c_out, c_in, k, k, k), c_in * k ** 3, dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x):
        out, self._cache = F.conv3d_forward(x, self.params["weight"], self.params["bias"], self.pad)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv3d_backward(dout, self._cache, need_input_grad=self.input_grad)
        self.grads["weight"], self.grads["bias"] = dw, db
        return dx


class BatchNorm(Layer):
    def __init__(self, channels, dtype=np.float32, momentum=F.BN_MOMENTUM, eps=F.BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x):
        out, self._cache = F.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.running_mean, self.running_var,
            self.training, self.momentum, self.eps)
        return out

    def backward(self, dout):
        dx, dg, db = F.batchnorm_backward(dout, self._cache)
        self.grads["gamma"], self.grads["beta"] = dg, db
        return dx


class Dense(Layer):
    def __init__(self, f_in, f_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _init(rng, (f_out, f_in), f_in, dtype)
        self.params["bias"] = np.zeros(f_out, dtype=dtype)

    def forward(self, x):
        out, self._cache = F.dense_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._cache)
        self.grads["weight"], self.grads["bias"] = dw, db
        return dx


class ReLU(Layer):
    def forward(self, x):
        out, self._cache = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._cache)


class MaxPool3D(Layer):
    def forward(self, x):
        out, self._cache = F.maxpool3d_forward(x)
        return out

    def backward(self, dout):
        return F.maxpool3d_backward(dout, self._cache)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class Dropout(Layer):
    def __init__(self, rate, rng=None):
        super().__init__()
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x):
        out, self._cache = F.dropout_forward(x, self.rate, self.rng, self.training)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self._cache)


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def set_training(self, flag: bool):
        for layer in self.layers:
            layer.training = flag

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}{i}", layer
