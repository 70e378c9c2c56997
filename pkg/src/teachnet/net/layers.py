"""Numpy layers with explicit forward caches and hand-written backward passes.

Every layer keeps its parameters in ``self.params`` (float32 arrays).
``forward(x, train)`` returns ``(out, cache)``; ``backward(cache, dout)``
returns ``(dx, grads)`` where ``grads`` mirrors ``self.params``. Layers hold no
per-call state, so a forward on shared parameters is reentrant.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class Layer:
    def __init__(self):
        self.params = {}
        self.buffers = {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, cache, dout):
        raise NotImplementedError

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def he_normal(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


class Linear(Layer):
    """Fully connected layer. ``bias=False`` is used in front of batch norm,
    whose mean subtraction would cancel a bias exactly."""

    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.params["W"] = he_normal(rng, (n_in, n_out), n_in)
        if bias:
            self.params["b"] = np.zeros(n_out, dtype=DTYPE)

    def forward(self, x, train=True):
        out = x @ self.params["W"]
        if "b" in self.params:
            out = out + self.params["b"]
        return out, x

    def backward(self, x, dout):
        grads = {"W": x.T @ dout}
        if "b" in self.params:
            grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T, grads


class ReLU(Layer):
    def forward(self, x, train=True):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dout):
        return dout * mask, {}


class Sigmoid(Layer):
    def forward(self, x, train=True):
        out = (1.0 / (1.0 + np.exp(-x))).astype(x.dtype)
        return out, out

    def backward(self, out, dout):
        return dout * out * (1.0 - out), {}


class Flatten(Layer):
    def forward(self, x, train=True):
        return x.reshape(len(x), -1), x.shape

    def backward(self, shape, dout):
        return dout.reshape(shape), {}


class Conv2D(Layer):
    """Square-kernel convolution, NCHW, zero padding, im2col implementation."""

    def __init__(self, c_in, c_out, rng, kernel=3, stride=1, pad=1):
        super().__init__()
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = c_in * kernel * kernel
        self.params["W"] = he_normal(rng, (c_out, c_in, kernel, kernel), fan_in)
        self.params["b"] = np.zeros(c_out, dtype=DTYPE)

    def out_size(self, n):
        return (n + 2 * self.pad - self.kernel) // self.stride + 1

    def _cols(self, xp):
        k, s = self.kernel, self.stride
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        N, C, Ho, Wo = win.shape[:4]
        # (N, Ho, Wo, C, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
        return cols, Ho, Wo

    def forward(self, x, train=True):
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols, Ho, Wo = self._cols(xp)
        W = self.params["W"]
        out = cols @ W.reshape(len(W), -1).T + self.params["b"]
        out = out.reshape(len(x), Ho, Wo, -1).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (x.shape, cols, Ho, Wo)

    def backward(self, cache, dout):
        xshape, cols, Ho, Wo = cache
        N, C, H, Wd = xshape
        k, s, p = self.kernel, self.stride, self.pad
        W = self.params["W"]
        F = len(W)
        d = dout.transpose(0, 2, 3, 1).reshape(-1, F)
        grads = {"W": (d.T @ cols).reshape(W.shape), "b": d.sum(axis=0)}
        dcols = (d @ W.reshape(F, -1)).reshape(N, Ho, Wo, C, k, k)
        dxp = np.zeros((N, C, H + 2 * p, Wd + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + H, p:p + Wd] if p else dxp
        return dx, grads


class BatchNorm1d(Layer):
    """Batch normalization over the batch axis of ``(N, D)`` activations.

    Training uses batch statistics and, when ``update_stats`` is set,
    refreshes the running averages. Inference uses the running averages.
    """

    def __init__(self, dim, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(dim, dtype=DTYPE)
        self.params["beta"] = np.zeros(dim, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(dim, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(dim, dtype=DTYPE)
        self.update_stats = True

    def forward(self, x, train=True):
        g, b = self.params["gamma"], self.params["beta"]
        if not train:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv
            return (g * xhat + b).astype(x.dtype), ("eval", xhat, inv)
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mu) * inv
        if self.update_stats:
            m = self.momentum
            n = len(x)
            unbiased = var * (n / max(n - 1, 1))
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mu).astype(DTYPE)
            self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * unbiased).astype(DTYPE)
        return g * xhat + b, ("train", xhat, inv)

    def backward(self, cache, dout):
        mode, xhat, inv = cache
        g = self.params["gamma"]
        grads = {"gamma": (dout * xhat).sum(axis=0), "beta": dout.sum(axis=0)}
        dxhat = dout * g
        if mode == "eval":
            return dxhat * inv, grads
        n = len(dout)
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, grads


class Sequential(Layer):
    """Chain of layers; parameters are exposed as ``"<index>.<name>"``."""

    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    @property
    def params(self):
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.params.items()}

    @params.setter
    def params(self, value):
        if value:
            raise AttributeError("set parameters on the member layers")

    @property
    def buffers(self):
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.buffers.items()}

    @buffers.setter
    def buffers(self, value):
        if value:
            raise AttributeError("set buffers on the member layers")

    def set_param(self, name, value):
        i, k = name.split(".", 1)
        layer = self.layers[int(i)]
        if isinstance(layer, Sequential):
            layer.set_param(k, value)
        elif k in layer.params:
            layer.params[k] = value
        else:
            layer.buffers[k] = value

    def forward(self, x, train=True):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, train)
            caches.append(c)
        return x, caches

    def backward(self, caches, dout):
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            dout, g = self.layers[i].backward(caches[i], dout)
            for k, v in g.items():
                grads[f"{i}.{k}"] = v
        return dout, grads


class ResidualBlock(Sequential):
    """``relu(x + conv(relu(conv(x))))`` with 3x3 same-size convolutions."""

    def __init__(self, channels, rng):
        super().__init__(Conv2D(channels, channels, rng), ReLU(), Conv2D(channels, channels, rng))
        self.out_relu = ReLU()

    def forward(self, x, train=True):
        y, caches = super().forward(x, train)
        out, mask = self.out_relu.forward(x + y)
        return out, (caches, mask)

    def backward(self, cache, dout):
        caches, mask = cache
        d, _ = self.out_relu.backward(mask, dout)
        dx, grads = super().backward(caches, d)
        return dx + d, grads
