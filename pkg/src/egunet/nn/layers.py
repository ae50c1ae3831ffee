"""Dense and convolutional layers with hand-written backward passes.

Arrays are float64 numpy arrays. Image tensors use NHWC layout. Every layer
caches what it needs during a training-mode forward pass and releases it in
``backward``; gradients are *accumulated* into the ``grad`` slot of each
:class:`Param`, so a parameter object referenced by several layers receives
the sum of their contributions.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class ConfigError(ValueError):
    """Invalid layer or optimizer configuration."""


class StateError(RuntimeError):
    """Layer used out of order (e.g. backward before forward)."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf reached a layer boundary."""


def check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values entering {where}")
    return x


class Param:
    """A learnable array plus its gradient accumulator."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def glorot_uniform(shape, fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class. Subclasses implement ``_forward`` and ``_backward``.

    Setting ``input_grad = False`` on a layer that reads raw data lets
    ``backward`` skip the input gradient and return ``None``.
    """

    kind = "layer"
    input_grad = True

    def __init__(self):
        self._cache = None

    def params(self):
        return []

    def forward(self, x, train=False):
        check_finite(x, self.kind)
        out, cache = self._forward(np.asarray(x, dtype=np.float64), train)
        self._cache = cache if train else None
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a training forward pass")
        grad_in = self._backward(np.asarray(grad_out, dtype=np.float64), self._cache)
        self._cache = None
        return grad_in

    __call__ = forward


# ---------------------------------------------------------------------------
# dense


def dense_forward(x, W, b):
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, weights {W.shape}, bias {b.shape}")
    return x @ W + b


class Dense(Layer):
    kind = "dense"

    def __init__(self, fan_in, fan_out, rng=None, weight=None, bias=None):
        super().__init__()
        if weight is None:
            if rng is None:
                raise ConfigError("dense: need rng or explicit weight")
            weight = Param(glorot_uniform((fan_in, fan_out), fan_in, fan_out, rng), "W")
        if bias is None:
            bias = Param(np.zeros(fan_out), "b")
        if weight.shape != (fan_in, fan_out) or bias.shape != (fan_out,):
            raise ShapeError("dense: shared parameter shapes do not match")
        self.W, self.b = weight, bias

    def params(self):
        return [self.W, self.b]

    def _forward(self, x, train):
        return dense_forward(x, self.W.value, self.b.value), x

    def _backward(self, g, x):
        self.W.grad += x.T @ g
        self.b.grad += g.sum(axis=0)
        return g @ self.W.value.T if self.input_grad else None


# ---------------------------------------------------------------------------
# convolution (stride 1, same padding, odd kernels)


def _check_kernel(kernel):
    kh, kw = kernel.shape[:2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel dims must be odd, got {kh}x{kw}")
    return kh, kw


def _im2col(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    # (N, H, W, C, kh, kw) -> (N, H, W, kh, kw, C)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    n, h, w = x.shape[:3]
    return win.reshape(n * h * w, kh * kw * x.shape[3])


def _conv_cols(x, kernel):
    """Same-padded cross-correlation without bias; also returns the patch matrix."""
    kh, kw, c_in, c_out = kernel.shape
    if kh == 1 and kw == 1:
        cols = x.reshape(-1, c_in)
    else:
        cols = _im2col(x, kh, kw)
    return (cols @ kernel.reshape(-1, c_out)).reshape(*x.shape[:3], c_out), cols


def conv2d_forward(x, kernel, bias):
    """Same-padded cross-correlation. ``kernel`` is (kh, kw, c_in, c_out)."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_kernel(kernel)
    if x.ndim != 4 or x.shape[3] != kernel.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} vs kernel {kernel.shape}")
    return _conv_cols(x, kernel)[0] + bias


def _conv_grads(x, kernel, g, cols=None, need_dx=True):
    """Gradients of ``conv2d_forward(x, kernel, .)`` w.r.t. x and kernel.

    ``cols`` is the patch matrix of ``x`` if already available. The input
    gradient is the correlation of ``g`` with the adjoint kernel (``None``
    when ``need_dx`` is false).
    """
    kh, kw, c_in, c_out = kernel.shape
    if cols is None:
        cols = x.reshape(-1, c_in) if kh == kw == 1 else _im2col(x, kh, kw)
    dk = (g.reshape(-1, c_out).T @ cols).T.reshape(kernel.shape)
    dx = _conv_cols(g, _adjoint_kernel(kernel))[0] if need_dx else None
    return dx, dk


def _adjoint_kernel(kernel):
    # (kh, kw, a, b) -> spatially flipped (kh, kw, b, a)
    return kernel[::-1, ::-1].transpose(0, 1, 3, 2)


def deconv2d_forward(y, kernel, bias):
    """Transposed convolution, stride 1, same padding.

    ``kernel`` uses the conv layout (kh, kw, c_out, c_in) of the convolution
    it transposes, so ``deconv2d_forward(y, K, 0)`` is the exact adjoint of
    ``conv2d_forward(x, K, 0)``: it maps K.shape[3] channels to K.shape[2].
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_kernel(kernel)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 4 or y.shape[3] != kernel.shape[3]:
        raise ShapeError(f"deconv2d: input {y.shape} vs kernel {kernel.shape}")
    return conv2d_forward(y, _adjoint_kernel(kernel), bias)


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, kh, kw, c_in, c_out, rng=None, kernel=None, bias=None):
        super().__init__()
        shape = (kh, kw, c_in, c_out)
        if kernel is None:
            if rng is None:
                raise ConfigError("conv2d: need rng or explicit kernel")
            kernel = Param(glorot_uniform(shape, kh * kw * c_in, kh * kw * c_out, rng), "K")
        if bias is None:
            bias = Param(np.zeros(c_out), "b")
        if kernel.shape != shape or bias.shape != (c_out,):
            raise ShapeError("conv2d: shared parameter shapes do not match")
        _check_kernel(kernel.value)
        self.K, self.b = kernel, bias

    def params(self):
        return [self.K, self.b]

    def _forward(self, x, train):
        if x.ndim != 4 or x.shape[3] != self.K.shape[2]:
            raise ShapeError(f"conv2d: input {x.shape} vs kernel {self.K.shape}")
        out, cols = _conv_cols(x, self.K.value)
        return out + self.b.value, (x, cols)

    def _backward(self, g, cache):
        x, cols = cache
        dx, dk = _conv_grads(x, self.K.value, g, cols, self.input_grad)
        self.K.grad += dk
        self.b.grad += g.sum(axis=(0, 1, 2))
        return dx


class Deconv2D(Layer):
    """Transposed convolution mapping ``c_in`` to ``c_out`` channels.

    The kernel is stored as (kh, kw, c_out, c_in), the TensorFlow
    ``conv2d_transpose`` filter layout.
    """

    kind = "deconv2d"

    def __init__(self, kh, kw, c_in, c_out, rng=None, kernel=None, bias=None):
        super().__init__()
        shape = (kh, kw, c_out, c_in)
        if kernel is None:
            if rng is None:
                raise ConfigError("deconv2d: need rng or explicit kernel")
            kernel = Param(glorot_uniform(shape, kh * kw * c_in, kh * kw * c_out, rng), "K")
        if bias is None:
            bias = Param(np.zeros(c_out), "b")
        if kernel.shape != shape or bias.shape != (c_out,):
            raise ShapeError("deconv2d: shared parameter shapes do not match")
        _check_kernel(kernel.value)
        self.K, self.b = kernel, bias

    def params(self):
        return [self.K, self.b]

    def _forward(self, y, train):
        if y.ndim != 4 or y.shape[3] != self.K.shape[3]:
            raise ShapeError(f"deconv2d: input {y.shape} vs kernel {self.K.shape}")
        out, cols = _conv_cols(y, _adjoint_kernel(self.K.value))
        return out + self.b.value, (y, cols)

    def _backward(self, g, cache):
        y, cols = cache
        dy, dk_adj = _conv_grads(y, _adjoint_kernel(self.K.value), g, cols, self.input_grad)
        self.K.grad += _adjoint_kernel(dk_adj)
        self.b.grad += g.sum(axis=(0, 1, 2))
        return dy


# ---------------------------------------------------------------------------
# batch normalization


class BatchNorm(Layer):
    """Per-feature batch normalization over every axis but the last.

    Running statistics are plain buffers updated in place; passing
    ``running=(mean, var)`` makes several layers share the same buffers.
    """

    kind = "batchnorm"

    def __init__(self, features, momentum=0.9, eps=1e-5, gamma=None, beta=None, running=None):
        super().__init__()
        self.gamma = gamma if gamma is not None else Param(np.ones(features), "gamma")
        self.beta = beta if beta is not None else Param(np.zeros(features), "beta")
        if self.gamma.shape != (features,) or self.beta.shape != (features,):
            raise ShapeError("batchnorm: shared parameter shapes do not match")
        self.momentum = momentum
        self.eps = eps
        if running is None:
            running = (np.zeros(features), np.ones(features))
        self.running_mean, self.running_var = running
        if self.running_mean.shape != (features,) or self.running_var.shape != (features,):
            raise ShapeError("batchnorm: running statistic shapes do not match")

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def _forward(self, z, train):
        if z.shape[-1] != self.gamma.shape[0]:
            raise ShapeError(f"batchnorm: {z.shape[-1]} features, expected {self.gamma.shape[0]}")
        axes = tuple(range(z.ndim - 1))
        if not train:
            zhat = (z - self.running_mean) / np.sqrt(self.running_var + self.eps)
            return self.gamma.value * zhat + self.beta.value, None
        m = z.size // z.shape[-1]
        if m < 2:
            raise ConfigError("batchnorm: training mode needs at least 2 samples per feature")
        mean = z.mean(axis=axes)
        var = z.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        zhat = (z - mean) * inv_std
        mo = self.momentum
        self.running_mean[...] = mo * self.running_mean + (1 - mo) * mean
        self.running_var[...] = mo * self.running_var + (1 - mo) * var * m / (m - 1)
        return self.gamma.value * zhat + self.beta.value, (zhat, inv_std, axes, m)

    def _backward(self, g, cache):
        zhat, inv_std, axes, m = cache
        self.gamma.grad += (g * zhat).sum(axis=axes)
        self.beta.grad += g.sum(axis=axes)
        gz = g * self.gamma.value
        return inv_std * (gz - gz.mean(axis=axes) - zhat * (gz * zhat).mean(axis=axes))


def batchnorm_forward(z, gamma, beta, mode="train", running_stats=None, momentum=0.9, eps=1e-5):
    """Functional batch norm. ``running_stats`` is a (mean, var) pair updated in place."""
    z = np.asarray(z, dtype=np.float64)
    layer = BatchNorm(z.shape[-1], momentum, eps, Param(gamma), Param(beta))
    if running_stats is not None:
        layer.running_mean, layer.running_var = running_stats
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown mode {mode!r}")
    return layer.forward(z, train=mode == "train")


# ---------------------------------------------------------------------------
# activations


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(z):
    return expit(z)


ACTIVATIONS = ("tanh", "relu", "sigmoid", "softmax", "none")


def activation_forward(z, kind):
    z = np.asarray(z, dtype=np.float64)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "softmax":
        return softmax(z)
    if kind == "none":
        return z.copy()
    raise ConfigError(f"unknown activation {kind!r}")


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn):
        super().__init__()
        if fn not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {fn!r}")
        self.fn = fn

    def _forward(self, z, train):
        a = activation_forward(z, self.fn)
        return a, (z, a)

    def _backward(self, g, cache):
        z, a = cache
        if self.fn == "tanh":
            return g * (1.0 - a * a)
        if self.fn == "relu":
            return g * (z > 0)
        if self.fn == "sigmoid":
            return g * a * (1.0 - a)
        if self.fn == "softmax":
            return a * (g - (g * a).sum(axis=-1, keepdims=True))
        return g


# ---------------------------------------------------------------------------
# dropout


def dropout_forward(a, keep_prob, mode, rng):
    """Inverted dropout. Returns ``(output, mask)``; mask is None in infer mode."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    a = np.asarray(a, dtype=np.float64)
    if mode == "infer" or keep_prob == 1.0:
        return a.copy(), None
    mask = (rng.random(a.shape) < keep_prob) / keep_prob
    return a * mask, mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, keep_prob, rng):
        super().__init__()
        if not 0.0 < keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.rng = rng

    def _forward(self, a, train):
        out, mask = dropout_forward(a, self.keep_prob, "train" if train else "infer", self.rng)
        return out, (mask,)

    def _backward(self, g, cache):
        (mask,) = cache
        return g if mask is None else g * mask


# ---------------------------------------------------------------------------
# average pooling: 2x2 window, stride 1, same padding (pad after), padded
# cells excluded from the mean


def _pool_counts(h, w):
    rows = np.full(h, 2.0)
    rows[-1] = 1.0
    cols = np.full(w, 2.0)
    cols[-1] = 1.0
    return np.outer(rows, cols)[None, :, :, None]


def avgpool2d(x, window=2, stride=1):
    if window != 2 or stride != 1:
        raise ConfigError("only 2x2 windows with stride 1 are supported")
    x = np.asarray(x, dtype=np.float64)
    xp = np.pad(x, ((0, 0), (0, 1), (0, 1), (0, 0)))
    s = xp[:, :-1, :-1] + xp[:, 1:, :-1] + xp[:, :-1, 1:] + xp[:, 1:, 1:]
    return s / _pool_counts(x.shape[1], x.shape[2])


class AvgPool2D(Layer):
    kind = "avgpool"

    def _forward(self, x, train):
        return avgpool2d(x), x.shape

    def _backward(self, g, shape):
        h, w = shape[1], shape[2]
        gs = g / _pool_counts(h, w)
        gp = np.pad(gs, ((0, 0), (1, 0), (1, 0), (0, 0)))
        return gp[:, 1:, 1:] + gp[:, :-1, 1:] + gp[:, 1:, :-1] + gp[:, :-1, :-1]


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def params(self):
        seen, out = set(), []
        for layer in self.layers:
            for p in layer.params():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return g
