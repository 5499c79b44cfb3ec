"""Differentiable layers with explicit forward and backward passes.

Every layer caches whatever its backward pass needs during forward, so a
single instance must not run forward/backward concurrently with itself.
Convolution follows cross-correlation semantics (no kernel flip). All
backward passes are validated against `tensor.finite_diff_check`.
"""
from __future__ import annotations

import numpy as np

from .tensor import DEFAULT_DTYPE, Rng, ShapeError, Tensor, he_uniform


class Parameter:
    """Learnable array plus its accumulated gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, data: np.ndarray, name: str = ""):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0


class Layer:
    """Base layer protocol: forward/backward plus parameter traversal."""

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def _params(self) -> list:
        return []

    def _children(self) -> list:
        return []

    def _buffers(self) -> list:
        return []

    def named_parameters(self, prefix: str = "") -> list:
        out = [(f"{prefix}{n}", p) for n, p in self._params()]
        for name, child in self._children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> list:
        out = [(f"{prefix}{n}", b) for n, b in self._buffers()]
        for name, child in self._children():
            out.extend(child.named_buffers(f"{prefix}{name}."))
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def _conv_extent(size: int, k: int, stride: int, pad: int, dil: int) -> int:
    return (size + 2 * pad - dil * (k - 1) - 1) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, dil: int):
    """Unfold (N,C,H,W) into (N, C*kh*kw, Hout*Wout) patch columns."""
    n, c, h, w = x.shape
    hout = _conv_extent(h, kh, stride, pad, dil)
    wout = _conv_extent(w, kw, stride, pad, dil)
    if hout <= 0 or wout <= 0:
        raise ShapeError(
            f"kernel {kh}x{kw} (dilation {dil}) does not fit "
            f"{h}x{w} input with padding {pad}"
        )
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, hout, wout), dtype=x.dtype)
    for i in range(kh):
        hi = i * dil
        for j in range(kw):
            wj = j * dil
            cols[:, :, i, j] = x[:, :, hi : hi + stride * hout : stride,
                                 wj : wj + stride * wout : stride]
    return cols.reshape(n, c * kh * kw, hout * wout), hout, wout


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, pad: int, dil: int,
            hout: int, wout: int) -> np.ndarray:
    """Adjoint of `_im2col`: scatter-add columns back onto an (N,C,H,W) grid."""
    n, c, h, w = shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    colsr = cols.reshape(n, c, kh, kw, hout, wout)
    for i in range(kh):
        hi = i * dil
        for j in range(kw):
            wj = j * dil
            out[:, :, hi : hi + stride * hout : stride,
                wj : wj + stride * wout : stride] += colsr[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return out


class Conv2d(Layer):
    """2D cross-correlation with stride, zero padding and dilation.

    Output extent: floor((H + 2p - d*(k-1) - 1)/s) + 1. Backward returns the
    exact analytic input gradient and accumulates weight/bias gradients.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, dilation: int = 1,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        fan_in = in_channels * kernel * kernel
        if rng is None:
            w = np.zeros((out_channels, in_channels, kernel, kernel), dtype=dtype)
        else:
            w = he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def _params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv2d expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        cols, hout, wout = _im2col(x.data, self.kernel, self.kernel,
                                   self.stride, self.padding, self.dilation)
        n = x.shape[0]
        wmat = self.weight.data.reshape(self.out_channels, -1)
        out = np.matmul(wmat, cols) + self.bias.data[:, None]
        self._cache = (x.shape, cols, hout, wout)
        return Tensor(out.reshape(n, self.out_channels, hout, wout))

    def backward(self, grad_out: Tensor) -> Tensor:
        xshape, cols, hout, wout = self._cache
        n = grad_out.shape[0]
        gmat = grad_out.data.reshape(n, self.out_channels, hout * wout)
        self.bias.grad += gmat.sum(axis=(0, 2))
        gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
        self.weight.grad += gw.reshape(self.weight.data.shape)
        wmat = self.weight.data.reshape(self.out_channels, -1)
        gcols = np.matmul(wmat.T, gmat)
        gx = _col2im(gcols, xshape, self.kernel, self.kernel,
                     self.stride, self.padding, self.dilation, hout, wout)
        return Tensor(gx)


class TransposedConv2d(Layer):
    """Transposed convolution: the adjoint of `Conv2d`'s forward map.

    Weight layout is (in_channels, out_channels, kh, kw), so a Conv2d weight
    of shape (Cout, Cin, k, k) used directly here maps Cout-channel inputs
    back to Cin-channel outputs. Output extent: (H-1)*s - 2p + k.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        if rng is None:
            w = np.zeros((in_channels, out_channels, kernel, kernel), dtype=dtype)
        else:
            w = he_uniform(rng, (in_channels, out_channels, kernel, kernel), fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def _params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def _out_extent(self, size: int) -> int:
        return (size - 1) * self.stride - 2 * self.padding + self.kernel

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"transposed_conv2d expects {self.in_channels} input channels, "
                f"got {x.shape[1]}"
            )
        n, _, h, w = x.shape
        hout, wout = self._out_extent(h), self._out_extent(w)
        if hout <= 0 or wout <= 0:
            raise ShapeError(f"degenerate output extent {hout}x{wout}")
        # Scatter-add: x plays the role of an output gradient of the matching
        # forward convolution (which maps hout -> h with this stride/padding).
        xmat = x.data.reshape(n, self.in_channels, h * w)
        wmat = self.weight.data.reshape(self.in_channels, -1)
        gcols = np.matmul(wmat.T, xmat)
        out = _col2im(gcols, (n, self.out_channels, hout, wout),
                      self.kernel, self.kernel, self.stride, self.padding, 1, h, w)
        out += self.bias.data[None, :, None, None]
        self._cache = (x.shape, xmat, (hout, wout))
        return Tensor(out)

    def backward(self, grad_out: Tensor) -> Tensor:
        xshape, xmat, (hout, wout) = self._cache
        n, _, h, w = xshape
        self.bias.grad += grad_out.data.sum(axis=(0, 2, 3))
        gcols, gh, gw_ = _im2col(grad_out.data, self.kernel, self.kernel,
                                 self.stride, self.padding, 1)
        # gcols: (N, Cout*k*k, h*w); input grad is the matching convolution
        gw = np.matmul(xmat, gcols.transpose(0, 2, 1)).sum(axis=0)
        self.weight.grad += gw.reshape(self.weight.data.shape)
        wmat = self.weight.data.reshape(self.in_channels, -1)
        gx = np.matmul(wmat, gcols).reshape(n, self.in_channels, h, w)
        return Tensor(gx)


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; requires even spatial extents.

    Backward routes each gradient to the window argmax, first occurrence in
    row-major window order on ties.
    """

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(
                f"maxpool2 needs even spatial extents, got {h}x{w}; pad or crop first"
            )
        win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1)  # first max in row-major window order
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return Tensor(out)

    def backward(self, grad_out: Tensor) -> Tensor:
        (n, c, h, w), idx = self._cache
        gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
        np.put_along_axis(gwin, idx[..., None], grad_out.data[..., None], axis=-1)
        gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return Tensor(gx.reshape(n, c, h, w))


class AvgPool2(Layer):
    """2x2 mean pooling with stride 2; backward spreads grad/4 per window."""

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"avgpool2 needs even spatial extents, got {h}x{w}")
        out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        self._cache = x.shape
        return Tensor(out)

    def backward(self, grad_out: Tensor) -> Tensor:
        n, c, h, w = self._cache
        g = np.repeat(np.repeat(grad_out.data, 2, axis=2), 2, axis=3) * 0.25
        return Tensor(g)


class ReLU(Layer):
    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        self._mask = x.data > 0
        return Tensor(np.where(self._mask, x.data, 0))

    def backward(self, grad_out: Tensor) -> Tensor:
        return Tensor(np.where(self._mask, grad_out.data, 0))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids exp overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid(Layer):
    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        self._out = _sigmoid(x.data)
        return Tensor(self._out)

    def backward(self, grad_out: Tensor) -> Tensor:
        return Tensor(grad_out.data * self._out * (1.0 - self._out))


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0))


def sigmoid(x: Tensor) -> Tensor:
    return Tensor(_sigmoid(x.data))


def softmax(z: Tensor) -> Tensor:
    """Row softmax over the last axis, computed with max subtraction."""
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return Tensor(e / e.sum(axis=-1, keepdims=True))


class Softmax(Layer):
    """Softmax over the class axis (last axis) of (N, C) logits."""

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        out = softmax(x)
        self._out = out.data
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        p, g = self._out, grad_out.data
        dot = (p * g).sum(axis=-1, keepdims=True)
        return Tensor(p * (g - dot))


class Linear(Layer):
    """Fully connected map (N, in) -> (N, out)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        if rng is None:
            w = np.zeros((out_features, in_features), dtype=dtype)
        else:
            w = he_uniform(rng, (out_features, in_features), in_features, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def _params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        self._x = x.data
        return Tensor(x.data @ self.weight.data.T + self.bias.data)

    def backward(self, grad_out: Tensor) -> Tensor:
        g = grad_out.data
        self.weight.grad += g.T @ self._x
        self.bias.grad += g.sum(axis=0)
        return Tensor(g @ self.weight.data)


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, H, W).

    Train mode standardizes with batch statistics (population variance) and
    updates running statistics with the configured momentum; eval mode is a
    deterministic affine map using the running statistics.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def _params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def _buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        self._training = training
        if training:
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))  # population variance
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, x.data - mean[None, :, None, None])
        out = self.gamma.data[None, :, None, None] * xhat + self.beta.data[None, :, None, None]
        return Tensor(out)

    def backward(self, grad_out: Tensor) -> Tensor:
        xhat, inv_std, centered = self._cache
        g = grad_out.data
        self.beta.grad += g.sum(axis=(0, 2, 3))
        self.gamma.grad += (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * self.gamma.data[None, :, None, None]
        if not self._training:
            return Tensor(gxhat * inv_std[None, :, None, None])
        n, _, h, w = g.shape
        m = n * h * w
        inv = inv_std[None, :, None, None]
        dvar = (gxhat * centered).sum(axis=(0, 2, 3)) * (-0.5) * inv_std**3
        dmean = (-(gxhat * inv).sum(axis=(0, 2, 3))
                 + dvar * (-2.0 / m) * centered.sum(axis=(0, 2, 3)))
        gx = (gxhat * inv
              + dvar[None, :, None, None] * 2.0 * centered / m
              + dmean[None, :, None, None] / m)
        return Tensor(gx)


class ConcatChannels(Layer):
    """Channel concatenation of two maps with equal N, H, W (a first)."""

    def forward2(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ShapeError(f"concat: spatial mismatch {a.shape} vs {b.shape}")
        self._split = a.shape[1]
        return Tensor(np.concatenate([a.data, b.data], axis=1))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        raise TypeError("ConcatChannels takes two inputs; use forward2")

    def backward(self, grad_out: Tensor):
        s = self._split
        return Tensor(grad_out.data[:, :s]), Tensor(grad_out.data[:, s:])


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return ConcatChannels().forward2(a, b)


class GlobalAvgPool(Layer):
    """Spatial mean per channel: (N,C,H,W) -> (N,C)."""

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        self._shape = x.shape
        return Tensor(x.data.mean(axis=(2, 3)))

    def backward(self, grad_out: Tensor) -> Tensor:
        n, c, h, w = self._shape
        g = np.broadcast_to(grad_out.data[:, :, None, None] / (h * w), (n, c, h, w))
        return Tensor(g.copy())


class Sequential(Layer):
    """Chain of layers applied in order; backward runs the reverse chain."""

    def __init__(self, *layers, names=None):
        self.layers = list(layers)
        self.names = list(names) if names else [str(i) for i in range(len(self.layers))]

    def _children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_out: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


class DenseBlock(Layer):
    """Densely connected block: layer l applies BN -> ReLU -> conv3x3 to the
    concatenation of the input and all earlier layer outputs, emitting
    `growth` channels. Output is the full concatenation, so channels grow
    from F0 to F0 + L*growth and the first F0 output channels equal the input.
    """

    def __init__(self, in_channels: int, n_layers: int, growth: int,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.in_channels = in_channels
        self.n_layers = n_layers
        self.growth = growth
        self.bns, self.relus, self.convs = [], [], []
        ch = in_channels
        for _ in range(n_layers):
            self.bns.append(BatchNorm2d(ch, dtype=dtype))
            self.relus.append(ReLU())
            self.convs.append(Conv2d(ch, growth, 3, padding=1, rng=rng, dtype=dtype))
            ch += growth
        self.out_channels = ch

    def _children(self):
        out = []
        for i in range(self.n_layers):
            out.append((f"bn{i}", self.bns[i]))
            out.append((f"conv{i}", self.convs[i]))
        return out

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"dense block expects {self.in_channels} channels, got {x.shape[1]}")
        feats = [x.data]
        for bn, rl, conv in zip(self.bns, self.relus, self.convs):
            inp = Tensor(np.concatenate(feats, axis=1)) if len(feats) > 1 else Tensor(feats[0])
            h = conv.forward(rl.forward(bn.forward(inp, training)), training)
            feats.append(h.data)
        self._widths = [f.shape[1] for f in feats]
        return Tensor(np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0])

    def backward(self, grad_out: Tensor) -> Tensor:
        splits = np.cumsum(self._widths)[:-1]
        gfeats = [g.copy() for g in np.split(grad_out.data, splits, axis=1)]
        for l in range(self.n_layers - 1, -1, -1):
            g = self.convs[l].backward(Tensor(gfeats[l + 1]))
            g = self.bns[l].backward(self.relus[l].backward(g))
            # layer l consumed concat(feats[0..l]); fan its grad back out
            offset = 0
            for i in range(l + 1):
                w = self._widths[i]
                gfeats[i] += g.data[:, offset : offset + w]
                offset += w
        return Tensor(gfeats[0])


class Transition(Layer):
    """Dense-encoder downsampling: 1x1 conv to `out_channels`, then 2x2 mean
    pooling halves the spatial extents."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        self.conv = Conv2d(in_channels, out_channels, 1, rng=rng, dtype=dtype)
        self.pool = AvgPool2()

    def _children(self):
        return [("conv", self.conv)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.pool.forward(self.conv.forward(x, training), training)

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.conv.backward(self.pool.backward(grad_out))


class SEBlock(Layer):
    """Squeeze-and-excitation channel gate.

    Pools each channel globally, squeezes through a bottleneck of width
    max(1, C // reduction), and rescales channels by a sigmoid gate in (0,1).
    """

    def __init__(self, channels: int, reduction: int = 4,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        if reduction < 1:
            raise ValueError("reduction ratio must be >= 1")
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.gap = GlobalAvgPool()
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.act = ReLU()
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)
        self.gate = Sigmoid()

    def _children(self):
        return [("fc1", self.fc1), ("fc2", self.fc2)]

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        s = self.gap.forward(x, training)
        g = self.gate.forward(self.fc2.forward(self.act.forward(self.fc1.forward(s))))
        self._x = x.data
        self._g = g.data
        return Tensor(x.data * g.data[:, :, None, None])

    def backward(self, grad_out: Tensor) -> Tensor:
        g = grad_out.data
        dx_direct = g * self._g[:, :, None, None]
        dgate = (g * self._x).sum(axis=(2, 3))
        d = self.gate.backward(Tensor(dgate))
        d = self.fc1.backward(self.act.backward(self.fc2.backward(d)))
        dx_pool = self.gap.backward(d)
        return Tensor(dx_direct + dx_pool.data)


class ASPP(Layer):
    """Parallel dilated 3x3 convolutions over a shared input, padding equal
    to each rate so every branch keeps the input extent, plus an optional
    image-pooling branch (global mean -> 1x1 conv -> constant broadcast).
    Branch outputs are channel-concatenated and fused by a 1x1 conv.
    """

    def __init__(self, in_channels: int, rates, branch_channels: int,
                 out_channels: int, image_pool: bool = True,
                 rng: Rng | None = None, dtype=DEFAULT_DTYPE):
        rates = tuple(rates)
        if not rates:
            raise ValueError("ASPP needs at least one dilation rate")
        self.rates = rates
        self.image_pool = image_pool
        self.branches = [
            Conv2d(in_channels, branch_channels, 3, padding=r, dilation=r, rng=rng, dtype=dtype)
            for r in rates
        ]
        if image_pool:
            self.gap = GlobalAvgPool()
            self.pool_conv = Conv2d(in_channels, branch_channels, 1, rng=rng, dtype=dtype)
        n_branches = len(rates) + (1 if image_pool else 0)
        self.fuse = Conv2d(branch_channels * n_branches, out_channels, 1, rng=rng, dtype=dtype)
        self.branch_channels = branch_channels

    def _children(self):
        out = [(f"branch{i}", b) for i, b in enumerate(self.branches)]
        if self.image_pool:
            out.append(("pool_conv", self.pool_conv))
        out.append(("fuse", self.fuse))
        return out

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        n, _, h, w = x.shape
        outs = [b.forward(x, training).data for b in self.branches]
        if self.image_pool:
            pooled = self.gap.forward(x, training)
            pc = self.pool_conv.forward(Tensor(pooled.data[:, :, None, None]), training)
            outs.append(np.broadcast_to(pc.data, (n, self.branch_channels, h, w)).copy())
        self._hw = (h, w)
        return self.fuse.forward(Tensor(np.concatenate(outs, axis=1)), training)

    def backward(self, grad_out: Tensor) -> Tensor:
        g = self.fuse.backward(grad_out).data
        bc = self.branch_channels
        gx = None
        for i, b in enumerate(self.branches):
            gi = b.backward(Tensor(g[:, i * bc : (i + 1) * bc])).data
            gx = gi if gx is None else gx + gi
        if self.image_pool:
            gp = g[:, len(self.branches) * bc :]
            gsum = gp.sum(axis=(2, 3))[:, :, None, None]  # adjoint of broadcast
            gpc = self.pool_conv.backward(Tensor(gsum)).data
            gx = gx + self.gap.backward(Tensor(gpc[:, :, 0, 0])).data
        return Tensor(gx)
