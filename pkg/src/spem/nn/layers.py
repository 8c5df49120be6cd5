"""Layers with hand-written backward passes.

Tensors are float64 numpy arrays. Images are channel-last ``(N, H, W, C)``,
sequences are ``(B, T, F)``. Every layer caches what its backward pass needs
during ``forward``, so one ``forward`` must precede each ``backward``.
"""

from __future__ import annotations

import math

import numpy as np


class Layer:
    """Base layer: ``params``/``grads`` dicts keyed by local name."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def children(self):
        return []

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)
        for _, child in self.children():
            child.zero_grad()

    def named_parameters(self, prefix=""):
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix=""):
        for k in self.params:
            yield prefix + k, self.grads[k]
        for name, child in self.children():
            yield from child.named_grads(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for k, v in self.buffers.items():
            yield prefix + k, v
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def parameter_count(self) -> int:
        return sum(v.size for _, v in self.named_parameters())


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def conv2d(x, w, stride=1, pad=0, bias=None):
    """Cross-correlation of ``x (N,H,W,Cin)`` with ``w (kh,kw,Cin,Cout)``."""
    x = np.asarray(x)
    kh, kw, cin, cout = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ValueError(f"input {x.shape} incompatible with kernel {w.shape}")
    n, h, wd, _ = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x, w, np.float64))
    for a in range(kh):
        for b in range(kw):
            out += xp[:, a:a + stride * ho:stride, b:b + stride * wo:stride, :] @ w[a, b]
    if bias is not None:
        out += bias
    return out


def conv2d_backward(x, w, dout, stride=1, pad=0):
    """Gradients ``(dx, dw)`` of :func:`conv2d` given upstream ``dout``."""
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    _, ho, wo, _ = dout.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    if stride == 1:
        return _conv2d_backward_flat(xp, w, dout, pad, h, wd)
    dxp = np.zeros_like(xp, dtype=np.result_type(dout, w))
    dw = np.empty_like(w, dtype=np.result_type(x, dout))
    d2 = dout.reshape(-1, cout)
    for a in range(kh):
        for b in range(kw):
            sl = (slice(None), slice(a, a + stride * ho, stride), slice(b, b + stride * wo, stride))
            dw[a, b] = xp[sl].reshape(-1, cin).T @ d2
            dxp[sl] += dout @ w[a, b].T
    dx = dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp
    return dx, dw


def _conv2d_backward_flat(xp, w, dout, pad, h, wd):
    # With the padded input flattened row-major, tap (a, b) is a constant
    # offset a*Wp + b, so every product below is on contiguous slices.
    kh, kw, cin, cout = w.shape
    n, hp, wp, _ = xp.shape
    _, ho, wo, _ = dout.shape
    dfull = np.zeros((n, hp, wp, cout), dtype=dout.dtype)
    dfull[:, :ho, :wo] = dout
    df = dfull.reshape(-1, cout)
    xf = np.ascontiguousarray(xp).reshape(-1, cin)
    span = len(df) - (kh - 1) * wp - (kw - 1)
    dxf = np.zeros((len(df), cin), dtype=np.result_type(dout, w))
    dw = np.empty_like(w, dtype=np.result_type(xp, dout))
    for a in range(kh):
        for b in range(kw):
            off = a * wp + b
            dw[a, b] = xf[off:off + span].T @ df[:span]
            dxf[off:off + span] += df[:span] @ w[a, b].T
    dx = dxf.reshape(n, hp, wp, cin)[:, pad:pad + h, pad:pad + wd]
    return dx, dw


class Conv2D(Layer):
    def __init__(self, cin, cout, k=3, stride=1, pad=None, bias=False, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        bound = math.sqrt(6.0 / (k * k * cin))
        self.params["w"] = _uniform(rng, bound, (k, k, cin, cout))
        if bias:
            self.params["b"] = np.zeros(cout)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        self._x = x
        return conv2d(x, self.params["w"], self.stride, self.pad, self.params.get("b"))

    def backward(self, dout):
        dx, dw = conv2d_backward(self._x, self.params["w"], dout, self.stride, self.pad)
        self.grads["w"] += dw
        if "b" in self.params:
            self.grads["b"] += dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        return dx


class BatchNorm(Layer):
    """Per-channel scale/shift over the last axis.

    Training uses batch statistics and updates running averages with
    ``momentum``; evaluation uses the running averages. The first training
    batch sets the running averages outright, so evaluation is meaningful
    after a single step even when activations are far from unit scale.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.buffers["batches"] = np.zeros(1)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        c = x.shape[-1]
        x2 = x.reshape(-1, c)
        if train:
            # column sums through BLAS are several times faster than ndarray.sum
            ones = np.ones(len(x2), dtype=x.dtype)
            mean = (ones @ x2) / len(x2)
            xc = x2 - mean
            var = (ones @ (xc * xc)) / len(x2)
            mom = self.momentum if self.buffers["batches"][0] > 0 else 0.0
            self.buffers["batches"] += 1
            self.buffers["running_mean"][:] = mom * self.buffers["running_mean"] + (1 - mom) * mean
            self.buffers["running_var"][:] = mom * self.buffers["running_var"] + (1 - mom) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
            xc = x2 - mean
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv, train)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(x.shape)

    def backward(self, dout):
        xhat, inv, train = self._cache
        d2 = dout.reshape(-1, dout.shape[-1])
        ones = np.ones(len(d2), dtype=d2.dtype)
        dsum = ones @ d2
        dxsum = ones @ (d2 * xhat)
        self.grads["gamma"] += dxsum
        self.grads["beta"] += dsum
        gamma = self.params["gamma"]
        if not train:
            return (d2 * (gamma * inv)).reshape(dout.shape)
        count = len(d2)
        scale = gamma * inv
        dx = scale * (d2 - dsum / count - xhat * (dxsum / count))
        return dx.reshape(dout.shape)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        out = np.maximum(x, 0)
        self._mask = out > 0
        return out

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._scale = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = rng.random(x.shape, dtype=np.float32) >= self.rate
        self._scale = keep * (1.0 / (1.0 - self.rate))
        return x * self._scale

    def backward(self, dout):
        return dout if self._scale is None else dout * self._scale


class Dense(Layer):
    def __init__(self, fin, fout, rng=None, bound=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        bound = math.sqrt(6.0 / fin) if bound is None else bound
        self.params["w"] = _uniform(rng, bound, (fin, fout))
        self.params["b"] = np.zeros(fout)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        self.grads["w"] += x2.T @ d2
        self.grads["b"] += d2.sum(axis=0)
        return dout @ self.params["w"].T


class GlobalAvgPool(Layer):
    """``(N, H, W, C) -> (N, C)``."""

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), self._shape).copy()


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class TemporalMean(Layer):
    """``(B, T, F) -> (B, F)``."""

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.mean(axis=1)

    def backward(self, dout):
        b, t, f = self._shape
        return np.broadcast_to(dout[:, None, :] / t, self._shape).copy()


class TemporalConv(Layer):
    """1-D convolution along time with 'same' zero padding: ``(B,T,F) -> (B,T,K)``."""

    def __init__(self, fin, filters, k=3, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.k = k
        self.params["w"] = _uniform(rng, math.sqrt(6.0 / (k * fin)), (k, fin, filters))
        self.params["b"] = np.zeros(filters)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        # reuse the 2-D kernel path with a unit-width spatial axis
        x4 = x[:, :, None, :]
        self._x4 = x4
        w4 = self.params["w"][:, None]
        pad = self.k // 2
        xp = np.pad(x4, ((0, 0), (pad, pad), (0, 0), (0, 0)))
        self._xp = xp
        out = conv2d(xp, w4, 1, 0, self.params["b"])
        return out[:, :, 0, :]

    def backward(self, dout):
        w4 = self.params["w"][:, None]
        dxp, dw = conv2d_backward(self._xp, w4, dout[:, :, None, :], 1, 0)
        self.grads["w"] += dw[:, 0]
        self.grads["b"] += dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        pad = self.k // 2
        t = self._x4.shape[1]
        return dxp[:, pad:pad + t, 0, :]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LSTM(Layer):
    """Single-layer LSTM returning the final hidden state ``(B, H)``.

    Gate order in the stacked weights is input, forget, cell, output.
    """

    def __init__(self, fin, hidden, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.params["wx"] = _uniform(rng, bound, (fin, 4 * hidden))
        self.params["wh"] = _uniform(rng, bound, (hidden, 4 * hidden))
        self.params["b"] = np.zeros(4 * hidden)
        self.zero_grad()

    def forward(self, x, train=False, rng=None):
        b, t, _ = x.shape
        hd = self.hidden
        h = np.zeros((b, hd))
        c = np.zeros((b, hd))
        xw = x @ self.params["wx"] + self.params["b"]
        steps = []
        for k in range(t):
            z = xw[:, k] + h @ self.params["wh"]
            i = _sigmoid(z[:, :hd])
            f = _sigmoid(z[:, hd:2 * hd])
            g = np.tanh(z[:, 2 * hd:3 * hd])
            o = _sigmoid(z[:, 3 * hd:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((i, f, g, o, c_prev, h_prev, tc))
        self._x = x
        self._steps = steps
        return h

    def backward(self, dout):
        x = self._x
        b, t, fin = x.shape
        hd = self.hidden
        wh = self.params["wh"]
        dh = dout
        dc = np.zeros((b, hd))
        dz_all = np.empty((b, t, 4 * hd))
        for k in reversed(range(t)):
            i, f, g, o, c_prev, h_prev, tc = self._steps[k]
            do = dh * tc
            dc = dc + dh * o * (1 - tc**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)], axis=1)
            dz_all[:, k] = dz
            self.grads["wh"] += h_prev.T @ dz
            dh = dz @ wh.T
            dc = dc * f
        self.grads["wx"] += x.reshape(-1, fin).T @ dz_all.reshape(-1, 4 * hd)
        self.grads["b"] += dz_all.sum(axis=(0, 1))
        return dz_all @ self.params["wx"].T


def lstm_layer(sequence, params, hidden=None):
    """Final hidden state of an LSTM over ``sequence (T, F)`` or ``(B, T, F)``.

    ``params`` holds ``wx (F, 4H)``, ``wh (H, 4H)`` and ``b (4H,)``.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    hd = params["wh"].shape[0] if hidden is None else hidden
    layer = LSTM(seq.shape[-1], hd)
    for k in ("wx", "wh", "b"):
        layer.params[k] = np.asarray(params[k], dtype=np.float64)
    h = layer.forward(seq)
    return h[0] if squeeze else h


class Sequential(Layer):
    def __init__(self, *layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = names or [str(i) for i in range(len(layers))]

    def children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class ResidualBlock(Layer):
    """Basic residual block with dropout between its two convolutions.

    conv3x3 -> BN -> ReLU -> Dropout -> conv3x3 -> BN, added to the skip
    path (identity, or 1x1 conv + BN when shape changes), then ReLU.
    """

    def __init__(self, cin, cout, stride=1, dropout=0.0, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.conv1 = Conv2D(cin, cout, 3, stride, rng=rng)
        self.bn1 = BatchNorm(cout)
        self.relu1 = ReLU()
        self.drop = Dropout(dropout)
        self.conv2 = Conv2D(cout, cout, 3, 1, rng=rng)
        self.bn2 = BatchNorm(cout)
        self.relu_out = ReLU()
        if stride != 1 or cin != cout:
            self.proj = Conv2D(cin, cout, 1, stride, pad=0, rng=rng)
            self.proj_bn = BatchNorm(cout)
        else:
            self.proj = None

    def children(self):
        kids = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.proj is not None:
            kids += [("proj", self.proj), ("proj_bn", self.proj_bn)]
        return kids

    def forward(self, x, train=False, rng=None):
        y = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train))
        y = self.drop.forward(y, train, rng)
        y = self.bn2.forward(self.conv2.forward(y, train), train)
        if self.proj is not None:
            skip = self.proj_bn.forward(self.proj.forward(x, train), train)
        else:
            skip = x
        if skip.shape != y.shape:
            raise ValueError(f"skip path {skip.shape} does not match block output {y.shape}")
        return self.relu_out.forward(y + skip)

    def backward(self, dout):
        d = self.relu_out.backward(dout)
        dy = self.conv1.backward(self.bn1.backward(self.relu1.backward(
            self.drop.backward(self.conv2.backward(self.bn2.backward(d))))))
        if self.proj is not None:
            dskip = self.proj.backward(self.proj_bn.backward(d))
        else:
            dskip = d
        return dy + dskip


def residual_block(x, block: ResidualBlock, train=False, rng=None):
    return block.forward(x, train, rng)
