"""Minimal dense/convolutional network engine with reverse-mode gradients.

Layers operate on batched arrays (leading batch axis) in float32 for
training; gradient checking clones a graph into float64 and compares every
parameter's analytic gradient against central finite differences. Convolution
is backed by chunked im2col + BLAS matmul to keep peak memory bounded.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

try:  # compiled window gather/scatter; numpy strided fallback below
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a normal dependency
    _HAVE_NUMBA = False

# Largest im2col buffer in elements; chunks the batch axis beyond this.
_COL_CHUNK_ELEMS = 32_000_000

if _HAVE_NUMBA:
    # K-major window matrix: col[(c*3+di)*3+dj, n*L + i*ow + j], L = oh*ow.
    # One flat GEMM per chunk then; prange over examples keeps writes disjoint.

    @numba.njit(parallel=True, cache=True)
    def _im2col_jit(xp, col, stride, oh, ow):  # pragma: no cover
        n, c, hp, wp = xp.shape
        L = oh * ow
        for ni in numba.prange(n):
            for ci in range(c):
                for di in range(3):
                    for dj in range(3):
                        k = (ci * 3 + di) * 3 + dj
                        for i in range(oh):
                            base = ni * L + i * ow
                            src_i = i * stride + di
                            for j in range(ow):
                                col[k, base + j] = xp[ni, ci, src_i,
                                                      j * stride + dj]

    @numba.njit(parallel=True, cache=True)
    def _col2im_jit(dcol, dxp, stride, oh, ow):  # pragma: no cover
        n, c, hp, wp = dxp.shape
        L = oh * ow
        for ni in numba.prange(n):
            for ci in range(c):
                for di in range(3):
                    for dj in range(3):
                        k = (ci * 3 + di) * 3 + dj
                        for i in range(oh):
                            base = ni * L + i * ow
                            src_i = i * stride + di
                            for j in range(ow):
                                dxp[ni, ci, src_i, j * stride + dj] += \
                                    dcol[k, base + j]


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def zeros_like(cls, value: np.ndarray) -> "Parameter":
        return cls(value=value, grad=np.zeros_like(value))


def he_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    tag = "layer"

    def params(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def astype(self, dtype) -> "Layer":
        return self


# Below this many window elements the jit's thread dispatch costs more than
# the copy itself; small workloads take the strided numpy path.
_JIT_MIN_ELEMS = 1_500_000


def _im2col(xp: np.ndarray, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (C*9, N*oh*ow) window matrix for 3x3 kernels."""
    n, c = xp.shape[:2]
    if _HAVE_NUMBA and xp.dtype in (np.float32, np.float64) \
            and n * c * 9 * oh * ow >= _JIT_MIN_ELEMS:
        col = np.empty((c * 9, n * oh * ow), dtype=xp.dtype)
        _im2col_jit(np.ascontiguousarray(xp), col, stride, oh, ow)
        return col
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, 3, 3, n, oh, ow),
        strides=(s1, s2, s3, s0, s2 * stride, s3 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(c * 9, n * oh * ow)


def _col2im(dcol: np.ndarray, dxp: np.ndarray, stride: int, oh: int, ow: int):
    """Scatter-add a (C*9, N*oh*ow) gradient back onto the padded input."""
    if _HAVE_NUMBA and dxp.dtype in (np.float32, np.float64) \
            and dcol.size >= _JIT_MIN_ELEMS:
        _col2im_jit(np.ascontiguousarray(dcol), dxp, stride, oh, ow)
        return
    n, c = dxp.shape[:2]
    d6 = dcol.reshape(c, 3, 3, n, oh, ow)
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di:di + stride * (oh - 1) + 1:stride,
                dj:dj + stride * (ow - 1) + 1:stride] += \
                d6[:, di, dj].transpose(1, 0, 2, 3)


class Conv2d(Layer):
    """3x3 valid/same convolution (cross-correlation), stride 1 or 2."""

    tag = "conv2d"
    KERNEL = 3

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 padding: int = 0, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if stride not in (1, 2):
            raise ValueError(f"unsupported stride {stride}")
        if padding not in (0, 1):
            raise ValueError(f"unsupported padding {padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        k = self.KERNEL
        fan_in = in_channels * k * k
        self.weight = Parameter.zeros_like(
            he_uniform((out_channels, in_channels, k, k), fan_in, rng, dtype))
        self.bias = Parameter.zeros_like(np.zeros(out_channels, dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        k, s, p = self.KERNEL, self.stride, self.padding
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"input {in_shape} too small for 3x3 conv")
        return (self.out_channels, oh, ow)

    def _pad(self, x):
        if self.padding == 0:
            return x
        p = self.padding
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        _, oh, ow = self.out_shape((c, h, w))
        self._x = x
        xp = self._pad(x)
        k = self.KERNEL
        L = oh * ow
        wmat = self.weight.value.reshape(self.out_channels, c * k * k)
        out = np.empty((n, self.out_channels, oh, ow), dtype=x.dtype)
        chunk = max(1, _COL_CHUNK_ELEMS // max(1, L * c * k * k))
        for i in range(0, n, chunk):
            col = _im2col(xp[i:i + chunk], self.stride, oh, ow)
            flat = wmat @ col  # (O, chunk*L)
            out[i:i + chunk] = flat.reshape(self.out_channels, -1, oh, ow) \
                                   .transpose(1, 0, 2, 3)
        out += self.bias.value[None, :, None, None]
        return out

    def backward(self, dout):
        x = self._x
        n, c, h, w = x.shape
        _, oh, ow = self.out_shape((c, h, w))
        k, s, p = self.KERNEL, self.stride, self.padding
        L = oh * ow
        xp = self._pad(x)
        wmat = self.weight.value.reshape(self.out_channels, c * k * k)
        dw = np.zeros_like(wmat)
        dxp = np.zeros_like(xp)
        chunk = max(1, _COL_CHUNK_ELEMS // max(1, L * c * k * k))
        for i in range(0, n, chunk):
            col = _im2col(xp[i:i + chunk], s, oh, ow)
            dmat = np.ascontiguousarray(
                dout[i:i + chunk].transpose(1, 0, 2, 3)) \
                .reshape(self.out_channels, -1)
            dw += dmat @ col.T
            dcol = wmat.T @ dmat
            _col2im(dcol, dxp[i:i + chunk], s, oh, ow)
        self.weight.grad += dw.reshape(self.weight.value.shape)
        self.bias.grad += dout.sum(axis=(0, 2, 3))
        self._x = None
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp

    def astype(self, dtype):
        clone = Conv2d.__new__(Conv2d)
        clone.in_channels = self.in_channels
        clone.out_channels = self.out_channels
        clone.stride = self.stride
        clone.padding = self.padding
        clone.weight = Parameter.zeros_like(self.weight.value.astype(dtype))
        clone.bias = Parameter.zeros_like(self.bias.value.astype(dtype))
        clone._x = None
        return clone


class MaxPool2x2(Layer):
    """2x2 max pooling; odd trailing rows/columns are truncated.

    The gradient routes to the argmax position, ties resolved toward the
    first element of the window in row-major order.
    """

    tag = "maxpool"

    WINDOW = ((0, 0), (0, 1), (1, 0), (1, 1))  # row-major within the window

    def __init__(self):
        self._argmax = None
        self._in_shape = None

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        self._in_shape = x.shape
        best = x[:, :, 0:h2 * 2:2, 0:w2 * 2:2].copy()
        idx = np.zeros(best.shape, dtype=np.uint8)
        for k, (di, dj) in enumerate(self.WINDOW[1:], start=1):
            cand = x[:, :, di:h2 * 2:2, dj:w2 * 2:2]
            mask = cand > best  # strict: ties stay with the earlier position
            np.copyto(best, cand, where=mask)
            idx[mask] = k
        self._argmax = idx
        return best

    def backward(self, dout):
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        h2, w2 = self._argmax.shape[2], self._argmax.shape[3]
        for k, (di, dj) in enumerate(self.WINDOW):
            view = dx[:, :, di:h2 * 2:2, dj:w2 * 2:2]
            np.copyto(view, dout, where=(self._argmax == k))
        return dx


class ReLU(Layer):
    """``inplace`` clips the input buffer directly; only safe inside a
    sequential graph where no other layer caches that buffer."""

    tag = "relu"

    def __init__(self, inplace: bool = False):
        self.inplace = inplace
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        if self.inplace:
            return np.multiply(x, self._mask, out=x)
        return x * self._mask

    def backward(self, dout):
        if self.inplace:
            return np.multiply(dout, self._mask, out=dout)
        return dout * self._mask


class Dropout(Layer):
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode.

    ``fixed_mask`` pins the mask across calls so finite differencing sees a
    deterministic function.
    """

    tag = "dropout"

    def __init__(self, rate: float = 0.5, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate out of range: {rate}")
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)
        self.fixed_mask = None
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if self.fixed_mask is not None and self.fixed_mask.shape == x.shape:
            mask = self.fixed_mask
        else:
            mask = (self.rng.random(x.shape) >= self.rate)
        self._mask = mask
        return x * mask / (1.0 - self.rate)

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask / (1.0 - self.rate)

    def astype(self, dtype):
        clone = Dropout(self.rate, np.random.default_rng(0))
        clone.fixed_mask = self.fixed_mask
        return clone


class Flatten(Layer):
    tag = "flatten"

    def __init__(self):
        self._in_shape = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._in_shape)


class Dense(Layer):
    tag = "dense"

    def __init__(self, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 init_scale: float = 1.0):
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter.zeros_like(
            init_scale * he_uniform((in_dim, out_dim), in_dim, rng, dtype))
        self.bias = Parameter.zeros_like(np.zeros(out_dim, dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ValueError(f"expected ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def forward(self, x, training=False):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dout):
        self.weight.grad += self._x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value.T

    def astype(self, dtype):
        clone = Dense.__new__(Dense)
        clone.in_dim, clone.out_dim = self.in_dim, self.out_dim
        clone.weight = Parameter.zeros_like(self.weight.value.astype(dtype))
        clone.bias = Parameter.zeros_like(self.bias.value.astype(dtype))
        clone._x = None
        return clone


class Softmax(Layer):
    tag = "softmax"

    def __init__(self):
        self._probs = None

    def forward(self, x, training=False):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        self._probs = e / e.sum(axis=-1, keepdims=True)
        return self._probs

    def backward(self, dout):
        p = self._probs
        inner = (dout * p).sum(axis=-1, keepdims=True)
        return p * (dout - inner)


class LayerGraph:
    """A sequential stack of layers with shared forward/backward plumbing."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def out_shape(self, in_shape: tuple) -> tuple:
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def shape_trace(self, in_shape: tuple) -> list[tuple]:
        shapes = [tuple(in_shape)]
        for layer in self.layers:
            shapes.append(layer.out_shape(shapes[-1]))
        return shapes

    def astype(self, dtype) -> "LayerGraph":
        return LayerGraph([layer.astype(dtype) for layer in self.layers])

    def freeze_dropout_masks(self):
        """Pin every dropout layer's current mask for repeatable evaluation."""
        for layer in self.layers:
            if isinstance(layer, Dropout) and layer._mask is not None:
                layer.fixed_mask = layer._mask


def softmax_cross_entropy(logits: np.ndarray, target):
    """Stable softmax cross-entropy loss and gradient w.r.t. the logits.

    Accepts a single example (1-D logits, integer target) or a batch
    ((N, K) logits, (N,) targets); batch loss is the mean and the gradient
    is normalized by N.
    """
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    tg = np.array([target]) if single else np.asarray(target)
    if np.any(tg < 0) or np.any(tg >= lg.shape[1]):
        raise ValueError("target class out of range")
    shifted = lg - lg.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = lg.shape[0]
    loss = -log_probs[np.arange(n), tg].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), tg] -= 1.0
    grad /= n
    if single:
        return float(loss), grad[0]
    return float(loss), grad


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0


def optimizer_step(state: Adam):
    """Apply one Adam update from the accumulated gradients."""
    state.step()


def graph_loss(graph: LayerGraph, x: np.ndarray, target: int,
               training: bool = False) -> tuple[float, np.ndarray | None]:
    """Loss of a single example through a graph, and the output-side gradient.

    If the graph ends in Softmax the output is a distribution and the loss is
    -log p[target]; otherwise the output is treated as logits under fused
    softmax cross-entropy.
    """
    out = graph.forward(x[None], training=training)[0]
    if isinstance(graph.layers[-1], Softmax):
        p = max(float(out[target]), 1e-300)
        dout = np.zeros_like(out)
        dout[target] = -1.0 / p
        return -np.log(p), dout[None]
    loss, grad = softmax_cross_entropy(out, target)
    return loss, grad[None]


def gradient_check(graph: LayerGraph, x: np.ndarray, target: int,
                   epsilon: float = 1e-4, training: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 on a cloned graph; with ``training`` the dropout masks
    are generated once and pinned so both gradient routes see the same
    function.
    """
    g64 = graph.astype(np.float64)
    x64 = x.astype(np.float64)
    if training:
        g64.forward(x64[None], training=True)
        g64.freeze_dropout_masks()
    g64.zero_grad()
    _, dout = graph_loss(g64, x64, target, training=training)
    g64.backward(dout)
    analytic = [p.grad.copy() for p in g64.params()]

    worst = 0.0
    for p, ga in zip(g64.params(), analytic):
        flat = p.value.ravel()
        gflat = ga.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = graph_loss(g64, x64, target, training=training)
            flat[i] = orig - epsilon
            down, _ = graph_loss(g64, x64, target, training=training)
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            denom = max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


# --- functional single-example surface ---------------------------------------

def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Valid 3x3 cross-correlation of one (C, H, W) example."""
    out_ch, in_ch = weights.shape[:2]
    if x.ndim != 3 or x.shape[0] != in_ch:
        raise ValueError(f"input shape {x.shape} incompatible with weights")
    layer = Conv2d(in_ch, out_ch, stride=stride, padding=padding, dtype=x.dtype)
    layer.weight.value = weights
    layer.bias.value = bias
    layer.out_shape(x.shape)  # validates spatial dims
    return layer.forward(x[None])[0]


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    return MaxPool2x2().forward(x[None])[0]


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape != (weights.shape[0],):
        raise ValueError(f"input shape {x.shape} incompatible with weights")
    return x @ weights + bias


def dropout(x: np.ndarray, rate: float, mode: str = "train",
            seed: int = 0) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown dropout mode: {mode}")
    layer = Dropout(rate, np.random.default_rng(seed))
    return layer.forward(x[None], training=(mode == "train"))[0]


def softmax(x: np.ndarray) -> np.ndarray:
    return Softmax().forward(np.asarray(x))


# --- parameter checkpoints ----------------------------------------------------
# Layout: magic "XMCK", uint32 version, uint32 layer count, then per layer a
# fixed 8-byte tag, uint32 tensor count, and per tensor (uint32 rank, dims,
# float32 little-endian data); a CRC32 of everything before it closes the file.

XMCK_MAGIC = b"XMCK"
XMCK_VERSION = 1


def save_checkpoint(graph: LayerGraph) -> bytes:
    parts = [XMCK_MAGIC, struct.pack("<II", XMCK_VERSION, len(graph.layers))]
    for layer in graph.layers:
        tag = layer.tag.encode("ascii")[:8].ljust(8, b"\0")
        tensors = [p.value for p in layer.params()]
        parts.append(tag)
        parts.append(struct.pack("<I", len(tensors)))
        for t in tensors:
            arr = np.ascontiguousarray(t, dtype="<f4")
            parts.append(struct.pack("<I", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def load_checkpoint(graph: LayerGraph, data: bytes):
    """Load parameters into a structurally identical graph; validates CRC."""
    if len(data) < 12 or data[:4] != XMCK_MAGIC:
        raise ValueError("bad magic, not an XMCK checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError("checkpoint CRC mismatch")
    version, n_layers = struct.unpack_from("<II", body, 4)
    if version != XMCK_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if n_layers != len(graph.layers):
        raise ValueError(f"layer count mismatch: {n_layers} != {len(graph.layers)}")
    offset = 12
    for layer in graph.layers:
        tag = body[offset:offset + 8].rstrip(b"\0").decode("ascii")
        offset += 8
        if tag != layer.tag:
            raise ValueError(f"layer tag mismatch: {tag} != {layer.tag}")
        (n_tensors,) = struct.unpack_from("<I", body, offset)
        offset += 4
        layer_params = layer.params()
        if n_tensors != len(layer_params):
            raise ValueError("tensor count mismatch")
        for p in layer_params:
            (rank,) = struct.unpack_from("<I", body, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            if dims != p.value.shape:
                raise ValueError(f"tensor shape mismatch: {dims} != {p.value.shape}")
            count = int(np.prod(dims))
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            p.value[...] = arr.reshape(dims).astype(p.value.dtype)
