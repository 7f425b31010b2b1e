"""Neural-network primitives built on the autodiff tape.

Composite layers (linear, glu, attention, lstm_step) are compositions of
tape ops and inherit their gradients; layer_norm and the convolutions carry
hand-written backward rules, all verified against finite differences.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import autodiff as ad
from .autodiff import Node, as_node
from .errors import ContractViolation

# Additive attention-mask constant: large enough to zero the softmax slot,
# small enough never to overflow in 64-bit.
MASK_NEG = -1e30


def linear(x, w, b=None) -> Node:
    """x @ w (+ b), with w shaped (in_dim, out_dim)."""
    x, w = as_node(x), as_node(w)
    if x.value.shape[-1] != w.value.shape[0]:
        raise ContractViolation(
            f"linear: input dim {x.value.shape[-1]} != weight rows {w.value.shape[0]}")
    y = ad.matmul(x, w)
    if b is not None:
        y = ad.add(y, b)
    return y


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Node:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_node(x), as_node(gain), as_node(bias)
    d = x.value.shape[-1]
    if gain.value.shape != (d,) or bias.value.shape != (d,):
        raise ContractViolation(
            f"layer_norm: gain/bias must be ({d},), got {gain.value.shape}/{bias.value.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Node(xhat * gain.value + bias.value, (x, gain, bias), "layer_norm")

    def _bw(g):
        gg = g * gain.value
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        ad._acc(x, (gg - m1 - xhat * m2) * inv)
        ad._acc(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        ad._acc(bias, g.reshape(-1, d).sum(axis=0))

    out._backward = _bw
    return out


def glu(x, axis: int = -1) -> Node:
    """Gated linear unit: split in half along `axis`, gate with sigmoid."""
    x = as_node(x)
    n = x.value.shape[axis]
    if n % 2 != 0:
        raise ContractViolation(f"glu: axis size {n} is odd")
    half = n // 2
    sl_a = [slice(None)] * x.value.ndim
    sl_b = [slice(None)] * x.value.ndim
    sl_a[axis] = slice(0, half)
    sl_b[axis] = slice(half, n)
    a = ad.take_slice(x, tuple(sl_a))
    b = ad.take_slice(x, tuple(sl_b))
    return ad.mul(a, ad.sigmoid(b))


def depthwise_conv1d(x, kernel) -> Node:
    """Per-channel 1-D convolution with same padding; kernel is (k, d), k odd."""
    x, kernel = as_node(x), as_node(kernel)
    T, d = x.value.shape
    k, dk = kernel.value.shape
    if dk != d:
        raise ContractViolation(f"depthwise_conv1d: kernel dim {dk} != input dim {d}")
    if k % 2 == 0:
        raise ContractViolation(f"depthwise_conv1d: kernel size {k} must be odd")
    pad = (k - 1) // 2
    xp = np.zeros((T + 2 * pad, d), dtype=x.value.dtype)
    xp[pad:pad + T] = x.value
    y = np.zeros_like(x.value)
    for j in range(k):
        y += xp[j:j + T] * kernel.value[j]
    out = Node(y, (x, kernel), "depthwise_conv1d")

    def _bw(g):
        dxp = np.zeros_like(xp)
        dker = np.zeros_like(kernel.value)
        for j in range(k):
            dxp[j:j + T] += g * kernel.value[j]
            dker[j] = (g * xp[j:j + T]).sum(axis=0)
        ad._acc(x, dxp[pad:pad + T])
        ad._acc(kernel, dker)

    out._backward = _bw
    return out


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Node:
    """2-D convolution: x (H, W, Cin), w (kh, kw, Cin, Cout), optional bias (Cout,)."""
    x, w = as_node(x), as_node(w)
    H, W, cin = x.value.shape
    kh, kw, wcin, cout = w.value.shape
    if wcin != cin:
        raise ContractViolation(f"conv2d: input channels {cin} != weight channels {wcin}")
    xp = np.pad(x.value, ((pad, pad), (pad, pad), (0, 0)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ContractViolation(
            f"conv2d: output would be empty for input {x.value.shape} kernel ({kh},{kw})")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    cols = win[::stride, ::stride]  # (Ho, Wo, Cin, kh, kw)
    y = np.einsum("xycij,ijco->xyo", cols, w.value, optimize=True)
    parents = (x, w) if b is None else (x, w, as_node(b))
    if b is not None:
        bn = parents[2]
        y = y + bn.value
    out = Node(y, parents, "conv2d")

    def _bw(g):
        dw = np.einsum("xycij,xyo->ijco", cols, g, optimize=True)
        dcols = np.einsum("xyo,ijco->xycij", g, w.value, optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[i:i + Ho * stride:stride, j:j + Wo * stride:stride] += dcols[:, :, :, i, j]
        dx = dxp[pad:pad + H, pad:pad + W] if pad else dxp
        ad._acc(x, dx)
        ad._acc(w, dw)
        if b is not None:
            ad._acc(parents[2], g.sum(axis=(0, 1)))

    out._backward = _bw
    return out


def multi_head_attention(q, k, v, num_heads: int, mask=None) -> Node:
    """Scaled dot-product attention over (T, d) sequences.

    `mask`, when given, is an additive array broadcastable to the score
    shape (heads, Tq, Tk); blocked slots should hold MASK_NEG.
    """
    q, k, v = as_node(q), as_node(k), as_node(v)
    Tq, d = q.value.shape
    Tk, dk_ = k.value.shape
    if d != dk_ or v.value.shape != (Tk, d):
        raise ContractViolation(
            f"multi_head_attention: incompatible shapes q{q.value.shape} "
            f"k{k.value.shape} v{v.value.shape}")
    if d % num_heads != 0:
        raise ContractViolation(
            f"multi_head_attention: dim {d} not divisible by heads {num_heads}")
    dh = d // num_heads

    def split(x, T):
        return ad.transpose(ad.reshape(x, (T, num_heads, dh)), (1, 0, 2))

    qh = split(q, Tq)  # (h, Tq, dh)
    kh = split(k, Tk)
    vh = split(v, Tk)
    scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    if mask is not None:
        scores = ad.add(scores, Node(np.asarray(mask, dtype=scores.value.dtype)))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(attn, vh)  # (h, Tq, dh)
    return ad.reshape(ad.transpose(ctx, (1, 0, 2)), (Tq, d))


def lstm_step(x, state, wx, wh, b):
    """One LSTM step; x is (1, d_in), state is ((1, d), (1, d)).

    Gate layout along the 4d axis is [input, forget, cell, output].
    Returns (output, new_state); output aliases the new hidden state.
    """
    h, c = state
    x, h, c = as_node(x), as_node(h), as_node(c)
    d4 = as_node(wx).value.shape[1]
    if d4 % 4 != 0 or as_node(wh).value.shape[1] != d4:
        raise ContractViolation("lstm_step: gate weights must have 4*d columns")
    d = d4 // 4
    z = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
    i = ad.sigmoid(ad.take_slice(z, (slice(None), slice(0, d))))
    f = ad.sigmoid(ad.take_slice(z, (slice(None), slice(d, 2 * d))))
    g = ad.tanh(ad.take_slice(z, (slice(None), slice(2 * d, 3 * d))))
    o = ad.sigmoid(ad.take_slice(z, (slice(None), slice(3 * d, 4 * d))))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, (h_new, c_new)


def dropout(x, p: float, seed: int, step: int, site: str, train: bool) -> Node:
    """Inverted dropout with a deterministic (seed, step, site) mask."""
    if not train or p <= 0.0:
        return as_node(x)
    x = as_node(x)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, step,
                                 zlib.crc32(site.encode("utf-8"))])
    mask = (rng.random(x.value.shape) >= p) / (1.0 - p)
    return ad.mul(x, Node(mask.astype(x.value.dtype)))


def sinusoid_positions(T: int, d: int, dtype=np.float64) -> np.ndarray:
    """Classic sin/cos absolute positional table, shape (T, d)."""
    pos = np.arange(T, dtype=dtype)[:, None]
    dim = np.arange(0, d, 2, dtype=dtype)[None, :]
    angle = pos / np.power(10000.0, dim / d)
    pe = np.zeros((T, d), dtype=dtype)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe
