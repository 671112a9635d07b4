"""Convolution, resampling, pooling and attention arithmetic on the tape."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, concat_channels, gelu, make_op, sigmoid, slice_channels, softplus  # noqa: F401


def conv_output_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh, kw, stride, dilation):
    """(N, C, Ho, Wo, kh, kw) strided view over an already padded input."""
    ekh, ekw = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    v = sliding_window_view(xp, (ekh, ekw), axis=(2, 3))
    return v[:, :, ::stride, ::stride, ::dilation, ::dilation]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Zero-padded 2-D cross-correlation (no kernel flip)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride}, padding={padding}, dilation={dilation}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise ValueError(f"conv2d: channel axis mismatch, input has {c} channels but kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match output channels {cout}")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: non-positive output extent {ho}x{wo} for input {h}x{w}, "
                         f"kernel {kh}x{kw}, padding {padding}, dilation {dilation}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _windows(xp, kh, kw, stride, dilation).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, :, r0:r0 + hs:stride, c0:c0 + ws:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("conv2d", out, inputs, bwd)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic 1-D linear interpolation matrix with half-pixel centres."""
    a = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - lam)
    np.add.at(a, (rows, i1), lam)
    return a


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize (align_corners=False), applied as A_h @ x @ A_w^T."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_upsample: output extent must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if h == 0 or w == 0:
        raise ValueError(f"bilinear_upsample: zero-sized spatial input {x.shape}")
    ah = interp_matrix(h, out_h, x.dtype)
    aw = interp_matrix(w, out_w, x.dtype)
    out = ah @ x.data @ aw.T
    return make_op("upsample", out, (x,), lambda g: (ah.T @ g @ aw,))


def avg_pool(x: Tensor, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Mean over k x k windows; the divisor is always k*k, padding included."""
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError(f"avg_pool: invalid k={k}, stride={stride}, padding={padding}")
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding, 1)
    wo = conv_output_size(w, k, stride, padding, 1)
    if ho < 1 or wo < 1:
        raise ValueError(f"avg_pool: output extent {ho}x{wo} < 1 for input {h}x{w}, k={k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # separable box sum: rows then columns
    rs = sliding_window_view(xp, k, axis=2)[:, :, ::stride].sum(axis=-1)
    out = sliding_window_view(rs, k, axis=3)[:, :, :, ::stride].sum(axis=-1) / (k * k)
    out = out.astype(x.dtype)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gk = g / (k * k)
        hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + hs:stride, j:j + ws:stride] += gk
        return (gxp[:, :, padding:padding + h, padding:padding + w],)

    return make_op("avg_pool", out, (x,), bwd)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul_batched: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    return make_op("matmul", out, (a, b),
                   lambda g: (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return g @ weight.data, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("linear", out, inputs, bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return make_op("softmax", out, (x,),
                   lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (biased variance), then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or offset.shape != (d,):
        raise ValueError(f"layer_norm: gain/offset shapes {gain.shape}/{offset.shape} "
                         f"must both be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data

    def bwd(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op("layer_norm", out, (x, gain, offset), bwd)

