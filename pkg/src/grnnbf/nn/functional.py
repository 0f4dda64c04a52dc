"""Fused differentiable kernels with hand-written backward passes."""

from __future__ import annotations

import numba
import numpy as np

from .tensor import Tensor, as_tensor

__all__ = ["affine", "prelu", "layer_norm", "dilated_conv1d", "gru_layer", "overlap_add", "shift_taps", "crf_filter"]


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W + b over the last axis; W is (in, out)."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"affine: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = x @ weight
    return y + bias if bias is not None else y


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """max(0, x) + a * min(0, x) with one slope per channel (last axis)."""
    x = as_tensor(x)
    xv, a = x.data, slope.data
    pos = xv >= 0

    def backward(g):
        gx = np.where(pos, g, g * a)
        ga = np.where(pos, 0.0, g * xv).reshape(-1, xv.shape[-1]).sum(axis=0)
        return gx, ga.reshape(a.shape)

    return Tensor._op(np.where(pos, xv, xv * a), (x, slope), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gamma * x + beta."""
    x = as_tensor(x)
    xv = x.data
    D = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.data

    def backward(g):
        dxhat = g * gv
        gx = inv / D * (D * dxhat - dxhat.sum(-1, keepdims=True)
                        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))
        flat_g = g.reshape(-1, D)
        ggamma = np.sum(flat_g * xhat.reshape(-1, D), axis=0)
        gbeta = flat_g.sum(axis=0)
        return gx, ggamma, gbeta

    return Tensor._op(xhat * gv + beta.data, (x, gamma, beta), backward)


def dilated_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, dilation: int = 1,
                   causal: bool = False) -> Tensor:
    """Zero-padded 1-D convolution along time preserving the frame count.

    ``x`` is (T, C_in) or (B, T, C_in); ``weight`` is (k, C_in, C_out).  In
    centered mode tap j of a k-tap kernel reads frame ``t + (j - (k-1)/2) * d``.
    """
    x = as_tensor(x)
    k, cin, cout = weight.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if x.shape[-1] != cin:
        raise ValueError(f"conv1d: input channels {x.shape[-1]} != {cin}")
    squeeze = x.ndim == 2
    xv = x.data[None] if squeeze else x.data
    B, T, _ = xv.shape
    span = dilation * (k - 1)
    left = span if causal else span // 2
    xp = np.pad(xv, ((0, 0), (left, span - left), (0, 0)))
    cols = np.stack([xp[:, j * dilation : j * dilation + T] for j in range(k)], axis=2)
    cols = cols.reshape(B * T, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    y = cols @ w2
    if bias is not None:
        y = y + bias.data
    y = y.reshape(B, T, cout)

    def backward(g):
        g2 = g.reshape(B * T, cout)
        gw = (cols.T @ g2).reshape(weight.shape)
        dcols = (g2 @ w2.T).reshape(B, T, k, cin)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j * dilation : j * dilation + T] += dcols[:, :, j]
        gx = dxp[:, left : left + T]
        if squeeze:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._op(y[0] if squeeze else y, parents, backward)


def gru_layer(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
              h0: Tensor | None = None) -> Tensor:
    """One unidirectional GRU layer over (B, T, D) inputs, returning (B, T, H).

    Gates are stacked [reset, update, candidate] along the last axis of the
    weights:

        r = sigmoid(x W_r + b_r + h U_r + c_r)
        z = sigmoid(x W_z + b_z + h U_z + c_z)
        n = tanh(x W_n + b_n + r * (h U_n + c_n))
        h' = (1 - z) * h + z * n
    """
    x = as_tensor(x)
    xv = x.data
    B, T, D = xv.shape
    H = w_hh.shape[0]
    if w_ih.shape != (D, 3 * H):
        raise ValueError(f"gru: w_ih shape {w_ih.shape} != {(D, 3 * H)}")
    dt = xv.dtype
    Wh = np.ascontiguousarray(w_hh.data, dtype=dt)
    # time-major buffers keep the per-step slices contiguous
    xt = np.ascontiguousarray(xv.transpose(1, 0, 2)).reshape(T * B, D)
    gi = (xt @ w_ih.data + b_ih.data).reshape(T, B, 3 * H)
    hs = np.empty((T + 1, B, H), dtype=dt)
    hs[0] = 0.0 if h0 is None else np.broadcast_to(h0.data, (B, H))
    rz_all = np.empty((T, B, 2 * H), dtype=dt)
    n_all = np.empty((T, B, H), dtype=dt)
    ghn_all = np.empty_like(n_all)
    bh = np.ascontiguousarray(b_hh.data, dtype=dt)
    _gru_forward(gi, Wh, bh, hs, rz_all, n_all, ghn_all)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2), dtype=dt)
        dg = np.empty((T, B, 3 * H), dtype=dt)
        dgh_n = np.empty((T, B, H), dtype=dt)
        dh_next = _gru_backward(gt, np.ascontiguousarray(Wh.T), hs, rz_all, n_all, ghn_all, dg, dgh_n)
        dgi2 = dg.reshape(T * B, 3 * H)
        dgh2 = np.concatenate([dg[:, :, : 2 * H], dgh_n], axis=2).reshape(T * B, 3 * H)
        gx = (dgi2 @ w_ih.data.T).reshape(T, B, D).transpose(1, 0, 2)
        gw_ih = xt.T @ dgi2
        gw_hh = hs[:T].reshape(T * B, H).T @ dgh2
        grads = [gx, gw_ih, gw_hh, dgi2.sum(axis=0), dgh2.sum(axis=0)]
        if h0 is not None:
            grads.append(dh_next.sum(axis=0).reshape(h0.shape) if h0.ndim == 1 else dh_next)
        return tuple(grads)

    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))
    parents = (x, w_ih, w_hh, b_ih, b_hh) + ((h0,) if h0 is not None else ())
    return Tensor._op(out, parents, backward)


def _gru_forward(gi, Wh, bh, hs, rz_all, n_all, ghn_all):
    # numpy's vectorized tanh beats a compiled scalar loop here; in-place
    # ufuncs keep the per-step temporaries out of the allocator
    T, B, H3 = gi.shape
    H = H3 // 3
    gi[:, :, : 2 * H] += bh[: 2 * H]
    gh = np.empty((B, H3), dtype=gi.dtype)
    for t in range(T):
        np.matmul(hs[t], Wh, out=gh)
        rz, n, ghn, h = rz_all[t], n_all[t], ghn_all[t], hs[t + 1]
        np.add(gi[t, :, : 2 * H], gh[:, : 2 * H], out=rz)
        rz *= 0.5
        np.tanh(rz, out=rz)
        rz += 1.0
        rz *= 0.5
        np.add(gh[:, 2 * H :], bh[2 * H :], out=ghn)
        np.multiply(rz[:, :H], ghn, out=n)
        n += gi[t, :, 2 * H :]
        np.tanh(n, out=n)
        np.subtract(n, hs[t], out=h)
        h *= rz[:, H:]
        h += hs[t]


@numba.njit(cache=True)
def _gru_backward(gt, WhT, hs, rz_all, n_all, ghn_all, dg, dgh_n):
    """Fills dg (input-side gate gradients) and dgh_n (recurrent candidate
    gradient); returns the gradient w.r.t. the initial state."""
    T, B, H = gt.shape
    dh_next = np.zeros((B, H), dtype=gt.dtype)
    dgh = np.empty((B, 3 * H), dtype=gt.dtype)
    for t in range(T - 1, -1, -1):
        dh = gt[t] + dh_next
        for b in range(B):
            for j in range(H):
                r = rz_all[t, b, j]
                z = rz_all[t, b, H + j]
                n = n_all[t, b, j]
                d = dh[b, j]
                dn = d * z * (1.0 - n * n)
                dr = dn * ghn_all[t, b, j] * r * (1.0 - r)
                dz = d * (n - hs[t, b, j]) * z * (1.0 - z)
                dg[t, b, j] = dr
                dg[t, b, H + j] = dz
                dg[t, b, 2 * H + j] = dn
                dgh[b, j] = dr
                dgh[b, H + j] = dz
                dgh[b, 2 * H + j] = dn * r
                dgh_n[t, b, j] = dn * r
                dh[b, j] = d * (1.0 - z)
        dh_next = dh + dgh @ WhT
    return dh_next


def overlap_add(frames: Tensor, hop: int) -> Tensor:
    """Sum (T, W) frames spaced ``hop`` samples apart into one signal."""
    frames = as_tensor(frames)
    T, W = frames.shape
    total = (T - 1) * hop + W
    idx = np.arange(T)[:, None] * hop + np.arange(W)[None, :]
    out = np.zeros(total, dtype=frames.dtype)
    np.add.at(out, idx, frames.data)
    return Tensor._op(out, (frames,), lambda g: (g[idx],))


def shift_taps(h: Tensor, half_width: int) -> Tensor:
    """out[t, f, a*K+b] = h[t+a-k, f+b-k, a*K+b] for K = 2k+1, zero outside the grid.

    Gathers, for every tap offset, that tap of the filter stored at the
    offset bin.
    """
    h = as_tensor(h)
    k = half_width
    K = 2 * k + 1
    T, F, taps = h.shape
    if taps != K * K:
        raise ValueError(f"shift_taps: {taps} taps != ({K})^2")
    padded = np.pad(h.data, ((k, k), (k, k), (0, 0)))
    out = np.empty_like(h.data)
    for a in range(K):
        for b in range(K):
            j = a * K + b
            out[:, :, j] = padded[a : a + T, b : b + F, j]

    def backward(g):
        gp = np.zeros_like(padded)
        for a in range(K):
            for b in range(K):
                j = a * K + b
                gp[a : a + T, b : b + F, j] += g[:, :, j]
        return (gp[k : k + T, k : k + F],)

    return Tensor._op(out, (h,), backward)


def crf_filter(h_re: Tensor, h_im: Tensor, nb: np.ndarray) -> Tensor:
    """Complex neighbourhood filtering sum_k h[t,f,k] * nb[t,f,k,m].

    ``h_re``/``h_im`` are (T, F, K) filter tensors and ``nb`` a constant
    complex (T, F, K, M) neighbourhood stack.  Returns (2, T, F, M) holding
    the real and imaginary parts of the result.
    """
    hr, hi = h_re.data, h_im.data
    nr = nb.real.astype(hr.dtype)
    ni = nb.imag.astype(hr.dtype)
    out_re = np.einsum("tfk,tfkm->tfm", hr, nr) - np.einsum("tfk,tfkm->tfm", hi, ni)
    out_im = np.einsum("tfk,tfkm->tfm", hr, ni) + np.einsum("tfk,tfkm->tfm", hi, nr)

    def backward(g):
        gr, gi = g[0], g[1]
        d_re = np.einsum("tfm,tfkm->tfk", gr, nr) + np.einsum("tfm,tfkm->tfk", gi, ni)
        d_im = np.einsum("tfm,tfkm->tfk", gi, nr) - np.einsum("tfm,tfkm->tfk", gr, ni)
        return d_re, d_im

    return Tensor._op(np.stack([out_re, out_im]), (h_re, h_im), backward)
