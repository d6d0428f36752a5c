"""Network layer primitives with explicit forward and backward passes.

All layers are pure functions of numpy arrays: forward returns the output
plus a cache, backward consumes the cache and the upstream gradient. Array
layout is batch-major, time-preserving: (B, T, F, C) for conv blocks and
(B, T, D) for sequence layers. Formulas follow the standard derivations;
dtype (float32/float64) follows the inputs.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.special import expit as sigmoid

BN_MOMENTUM = 0.99
BN_EPS = 1e-3

# Direct convolution kernels are JIT compiled; set DRUMSCRIBE_PURE_NUMPY=1 to
# force the (slower) pure-numpy path.
if os.environ.get("DRUMSCRIBE_PURE_NUMPY"):
    _NUMBA = None
else:
    try:
        import numba as _NUMBA
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _NUMBA = None

if _NUMBA is not None:
    # The network's GEMMs are small and bandwidth bound; a spinning BLAS pool
    # fights the numba OpenMP pool for the cores and slows every kernel.
    # Numba owns the parallelism, BLAS runs single threaded.
    os.environ.setdefault("OMP_WAIT_POLICY", "passive")
    try:
        from threadpoolctl import threadpool_limits

        _BLAS_LIMIT = threadpool_limits(limits=1, user_api="blas")
    except Exception:  # pragma: no cover - tuning only
        _BLAS_LIMIT = None


if _NUMBA is not None:
    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _conv3x3_fwd_jit(xp, w, b, out):
        B, Tp, Fp, Ci = xp.shape
        Co = w.shape[3]
        T = Tp - 2
        F = Fp - 2
        for nt in _NUMBA.prange(B * T):
            n = nt // T
            t = nt % T
            acc = np.empty(Co, dtype=xp.dtype)
            for f in range(F):
                for co in range(Co):
                    acc[co] = b[co]
                for di in range(3):
                    for dj in range(3):
                        for ci in range(Ci):
                            xv = xp[n, t + di, f + dj, ci]
                            for co in range(Co):
                                acc[co] += xv * w[di, dj, ci, co]
                for co in range(Co):
                    out[n, t, f, co] = acc[co]

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _conv3x3_dx_jit(dout, w, dxp):
        # Gather form: one write per padded-input cell, no cross-thread
        # races; interior cells take a bounds-check-free fast path.
        B, T, F, Co = dout.shape
        Ci = w.shape[2]
        Tp = T + 2
        Fp = F + 2
        for nt in _NUMBA.prange(B * Tp):
            n = nt // Tp
            tp = nt % Tp
            interior_t = 2 <= tp < T
            for fp in range(Fp):
                if interior_t and 2 <= fp < F:
                    for ci in range(Ci):
                        s = dout[0, 0, 0, 0] * 0
                        for di in range(3):
                            t = tp - di
                            f0 = fp - 2
                            for dj in range(3):
                                f = f0 + dj
                                for co in range(Co):
                                    s += dout[n, t, f, co] * w[di, 2 - dj, ci, co]
                        dxp[n, tp, fp, ci] = s
                else:
                    for ci in range(Ci):
                        s = dout[0, 0, 0, 0] * 0
                        for di in range(3):
                            t = tp - di
                            if t < 0 or t >= T:
                                continue
                            for dj in range(3):
                                f = fp - dj
                                if f < 0 or f >= F:
                                    continue
                                for co in range(Co):
                                    s += dout[n, t, f, co] * w[di, dj, ci, co]
                        dxp[n, tp, fp, ci] = s

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _conv3x3_dw_jit(xp, dout, dw):
        B, T, F, Co = dout.shape
        Ci = xp.shape[3]
        for k in _NUMBA.prange(9):
            di = k // 3
            dj = k % 3
            for n in range(B):
                for t in range(T):
                    for f in range(F):
                        for ci in range(Ci):
                            xv = xp[n, t + di, f + dj, ci]
                            for co in range(Co):
                                dw[di, dj, ci, co] += xv * dout[n, t, f, co]

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _bn_stats_jit(x2, mean, var):
        # Chunked two-pass per-channel mean and biased variance: row-major
        # streaming with per-chunk partials (no cancellation-prone E[x^2]).
        rows, C = x2.shape
        nchunks = 64 if rows >= 64 else rows
        chunk = (rows + nchunks - 1) // nchunks
        partial = np.zeros((nchunks, C), dtype=x2.dtype)
        for k in _NUMBA.prange(nchunks):
            lo = k * chunk
            hi = min(lo + chunk, rows)
            for r in range(lo, hi):
                for c in range(C):
                    partial[k, c] += x2[r, c]
        for c in range(C):
            s = partial[0, c] * 0
            for k in range(nchunks):
                s += partial[k, c]
            mean[c] = s / rows
        partial[:] = 0
        for k in _NUMBA.prange(nchunks):
            lo = k * chunk
            hi = min(lo + chunk, rows)
            for r in range(lo, hi):
                for c in range(C):
                    d = x2[r, c] - mean[c]
                    partial[k, c] += d * d
        for c in range(C):
            s = partial[0, c] * 0
            for k in range(nchunks):
                s += partial[k, c]
            var[c] = s / rows

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _bn_normalize_jit(x2, mean, inv_std, gamma, beta, xn2, out2):
        rows, C = x2.shape
        for r in _NUMBA.prange(rows):
            for c in range(C):
                v = (x2[r, c] - mean[c]) * inv_std[c]
                xn2[r, c] = v
                out2[r, c] = gamma[c] * v + beta[c]

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _bn_backward_sums_jit(dout2, xn2, dgamma, dbeta):
        rows, C = dout2.shape
        nchunks = 64 if rows >= 64 else rows
        chunk = (rows + nchunks - 1) // nchunks
        pg = np.zeros((nchunks, C), dtype=dout2.dtype)
        pb = np.zeros((nchunks, C), dtype=dout2.dtype)
        for k in _NUMBA.prange(nchunks):
            lo = k * chunk
            hi = min(lo + chunk, rows)
            for r in range(lo, hi):
                for c in range(C):
                    d = dout2[r, c]
                    pg[k, c] += d * xn2[r, c]
                    pb[k, c] += d
        for c in range(C):
            sg = pg[0, c] * 0
            sb = sg
            for k in range(nchunks):
                sg += pg[k, c]
                sb += pb[k, c]
            dgamma[c] = sg
            dbeta[c] = sb

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _bn_backward_dx_jit(dout2, xn2, gamma, inv_std, dgamma, dbeta, dx2):
        rows, C = dout2.shape
        for r in _NUMBA.prange(rows):
            for c in range(C):
                dx2[r, c] = (
                    gamma[c]
                    * inv_std[c]
                    * (dout2[r, c] - dbeta[c] / rows - xn2[r, c] * dgamma[c] / rows)
                )

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _relu_jit(x2, out2, mask2):
        rows, C = x2.shape
        for r in _NUMBA.prange(rows):
            for c in range(C):
                v = x2[r, c]
                keep = v > 0
                mask2[r, c] = keep
                out2[r, c] = v if keep else v * 0

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _pool_fwd_jit(x, out, right_wins):
        B, T, F, C = x.shape
        P = F // 2
        for nt in _NUMBA.prange(B * T):
            n = nt // T
            t = nt % T
            for p in range(P):
                for c in range(C):
                    a = x[n, t, 2 * p, c]
                    bv = x[n, t, 2 * p + 1, c]
                    rw = bv > a
                    right_wins[n, t, p, c] = rw
                    out[n, t, p, c] = bv if rw else a

    @_NUMBA.njit(parallel=True, fastmath=True, cache=True)
    def _pool_bwd_jit(dout, right_wins, dx):
        B, T, P, C = dout.shape
        for nt in _NUMBA.prange(B * T):
            n = nt // T
            t = nt % T
            for p in range(P):
                for c in range(C):
                    d = dout[n, t, p, c]
                    if right_wins[n, t, p, c]:
                        dx[n, t, 2 * p + 1, c] = d
                    else:
                        dx[n, t, 2 * p, c] = d


# ---------------------------------------------------------------------------
# 3x3 same-padded convolution over (time, frequency). One GEMM per kernel
# offset: the shifted-window copy streams contiguously (unlike a full im2col
# gather) and the per-offset patch matrix is reused for both dW and dX.

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    B, T, F, Ci = x.shape
    Co = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    if _NUMBA is not None:
        out = np.empty((B, T, F, Co), dtype=x.dtype)
        _conv3x3_fwd_jit(xp, w, b, out)
        return out, (xp, w, (B, T, F, Ci))
    acc = None
    for di in range(3):
        for dj in range(3):
            patch = xp[:, di : di + T, dj : dj + F, :].reshape(-1, Ci)
            term = patch @ w[di, dj]
            acc = term if acc is None else np.add(acc, term, out=acc)
    out = acc.reshape(B, T, F, Co)
    out += b
    return out, (xp, w, (B, T, F, Ci))


def conv2d_backward(dout: np.ndarray, cache):
    xp, w, (B, T, F, Ci) = cache
    Co = w.shape[3]
    db = dout.sum(axis=(0, 1, 2))
    if _NUMBA is not None:
        dout = np.ascontiguousarray(dout)
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        _conv3x3_dx_jit(dout, w, dxp)
        _conv3x3_dw_jit(xp, dout, dw)
        dx = np.ascontiguousarray(dxp[:, 1 : 1 + T, 1 : 1 + F, :])
        return dx, dw, db
    d2 = dout.reshape(-1, Co)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, di : di + T, dj : dj + F, :].reshape(-1, Ci)
            dw[di, dj] = patch.T @ d2
            dxp[:, di : di + T, dj : dj + F, :] += (d2 @ w[di, dj].T).reshape(B, T, F, Ci)
    dx = dxp[:, 1 : 1 + T, 1 : 1 + F, :]
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# Per-channel batch normalization over (B, T, F)

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool):
    C = x.shape[-1]
    if train:
        if _NUMBA is not None:
            x2 = x.reshape(-1, C)
            mean = np.empty(C, dtype=x.dtype)
            var = np.empty(C, dtype=x.dtype)
            _bn_stats_jit(x2, mean, var)
        else:
            axes = tuple(range(x.ndim - 1))
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
        new_mean = (BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mean).astype(x.dtype)
        new_var = (BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var).astype(x.dtype)
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    std = np.sqrt(var + np.asarray(BN_EPS, dtype=x.dtype))
    if _NUMBA is not None:
        inv_std = (1.0 / std).astype(x.dtype)
        x2 = np.ascontiguousarray(x).reshape(-1, C)
        xn = np.empty_like(x2)
        out = np.empty_like(x2)
        _bn_normalize_jit(x2, mean.astype(x.dtype), inv_std, gamma, beta, xn, out)
        xn = xn.reshape(x.shape)
        out = out.reshape(x.shape)
    else:
        xn = (x - mean) / std
        out = gamma * xn + beta
    cache = (xn, std, gamma, train)
    return out, cache, new_mean, new_var


def batchnorm_backward(dout, cache):
    xn, std, gamma, train = cache
    C = dout.shape[-1]
    if _NUMBA is not None:
        dout2 = np.ascontiguousarray(dout).reshape(-1, C)
        xn2 = xn.reshape(-1, C)
        dgamma = np.empty(C, dtype=dout.dtype)
        dbeta = np.empty(C, dtype=dout.dtype)
        _bn_backward_sums_jit(dout2, xn2, dgamma, dbeta)
        inv_std = (1.0 / std).astype(dout.dtype)
        if train:
            dx2 = np.empty_like(dout2)
            _bn_backward_dx_jit(dout2, xn2, gamma, inv_std, dgamma, dbeta, dx2)
            dx = dx2.reshape(dout.shape)
        else:
            dx = (dout2 * (gamma * inv_std)).reshape(dout.shape)
        return dx, dgamma, dbeta
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xn).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxn = dout * gamma
    if train:
        dx = (dxn - dxn.mean(axis=axes) - xn * (dxn * xn).mean(axis=axes)) / std
    else:
        dx = dxn / std
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------

def relu_forward(x):
    if _NUMBA is not None:
        C = x.shape[-1]
        x2 = np.ascontiguousarray(x).reshape(-1, C)
        out = np.empty_like(x2)
        mask = np.empty(x2.shape, dtype=np.bool_)
        _relu_jit(x2, out, mask)
        return out.reshape(x.shape), mask.reshape(x.shape)
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(dout, mask):
    return dout * mask


# Max pooling over the frequency axis only (1x2, stride 1x2); an odd trailing
# frequency bin is dropped, matching 250 -> 125 -> 62.

def maxpool_freq_forward(x):
    B, T, F, C = x.shape
    P = F // 2
    if _NUMBA is not None:
        x = np.ascontiguousarray(x)
        out = np.empty((B, T, P, C), dtype=x.dtype)
        right_wins = np.empty((B, T, P, C), dtype=np.bool_)
        _pool_fwd_jit(x, out, right_wins)
        return out, (right_wins, x.shape)
    left = x[:, :, 0 : 2 * P : 2, :]
    right = x[:, :, 1 : 2 * P : 2, :]
    right_wins = right > left  # ties go to the earlier bin
    out = np.where(right_wins, right, left)
    return out, (right_wins, x.shape)


def maxpool_freq_backward(dout, cache):
    right_wins, shape = cache
    B, T, F, C = shape
    P = F // 2
    dx = np.zeros(shape, dtype=dout.dtype)
    if _NUMBA is not None:
        _pool_bwd_jit(np.ascontiguousarray(dout), right_wins, dx)
        return dx
    dx[:, :, 0 : 2 * P : 2, :] = np.where(right_wins, 0.0, dout)
    dx[:, :, 1 : 2 * P : 2, :] = np.where(right_wins, dout, 0.0)
    return dx


# ---------------------------------------------------------------------------

def dropout_forward(x, keep_prob: float, rng: np.random.Generator | None, train: bool):
    if not train or keep_prob >= 1.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    mask = (rng.random(x.shape, dtype=draw_dtype) < keep_prob).astype(x.dtype)
    mask /= np.asarray(keep_prob, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------

def dense_forward(x, w, b):
    shape = x.shape
    x2 = x.reshape(-1, shape[-1])
    out = x2 @ w + b
    return out.reshape(*shape[:-1], w.shape[1]), (x2, w, shape)


def dense_backward(dout, cache):
    x2, w, shape = cache
    d2 = dout.reshape(-1, w.shape[1])
    dw = x2.T @ d2
    db = d2.sum(axis=0)
    dx = (d2 @ w.T).reshape(shape)
    return dx, dw, db


# ---------------------------------------------------------------------------
# LSTM over full sequences (no truncation); gate order i, f, g, o.

def lstm_forward(x, wx, wh, b, reverse: bool = False):
    B, T, D = x.shape
    H = wh.shape[0]
    dtype = x.dtype
    order = range(T - 1, -1, -1) if reverse else range(T)
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    hs = np.zeros((B, T, H), dtype=dtype)
    gates = np.zeros((T, B, 4 * H), dtype=dtype)
    h_prev = np.zeros((T, B, H), dtype=dtype)
    c_prev = np.zeros((T, B, H), dtype=dtype)
    hc_all = np.zeros((T, B, H), dtype=dtype)
    for t in order:
        h_prev[t] = h
        c_prev[t] = c
        z = x[:, t] @ wx + h @ wh + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        hc = np.tanh(c)
        h = o * hc
        gates[t, :, :H] = i
        gates[t, :, H : 2 * H] = f
        gates[t, :, 2 * H : 3 * H] = g
        gates[t, :, 3 * H :] = o
        hc_all[t] = hc
        hs[:, t] = h
    cache = (x, wx, wh, gates, h_prev, c_prev, hc_all, reverse)
    return hs, cache


def lstm_backward(dhs, cache):
    x, wx, wh, gates, h_prev, c_prev, hc_all, reverse = cache
    B, T, D = x.shape
    H = wh.shape[0]
    dtype = x.dtype
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * H, dtype=dtype)
    dx = np.zeros_like(x)
    dh_next = np.zeros((B, H), dtype=dtype)
    dc_next = np.zeros((B, H), dtype=dtype)
    order = range(T) if reverse else range(T - 1, -1, -1)
    for t in order:
        i = gates[t, :, :H]
        f = gates[t, :, H : 2 * H]
        g = gates[t, :, 2 * H : 3 * H]
        o = gates[t, :, 3 * H :]
        hc = hc_all[t]
        dh = dhs[:, t] + dh_next
        do = dh * hc
        dc = dc_next + dh * o * (1.0 - hc * hc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev[t]
        dc_next = dc * f
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dwx += x[:, t].T @ dz
        dwh += h_prev[t].T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ wx.T
        dh_next = dz @ wh.T
    return dx, dwx, dwh, db


def bilstm_forward(x, params: dict, prefix: str):
    fw, fw_cache = lstm_forward(x, params[f"{prefix}/fw/wx"], params[f"{prefix}/fw/wh"], params[f"{prefix}/fw/b"])
    bw, bw_cache = lstm_forward(
        x, params[f"{prefix}/bw/wx"], params[f"{prefix}/bw/wh"], params[f"{prefix}/bw/b"], reverse=True
    )
    return np.concatenate([fw, bw], axis=2), (fw_cache, bw_cache)


def bilstm_backward(dout, cache):
    fw_cache, bw_cache = cache
    H = dout.shape[2] // 2
    dx_fw, dwx_fw, dwh_fw, db_fw = lstm_backward(np.ascontiguousarray(dout[:, :, :H]), fw_cache)
    dx_bw, dwx_bw, dwh_bw, db_bw = lstm_backward(np.ascontiguousarray(dout[:, :, H:]), bw_cache)
    grads = {
        "fw/wx": dwx_fw, "fw/wh": dwh_fw, "fw/b": db_fw,
        "bw/wx": dwx_bw, "bw/wh": dwh_bw, "bw/b": db_bw,
    }
    return dx_fw + dx_bw, grads
