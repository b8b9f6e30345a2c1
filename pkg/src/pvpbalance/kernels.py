"""Compiled training epochs for the rating, regressor and counter models.

Each ``*_epoch`` function runs every minibatch of one already shuffled and
swap-augmented epoch, including the Adam updates, in a single numba call.
They compute the same gradients as the numpy step functions in
:mod:`pvpbalance.rating` and :mod:`pvpbalance.counter`, which remain the
reference route (``TrainConfig(backend="numpy")``) and the oracle in tests.

Networks are passed as a flat parameter vector plus a layer table with one
row ``(n_in, n_out, weight_offset, bias_offset, activation_code)`` per layer.
Float constants go through :func:`_typed` so float32 work is not widened.
"""

from __future__ import annotations

import numpy as np
from numba import njit, objmode

from .nn import EXP_CLAMP, adam_kernel

TANH, EXP, IDENTITY = 0, 1, 2
ACTIVATION_CODES = {"tanh": TANH, "exp": EXP, "identity": IDENTITY}

OK, NON_FINITE = 0, 1


def layer_table(net) -> np.ndarray:
    """``(n_in, n_out, weight_offset, bias_offset, activation_code)`` per layer of a DenseNet."""
    rows, offset = [], 0
    for (i, o), act in zip(zip(net.sizes[:-1], net.sizes[1:]), net.activations):
        rows.append((i, o, offset, offset + i * o, ACTIVATION_CODES[act]))
        offset += i * o + o
    return np.array(rows, dtype=np.int64)


def adam_args(state) -> tuple:
    """Moment arrays and a one-element step counter for an :class:`AdamState`."""
    return state.m, state.v, np.array([state.step], dtype=np.int64)


def hyper(state) -> np.ndarray:
    return np.array([state.beta1, state.beta2, state.eps])


@njit(cache=True)
def _typed(ref, value):
    s = np.empty(1, ref.dtype)
    s[0] = value
    return s[0]


@njit(cache=True)
def _tanh_inplace(x):
    # numba's own tanh is a scalar libm loop; numpy's is vectorised
    with objmode():
        np.tanh(x, out=x)


@njit(cache=True)
def _forward(params, layers, x):
    hs = [x]
    zs = [x]
    h = x
    for l in range(layers.shape[0]):
        n_in, n_out, wo, bo, act = layers[l]
        w = params[wo:wo + n_in * n_out].reshape((n_in, n_out))
        z = h @ w + params[bo:bo + n_out]
        if act == TANH:
            h = z.copy()
            _tanh_inplace(h)
        elif act == EXP:
            c = _typed(z, EXP_CLAMP)
            h = np.exp(np.minimum(np.maximum(z, -c), c))
        else:
            h = z.copy()
        hs.append(h)
        zs.append(z)
    return hs, zs


@njit(cache=True)
def _backward(params, grads, layers, hs, zs, g, accumulate):
    for l in range(layers.shape[0] - 1, -1, -1):
        n_in, n_out, wo, bo, act = layers[l]
        out = hs[l + 1]
        if act == TANH:
            g = g * (1 - out * out)
        elif act == EXP:
            g = g * out * (np.abs(zs[l + 1]) <= _typed(g, EXP_CLAMP)).astype(g.dtype)
        if accumulate:
            gw = grads[wo:wo + n_in * n_out].reshape((n_in, n_out))
            gw += np.ascontiguousarray(hs[l].T) @ g
            grads[bo:bo + n_out] += g.sum(axis=0)
        w = params[wo:wo + n_in * n_out].reshape((n_in, n_out))
        g = g @ w.T
    return g


@njit(cache=True)
def _adam(p, g, m, v, t, hyper, lr):
    """Adam on flat arrays; ``t`` is a one-element step counter, left unchanged on failure."""
    step = t[0] + 1
    coeffs = np.empty(7, p.dtype)
    b1, b2 = hyper[0], hyper[1]
    coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4] = b1, 1 - b1, b2, 1 - b2, hyper[2]
    coeffs[5] = lr / (1 - b1**step)
    coeffs[6] = 1 / (1 - b2**step)
    if not adam_kernel(p, g, m, v, coeffs):
        return NON_FINITE
    t[0] = step
    return OK


@njit(cache=True)
def _compact(values):
    """Sorted distinct values and each entry's position among them."""
    order = np.argsort(values, kind="mergesort")
    inv = np.empty(values.size, np.int64)
    uniq = np.empty(values.size, values.dtype)
    count = 0
    for j in range(values.size):
        val = values[order[j]]
        if count == 0 or uniq[count - 1] != val:
            uniq[count] = val
            count += 1
        inv[order[j]] = count - 1
    return uniq[:count], inv


@njit(cache=True)
def _rate(lr0, epoch, i, n_batches, epochs):
    return max(0.0, lr0 * (1.0 - (epoch + i / n_batches) / epochs))


@njit(cache=True)
def _bt_win(r1, r2):
    margin = (r1 - r2) / (2.0 * (r1 + r2))
    if margin >= 0:
        return 0.5 + margin
    return 1.0 - (0.5 - margin)


@njit(cache=True)
def siamese_epoch(params, grads, m, v, t, hyper, layers, comps, a, b, w, batch_size, lr0, epoch, epochs):
    n_total = a.size
    n_batches = (n_total + batch_size - 1) // batch_size
    for i in range(n_batches):
        lo, hi = i * batch_size, min(n_total, (i + 1) * batch_size)
        n = hi - lo
        u, inv = _compact(np.concatenate((a[lo:hi], b[lo:hi])))
        hs, zs = _forward(params, layers, comps[u])
        r_u = hs[-1][:, 0].astype(np.float64)
        g_u = np.zeros(u.size)
        for j in range(n):
            ra, rb = r_u[inv[j]], r_u[inv[n + j]]
            s = ra + rb
            dp = 2.0 * (ra / s - w[lo + j]) / n
            g_u[inv[j]] += dp * rb / (s * s)
            g_u[inv[n + j]] -= dp * ra / (s * s)
        _backward(params, grads, layers, hs, zs, g_u.astype(params.dtype).reshape((-1, 1)), True)
        if _adam(params, grads, m, v, t, hyper, _rate(lr0, epoch, i, n_batches, epochs)) != OK:
            return NON_FINITE
    return OK


@njit(cache=True)
def regress_epoch(params, grads, m, v, t, hyper, layers, comps, a, b, w, pairs, batch_size, lr0, epoch, epochs):
    """WinValue (``pairs=False``, input ``a``) or PairWin (``pairs=True``, input ``[a, b]``)."""
    n_total = a.size
    n_comps = comps.shape[0]
    dim = comps.shape[1]
    n_batches = (n_total + batch_size - 1) // batch_size
    for i in range(n_batches):
        lo, hi = i * batch_size, min(n_total, (i + 1) * batch_size)
        n = hi - lo
        if pairs:
            keys, inv = _compact(a[lo:hi] * n_comps + b[lo:hi])
            x = np.empty((keys.size, 2 * dim), comps.dtype)
            for j in range(keys.size):
                x[j, :dim] = comps[keys[j] // n_comps]
                x[j, dim:] = comps[keys[j] % n_comps]
        else:
            keys, inv = _compact(a[lo:hi].copy())
            x = comps[keys]
        hs, zs = _forward(params, layers, x)
        y = hs[-1][:, 0].astype(np.float64)
        g_u = np.zeros(keys.size)
        for j in range(n):
            g_u[inv[j]] += (0.5 * (1.0 + y[inv[j]]) - w[lo + j]) / n
        _backward(params, grads, layers, hs, zs, g_u.astype(params.dtype).reshape((-1, 1)), True)
        if _adam(params, grads, m, v, t, hyper, _rate(lr0, epoch, i, n_batches, epochs)) != OK:
            return NON_FINITE
    return OK


@njit(cache=True)
def _quantize(codebook, z):
    k = np.empty(z.shape[0], np.int64)
    for j in range(z.shape[0]):
        best = np.inf
        for c in range(codebook.shape[0]):
            dist = 0.0
            for q in range(z.shape[1]):
                diff = z[j, q] - codebook[c, q]
                dist += diff * diff
            if dist < best:
                best = dist
                k[j] = c
    return k


@njit(cache=True)
def counter_epoch(
    enc_p, enc_g, enc_m, enc_v, enc_t, enc_layers,
    dec_p, dec_g, dec_m, dec_v, dec_t, dec_layers,
    cb, cb_g, cb_m, cb_v, cb_t,
    hyper, comps, strengths, a, b, w, beta_n, beta_m, batch_size, lr0, epoch, epochs,
):
    n_total = a.size
    size, d = cb.shape
    n_batches = (n_total + batch_size - 1) // batch_size
    beta_n_t = _typed(cb, beta_n)
    half = _typed(cb, 0.5)
    for i in range(n_batches):
        lo, hi = i * batch_size, min(n_total, (i + 1) * batch_size)
        n = hi - lo
        u, inv = _compact(np.concatenate((a[lo:hi], b[lo:hi])))
        n_u = u.size
        enc_hs, enc_zs = _forward(enc_p, enc_layers, comps[u])
        z_e = enc_hs[-1]
        k = _quantize(cb, z_e)

        pair_ids, pinv = _compact(k[inv[:n]] * size + k[inv[n:]])
        n_pairs = pair_ids.size
        x_in = np.empty((2 * n_pairs, 2 * d), cb.dtype)
        for p in range(n_pairs):
            ka, kb = pair_ids[p] // size, pair_ids[p] % size
            x_in[p, :d] = cb[ka]
            x_in[p, d:] = cb[kb]
            x_in[n_pairs + p, :d] = cb[kb]
            x_in[n_pairs + p, d:] = cb[ka]
        dec_hs, dec_zs = _forward(dec_p, dec_layers, x_in)
        x = dec_hs[-1][:, 0].astype(np.float64)

        err = np.empty(n)
        dx1 = np.zeros(n_pairs)
        for j in range(n):
            p = pinv[j]
            target = w[lo + j] - _bt_win(strengths[a[lo + j]], strengths[b[lo + j]])
            err[j] = (x[p] - x[n_pairs + p]) / 2.0 - target
            dx1[p] += err[j] / n
        g_dec = np.empty((2 * n_pairs, 1), cb.dtype)
        for p in range(n_pairs):
            g_dec[p, 0] = dx1[p]
            g_dec[n_pairs + p, 0] = -dx1[p]
        _backward(dec_p, dec_g, dec_layers, dec_hs, dec_zs, g_dec, True)

        jac = _backward(dec_p, dec_g, dec_layers, dec_hs, dec_zs, np.ones((2 * n_pairs, 1), cb.dtype), False)
        g_zq = np.zeros((n_u, d), cb.dtype)
        for j in range(n):
            p = pinv[j]
            dpred = _typed(cb, 2.0 * err[j] / n)
            ia, ib = inv[j], inv[n + j]
            for q in range(d):
                g_zq[ia, q] += dpred * half * (jac[p, q] - jac[n_pairs + p, d + q])
                g_zq[ib, q] += dpred * half * (jac[p, d + q] - jac[n_pairs + p, q])

        counts = np.zeros(n_u, cb.dtype)
        for j in range(2 * n):
            counts[inv[j]] += 1
        scale = _typed(cb, 1.0 / (n * d))
        g_enc = np.empty((n_u, d), cb.dtype)
        e_mean = np.zeros(d, cb.dtype)
        for c in range(size):
            e_mean += cb[c]
        e_mean /= size
        g_mean = np.zeros(d, cb.dtype)
        for j in range(n_u):
            for q in range(d):
                pull = counts[j] * (z_e[j, q] - cb[k[j], q]) * scale
                g_enc[j, q] = g_zq[j, q] + beta_n_t * pull
                cb_g[k[j], q] -= pull
                g_mean[q] -= counts[j] * (z_e[j, q] - e_mean[q]) * scale
        if beta_m != 0.0:
            cb_g += _typed(cb, beta_m / size) * g_mean
        _backward(enc_p, enc_g, enc_layers, enc_hs, enc_zs, g_enc, True)

        lr = _rate(lr0, epoch, i, n_batches, epochs)
        if _adam(enc_p, enc_g, enc_m, enc_v, enc_t, hyper, lr) != OK:
            return NON_FINITE
        if _adam(dec_p, dec_g, dec_m, dec_v, dec_t, hyper, lr) != OK:
            return NON_FINITE
        if _adam(cb.reshape(-1), cb_g.reshape(-1), cb_m.reshape(-1), cb_v.reshape(-1), cb_t, hyper, lr) != OK:
            return NON_FINITE
    return OK
