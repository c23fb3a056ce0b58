"""Naive reference implementations used as independent test oracles.

Everything here is written with explicit Python loops over plain float64
numpy arrays and never imports the package under test.
"""

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    B, Cin, H, W = x.shape
    Cout, Cg, kh, kw = w.shape
    Og = Cout // groups
    xp = np.zeros((B, Cin, H + 2 * padding, W + 2 * padding))
    xp[:, :, padding:padding + H, padding:padding + W] = x
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo))
    for n in range(B):
        for o in range(Cout):
            grp = o // Og
            for r in range(Ho):
                for s in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(Cg):
                        ci = grp * Cg + c
                        for i in range(kh):
                            for j in range(kw):
                                acc += w[o, c, i, j] * xp[n, ci, r * stride + i, s * stride + j]
                    out[n, o, r, s] = acc
    return out


def naive_linear(x, w, b):
    lead = x.shape[:-1]
    xf = x.reshape(-1, x.shape[-1])
    out = np.zeros((xf.shape[0], w.shape[0]))
    for n in range(xf.shape[0]):
        for o in range(w.shape[0]):
            acc = float(b[o])
            for i in range(w.shape[1]):
                acc += w[o, i] * xf[n, i]
            out[n, o] = acc
    return out.reshape(*lead, w.shape[0])


def naive_pools(x):
    """Return (gap, gmp, channel_avg, channel_max) of a [B, C, H, W] array."""
    B, C, H, W = x.shape
    gap = np.zeros((B, C))
    gmp = np.zeros((B, C))
    cav = np.zeros((B, 1, H, W))
    cmx = np.zeros((B, 1, H, W))
    for n in range(B):
        for c in range(C):
            total, best = 0.0, -math.inf
            for i in range(H):
                for j in range(W):
                    total += x[n, c, i, j]
                    best = max(best, x[n, c, i, j])
            gap[n, c] = total / (H * W)
            gmp[n, c] = best
        for i in range(H):
            for j in range(W):
                total, best = 0.0, -math.inf
                for c in range(C):
                    total += x[n, c, i, j]
                    best = max(best, x[n, c, i, j])
                cav[n, 0, i, j] = total / C
                cmx[n, 0, i, j] = best
    return gap, gmp, cav, cmx


def naive_seq_mean(x):
    B, L, d = x.shape
    out = np.zeros((B, d))
    for n in range(B):
        for k in range(d):
            out[n, k] = sum(x[n, i, k] for i in range(L)) / L
    return out


def _gelu_scalar(v):
    return v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))


def naive_linear_attention(X, w_qkv, b_qkv, w_out, b_out):
    """Token-by-token transcription of the separable linear attention.

    Projection to ``1 + 2d`` channels, softmax of the single query column
    over tokens, context = score-weighted sum of keys, GELU on values times
    the context, then the output projection.
    """
    B, L, d = X.shape
    out = np.zeros((B, L, d))
    for n in range(B):
        proj = np.zeros((L, 1 + 2 * d))
        for t in range(L):
            for o in range(1 + 2 * d):
                proj[t, o] = b_qkv[o] + sum(w_qkv[o, i] * X[n, t, i] for i in range(d))
        q = proj[:, 0]
        k = proj[:, 1:1 + d]
        v = proj[:, 1 + d:]
        m = max(q)
        e = [math.exp(qi - m) for qi in q]
        z = sum(e)
        alpha = [ei / z for ei in e]
        ctx = [sum(alpha[t] * k[t, j] for t in range(L)) for j in range(d)]
        for t in range(L):
            hidden = [_gelu_scalar(v[t, j]) * ctx[j] for j in range(d)]
            for o in range(d):
                out[n, t, o] = b_out[o] + sum(w_out[o, j] * hidden[j] for j in range(d))
    return out


def central_difference(f, x, index, h):
    """Central finite difference of scalar ``f()`` w.r.t. ``x[index]`` (mutates in place, restores)."""
    orig = x[index]
    x[index] = orig + h
    fp = f()
    x[index] = orig - h
    fm = f()
    x[index] = orig
    return (fp - fm) / (2.0 * h)


def brute_force_auc(scores, positive):
    """Pairwise AUC: wins plus half-ties over every (positive, negative) pair."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))
