"""Compiled inner loops (numba).

Every batch kernel takes ``v`` of shape (B, n) holding V(k+1..k+n) for
each batch member and energies ``E`` of shape (B,).  Products are kept as a
normalised matrix plus a log scale, renormalised every ``RENORM`` steps.
"""
import numpy as np
from numba import njit

RENORM = 32


@njit(cache=True, nogil=True)
def transfer_batch(v, E):
    B, n = v.shape
    out = np.empty((B, 2, 2))
    logs = np.zeros(B)
    for b in range(B):
        a, bb, c, d = 1.0, 0.0, 0.0, 1.0
        ls = 0.0
        e = E[b]
        for k in range(n):
            t = e - v[b, k]
            # [[t, -1], [1, 0]] @ [[a, bb], [c, d]]
            a, bb, c, d = t * a - c, t * bb - d, a, bb
            if (k + 1) % RENORM == 0:
                s = np.sqrt(a * a + bb * bb + c * c + d * d)
                a /= s
                bb /= s
                c /= s
                d /= s
                ls += np.log(s)
        s = np.sqrt(a * a + bb * bb + c * c + d * d)
        if s > 0.0:
            out[b, 0, 0] = a / s
            out[b, 0, 1] = bb / s
            out[b, 1, 0] = c / s
            out[b, 1, 1] = d / s
            logs[b] = ls + np.log(s)
        else:
            out[b, 0, 0] = a
            out[b, 0, 1] = bb
            out[b, 1, 0] = c
            out[b, 1, 1] = d
            logs[b] = ls
    return out, logs


@njit(cache=True, nogil=True)
def max_rate_batch(v, E, n_lo):
    """Max over n in [n_lo, n] of log||A_n||_HS / n, with the attaining n."""
    B, n = v.shape
    best = np.full(B, -np.inf)
    arg = np.zeros(B, dtype=np.int64)
    for b in range(B):
        a, bb, c, d = 1.0, 0.0, 0.0, 1.0
        ls = 0.0
        e = E[b]
        for k in range(n):
            t = e - v[b, k]
            a, bb, c, d = t * a - c, t * bb - d, a, bb
            s = np.sqrt(a * a + bb * bb + c * c + d * d)
            if k + 1 >= n_lo:
                r = (ls + np.log(s)) / (k + 1)
                if r > best[b]:
                    best[b] = r
                    arg[b] = k + 1
            if (k + 1) % RENORM == 0:
                a /= s
                bb /= s
                c /= s
                d /= s
                ls += np.log(s)
    return best, arg


@njit(cache=True, nogil=True)
def norm_path(v, E):
    """log||A_j||_HS for j = 1..n for each batch member."""
    B, n = v.shape
    out = np.empty((B, n))
    for b in range(B):
        a, bb, c, d = 1.0, 0.0, 0.0, 1.0
        ls = 0.0
        e = E[b]
        for k in range(n):
            t = e - v[b, k]
            a, bb, c, d = t * a - c, t * bb - d, a, bb
            s = np.sqrt(a * a + bb * bb + c * c + d * d)
            out[b, k] = ls + np.log(s)
            if (k + 1) % RENORM == 0:
                a /= s
                bb /= s
                c /= s
                d /= s
                ls += np.log(s)
    return out


@njit(cache=True, nogil=True)
def backward_m(v, z):
    """Continued-fraction evaluation m_1 with m_k = 1/(V_k - z - m_{k+1}), m_{n+1} = 0."""
    m = 0j
    for i in range(v.shape[0] - 1, -1, -1):
        m = 1.0 / (v[i] - z - m)
    return m


@njit(cache=True, nogil=True)
def recurrence(v, E, u0, u1):
    """Solve u_{k+1} = (E - V(k)) u_k - u_{k-1} for k = 1..n.

    ``v[k-1] = V(k)``.  Returns scaled values w[0..n+1] and per-index log
    offsets so that u_k = w[k] * exp(off[k]).
    """
    n = v.shape[0]
    w = np.empty(n + 2)
    off = np.zeros(n + 2)
    w[0] = u0
    w[1] = u1
    cur = 0.0
    prev, x = u0, u1
    for k in range(1, n + 1):
        y = (E - v[k - 1]) * x - prev
        prev, x = x, y
        ay = abs(y) if abs(y) > abs(prev) else abs(prev)
        if ay > 1e100:
            prev /= ay
            x /= ay
            cur += np.log(ay)
            # the stored predecessor keeps its own offset
        w[k + 1] = x
        off[k + 1] = cur
    return w, off
