"""Independent scalar reference implementations used by the tests.

Each oracle is written with plain Python loops over the defining formula so it
shares no code with the vectorized implementation it checks.
"""

from __future__ import annotations

import math

import numpy as np


def quat_matrix(w, x, y, z):
    n = math.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return [[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]]


def split_children(mu, q, s, beta, shrink):
    """The six children of one primitive: (center, scale) per signed axis +x,-x,+y,-y,+z,-z."""
    R = quat_matrix(*q)
    out = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            c = [mu[i] + beta * sign * R[i][axis] * s[axis] for i in range(3)]
            sc = list(s)
            sc[axis] = s[axis] * shrink
            out.append((c, sc))
    return out


def project(K, R, t, mu):
    xc = [sum(R[i][j] * mu[j] for j in range(3)) + t[i] for i in range(3)]
    p = [sum(K[i][j] * xc[j] for j in range(3)) for i in range(3)]
    return p[0] / p[2], p[1] / p[2], p[2]


def softmax_row(logits):
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def attention(Q, K, V):
    """softmax(Q K^T / sqrt(d)) V with lists of rows."""
    d = len(Q[0])
    out = []
    for q in Q:
        w = softmax_row([sum(a * b for a, b in zip(q, k)) / math.sqrt(d) for k in K])
        out.append([sum(w[j] * V[j][c] for j in range(len(V))) for c in range(len(V[0]))])
    return out


def matvec_rows(X, W):
    """Rows of X times W (lists)."""
    return [[sum(x[i] * W[i][j] for i in range(len(x))) for j in range(len(W[0]))] for x in X]


def refine(t_en, t_pre, Wq_o, Wk_o, Wv_o, Wq_p, Wk_p, Wv_p, W_fc, b_fc, heads):
    """Two-way multi-head cross-attention fused by one FC with a residual."""
    q_o, k_o, v_o = matvec_rows(t_en, Wq_o), matvec_rows(t_en, Wk_o), matvec_rows(t_en, Wv_o)
    q_p, k_p, v_p = matvec_rows(t_pre, Wq_p), matvec_rows(t_pre, Wk_p), matvec_rows(t_pre, Wv_p)
    c = len(q_o[0])
    d = c // heads
    n = len(t_en)
    u_op = [[0.0] * c for _ in range(n)]
    u_po = [[0.0] * c for _ in range(n)]
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        a = attention([r[sl] for r in q_o], [r[sl] for r in k_p], [r[sl] for r in v_p])
        b = attention([r[sl] for r in q_p], [r[sl] for r in k_o], [r[sl] for r in v_o])
        for i in range(n):
            u_op[i][sl] = a[i]
            u_po[i][sl] = b[i]
    fused = matvec_rows([u_op[i] + u_po[i] for i in range(n)], W_fc)
    return [[fused[i][j] + b_fc[j] + t_en[i][j] for j in range(c)] for i in range(n)]


def composite(colors, alphas, background):
    """Front-to-back alpha compositing of a sorted list of per-pixel contributions."""
    T = 1.0
    out = [0.0, 0.0, 0.0]
    for col, a in zip(colors, alphas):
        for ch in range(3):
            out[ch] += T * a * col[ch]
        T *= 1 - a
    return [out[ch] + T * background[ch] for ch in range(3)], T


def catmull_rom(x, a=-0.5):
    x = abs(x)
    if x < 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def adam(grads, lr, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def random_unit_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)
