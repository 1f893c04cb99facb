"""Slow scalar-loop reference of the scoring path.

Written directly from the formulas with plain Python loops and no autodiff,
so it can serve as an independent oracle for the vectorized implementation.
All inputs are numpy arrays; all indices below are 0-based.
"""

from __future__ import annotations

import math

import numpy as np


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def lstm_final_state(xs: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray) -> list[float]:
    e, four_p = wx.shape
    p = four_p // 4
    h = [0.0] * p
    c = [0.0] * p
    for x in xs:
        a = []
        for r in range(four_p):
            acc = b[r]
            for i in range(e):
                acc += x[i] * wx[i, r]
            for i in range(p):
                acc += h[i] * wh[i, r]
            a.append(acc)
        new_h, new_c = [], []
        for j in range(p):
            ig = _sigmoid(a[j])
            fg = _sigmoid(a[p + j])
            gg = math.tanh(a[2 * p + j])
            og = _sigmoid(a[3 * p + j])
            cj = fg * c[j] + ig * gg
            new_c.append(cj)
            new_h.append(og * math.tanh(cj))
        h, c = new_h, new_c
    return h


def sentence_rep(tokens, params: dict[str, np.ndarray], bos: int = 2, eos: int = 3) -> np.ndarray:
    seq = [bos, *tokens, eos]
    emb = params["encoder.embedding"]
    fwd = lstm_final_state(
        np.array([emb[t] for t in seq]),
        params["encoder.fwd.wx"], params["encoder.fwd.wh"], params["encoder.fwd.b"],
    )
    bwd = lstm_final_state(
        np.array([emb[t] for t in reversed(seq)]),
        params["encoder.bwd.wx"], params["encoder.bwd.wh"], params["encoder.bwd.b"],
    )
    return np.array(fwd + bwd)


def bilinear(h1, h2, w: np.ndarray, b: np.ndarray) -> list[float]:
    q, d1, d2 = w.shape
    out = []
    for r in range(q):
        acc = b[r]
        for i in range(d1):
            for j in range(d2):
                acc += h1[i] * w[r, i, j] * h2[j]
        out.append(acc)
    return out


def lightweight_conv(h: np.ndarray, wraw: np.ndarray) -> np.ndarray:
    n, d = h.shape
    G, k = wraw.shape
    kernels = []
    for g in range(G):
        m = max(wraw[g])
        ex = [math.exp(wraw[g, j] - m) for j in range(k)]
        s = sum(ex)
        kernels.append([v / s for v in ex])
    center = math.ceil((k + 1) / 2)  # 1-based tap aligned with row i
    out = np.zeros((n, d))
    for i in range(n):
        for c in range(d):
            g = math.ceil((c + 1) * G / d) - 1
            acc = 0.0
            for j in range(1, k + 1):
                row = i + j - center
                if 0 <= row < n:
                    acc += kernels[g][j - 1] * h[row, c]
            out[i, c] = acc
    return out


def global_features(h: np.ndarray, conv_weights: list[np.ndarray]) -> np.ndarray:
    x = np.array(h, dtype=float)
    n, d = x.shape
    for wraw in conv_weights:
        conv = lightweight_conv(x, wraw)
        nxt = np.zeros((n, d))
        for i in range(n):
            for c in range(d):
                nxt[i, c] = math.tanh(conv[i, c]) + x[i, c]
        x = nxt
    u = np.zeros(d)
    for c in range(d):
        u[c] = sum(x[i, c] for i in range(n)) / n
    return u


def window_scores(h: np.ndarray, params: dict[str, np.ndarray], use_global: bool = True) -> np.ndarray:
    n, d = h.shape
    rows = [list(h[i]) for i in range(n)] + [[0.0] * d, [0.0] * d]
    v = [bilinear(rows[i], rows[i + 1], params["bilinear.w"], params["bilinear.b"]) for i in range(n + 1)]
    if use_global:
        layers = sorted((k for k in params if k.startswith("gconv.")), key=lambda s: int(s.split(".")[1]))
        u = list(global_features(h, [params[k] for k in layers]))
    else:
        u = [0.0] * d
    w_l = params["score.w"]
    b_l = float(params["score.b"])
    y = np.zeros(n)
    for i in range(n):
        z = v[i] + v[i + 1] + u
        y[i] = sum(z[j] * w_l[j] for j in range(len(z))) + b_l
    return y


def doc_window_scores(doc_ids, params: dict[str, np.ndarray], use_global: bool = True) -> np.ndarray:
    h = np.array([sentence_rep(s, params) for s in doc_ids])
    return window_scores(h, params, use_global)
