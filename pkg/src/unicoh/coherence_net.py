"""Local (bilinear), global (lightweight convolution) and scoring layers.

For sentence representations ``H = (h_1..h_n)`` of width ``d = 2p``:

* ``v_i = h_i^T W_b h_{i+1} + b`` for i = 1..n+1, with two zero rows appended
  after ``h_n`` so that every sentence anchors exactly one window;
* ``u`` is the column mean of ``H`` after six residual layers
  ``x <- tanh(lconv(x)) + x``;
* window ``i`` is scored as ``[v_i; v_{i+1}; u] . w_l + b_l``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

N_CONV_LAYERS = 6


def group_index(d: int, groups: int) -> np.ndarray:
    """0-based group of every channel: ceil(c * G / d) - 1 for 1-based c."""
    if groups < 1 or d % groups:
        raise ValueError(f"channel count {d} is not divisible by {groups} groups")
    c = np.arange(1, d + 1)
    return (-(-c * groups // d) - 1).astype(np.intp)


def init_net_params(
    rng: np.random.Generator, p: int, q: int, k: int, groups: int, use_global: bool = True
) -> dict[str, Tensor]:
    d = 2 * p
    if q < 1:
        raise ValueError("bilinear output size q must be >= 1")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    group_index(d, groups)
    bound = 1.0 / np.sqrt(d)
    params = {
        "bilinear.w": Tensor(rng.uniform(-bound, bound, (q, d, d)), True),
        "bilinear.b": Tensor(rng.uniform(-bound, bound, q), True),
    }
    if use_global:
        for layer in range(N_CONV_LAYERS):
            params[f"gconv.{layer}.w"] = Tensor(rng.uniform(-0.1, 0.1, (groups, k)), True)
    zbound = 1.0 / np.sqrt(2 * q + d)
    params["score.w"] = Tensor(rng.uniform(-zbound, zbound, 2 * q + d), True)
    params["score.b"] = Tensor(np.zeros(()), True)
    for name, t in params.items():
        t.name = name
    return params


def conv_layer_names(params: dict[str, Tensor]) -> list[str]:
    return sorted((n for n in params if n.startswith("gconv.")), key=lambda n: int(n.split(".")[1]))


def normalize_kernel(wraw: Tensor) -> Tensor:
    return T.softmax(wraw, axis=1)


def bilinear_pair(h_i: Tensor, h_next: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if h_i.shape[-1] != w.shape[1] or h_next.shape[-1] != w.shape[2]:
        raise T.ShapeError(
            f"bilinear_pair: vectors {h_i.shape}, {h_next.shape} do not match tensor {w.shape}"
        )
    return T.bilinear(h_i, w, h_next, b)


def depthwise_conv(h: Tensor, w: Tensor) -> Tensor:
    return T.depthwise_conv1d(h, w)


def lightweight_conv(h: Tensor, wraw: Tensor) -> Tensor:
    """Depthwise convolution whose per-group kernels are softmax-normalized."""
    d = h.shape[-1]
    kernel = normalize_kernel(wraw)
    return T.depthwise_conv1d(h, T.take(kernel, group_index(d, wraw.shape[0])))


def global_features(h: Tensor, conv_weights: list[Tensor]) -> Tensor:
    """(..., n, d) -> (..., d): residual lightweight convolutions, then mean over n."""
    x = h
    for wraw in conv_weights:
        x = T.tanh(lightweight_conv(x, wraw)) + x
    return x.mean(axis=-2)


def score_windows(params: dict[str, Tensor], h: Tensor, use_global: bool = True) -> Tensor:
    """Window scores for a batch of equal-length documents, (B, n, 2p) -> (B, n)."""
    B, n, d = h.shape
    hp = T.pad(h, axis=1, after=2)
    v = bilinear_pair(hp[:, : n + 1], hp[:, 1 : n + 2], params["bilinear.w"], params["bilinear.b"])
    if use_global:
        u = global_features(h, [params[name] for name in conv_layer_names(params)])
        u = u.reshape(B, 1, d) * Tensor(np.ones((1, n, 1)))
    else:
        u = Tensor(np.zeros((B, n, d)))
    z = T.concat([v[:, :n], v[:, 1 : n + 1], u], axis=2)
    return z @ params["score.w"] + params["score.b"]


def window_scores(params: dict[str, Tensor], h: Tensor, use_global: bool = True) -> Tensor:
    """Window scores y (n,) for one document's sentence representations (n, 2p)."""
    n, d = h.shape
    return score_windows(params, h.reshape(1, n, d), use_global).reshape(n)


def doc_score(y) -> float:
    return float(np.sum(y.data if isinstance(y, Tensor) else y))


def kernel_sums(params: dict[str, Tensor]) -> np.ndarray:
    """(layers, G) row sums of every normalized kernel."""
    names = conv_layer_names(params)
    if not names:
        return np.zeros((0, 0))
    with T.no_grad():
        return np.stack([normalize_kernel(params[n]).data.sum(axis=1) for n in names])


def conv_param_count(params: dict[str, Tensor]) -> int:
    return sum(params[n].size for n in conv_layer_names(params))


def conv_param_budget(d: int, k: int, groups: int) -> dict[str, int]:
    """Per-layer weight counts: lightweight G*k, depthwise d*k, full d*d*k."""
    return {"lightweight": groups * k, "depthwise": d * k, "full": d * d * k}
