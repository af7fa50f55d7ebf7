"""
自動微分のプリミティブ演算（順伝播と勾配）

ブロードキャストは行ベクトルのバイアス加算のみ許可する。
"""

from typing import Optional, Sequence

import numpy as np

from autodiff.graph import Node
from config import ATTENTION_MASK_VALUE
from core.exceptions import ShapeError


def _require(condition: bool, op: str, *nodes_or_shapes):
    if not condition:
        shapes = [n.shape if isinstance(n, Node) else tuple(np.shape(n)) for n in nodes_or_shapes]
        raise ShapeError(f"{op}: incompatible shapes {shapes}", details={"op": op, "shapes": shapes})


def matmul(a: Node, b: Node) -> Node:
    _require(a.value.ndim == 2 and b.value.ndim == 2 and a.shape[1] == b.shape[0], "matmul", a, b)
    av, bv = a.value, b.value

    def backward_fn(g):
        return g @ bv.T, av.T @ g

    return a.tape.record("matmul", av @ bv, (a, b), backward_fn)


def add(a: Node, b: Node) -> Node:
    _require(a.shape == b.shape, "add", a, b)
    return a.tape.record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _require(a.shape == b.shape, "sub", a, b)
    return a.tape.record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def add_bias(x: Node, bias: Node) -> Node:
    """行ごとにバイアス（行ベクトル）を加算"""
    _require(x.value.ndim == 2 and bias.value.ndim == 1 and x.shape[1] == bias.shape[0], "add_bias", x, bias)
    return x.tape.record("add_bias", x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0)))


def mul(a: Node, b: Node) -> Node:
    _require(a.shape == b.shape, "mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, factor: float) -> Node:
    return a.tape.record("scale", a.value * factor, (a,), lambda g: (g * factor,))


def sigmoid(a: Node) -> Node:
    # exp のオーバーフローを避けるため符号で分岐
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return a.tape.record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape.record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Node) -> Node:
    active = a.value > 0
    return a.tape.record("relu", np.where(active, a.value, 0.0), (a,), lambda g: (g * active,))


def softmax(a: Node) -> Node:
    """行ごとのソフトマックス（最大値を引いて安定化）"""
    _require(a.value.ndim == 2, "softmax", a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return a.tape.record("softmax", out, (a,), backward_fn)


def log_softmax(a: Node) -> Node:
    _require(a.value.ndim == 2, "log_softmax", a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def backward_fn(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return a.tape.record("log_softmax", out, (a,), backward_fn)


def take_rows(a: Node, index: np.ndarray) -> Node:
    """行の取り出し（勾配は scatter-add で戻す）"""
    index = np.asarray(index, dtype=np.int64)
    _require(a.value.ndim == 2 and index.ndim == 1, "take_rows", a, index)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows",
                         details={"op": "take_rows", "shapes": [a.shape, index.shape]})
    n_rows = a.shape[0]

    def backward_fn(g):
        grad = np.zeros((n_rows, g.shape[1]))
        np.add.at(grad, index, g)
        return (grad,)

    return a.tape.record("take_rows", a.value[index], (a,), backward_fn)


def embedding(weight: Node, token_ids: np.ndarray) -> Node:
    """埋め込み表引き"""
    return take_rows(weight, token_ids)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    _require(a.value.ndim == 2 and 0 <= start < stop <= a.shape[1], "slice_cols", a)
    shape = a.shape

    def backward_fn(g):
        grad = np.zeros(shape)
        grad[:, start:stop] = g
        return (grad,)

    return a.tape.record("slice_cols", a.value[:, start:stop], (a,), backward_fn)


def slice_rows(a: Node, start: int, stop: int) -> Node:
    _require(a.value.ndim == 2 and 0 <= start < stop <= a.shape[0], "slice_rows", a)
    shape = a.shape

    def backward_fn(g):
        grad = np.zeros(shape)
        grad[start:stop] = g
        return (grad,)

    return a.tape.record("slice_rows", a.value[start:stop], (a,), backward_fn)


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    _require(len(nodes) > 0 and all(n.value.ndim == 2 for n in nodes), "concat", *nodes)
    other = 1 - axis
    _require(len({n.shape[other] for n in nodes}) == 1, "concat", *nodes)
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        if axis == 0:
            return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(nodes)))
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(nodes)))

    value = np.concatenate([n.value for n in nodes], axis=axis)
    return nodes[0].tape.record("concat", value, tuple(nodes), backward_fn)


def transpose(a: Node) -> Node:
    _require(a.value.ndim == 2, "transpose", a)
    return a.tape.record("transpose", a.value.T, (a,), lambda g: (g.T,))


def masked_fill(a: Node, mask: np.ndarray, fill_value: float = ATTENTION_MASK_VALUE) -> Node:
    """mask が True の位置を大きな負値で置き換える（ソフトマックス前の加法的マスク）"""
    mask = np.asarray(mask, dtype=bool)
    _require(mask.shape == a.shape, "masked_fill", a, mask)
    out = np.where(mask, fill_value, a.value)
    return a.tape.record("masked_fill", out, (a,), lambda g: (np.where(mask, 0.0, g),))


def layer_norm(x: Node, gain: Optional[Node] = None, bias: Optional[Node] = None, eps: float = 1e-5) -> Node:
    """
    行ごとのレイヤー正規化

    Args:
        x: 入力 [N × D]
        gain: アフィン変換の係数 [D]（省略可）
        bias: アフィン変換のバイアス [D]（省略可）
        eps: 分散に加える安定化項
    """
    _require(x.value.ndim == 2, "layer_norm", x)
    d = x.shape[1]
    mu = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std

    def norm_backward(g):
        return (inv_std * (g - g.mean(axis=1, keepdims=True)
                           - xhat * (g * xhat).sum(axis=1, keepdims=True) / d),)

    out = x.tape.record("layer_norm", xhat, (x,), norm_backward)
    if gain is not None:
        _require(gain.shape == (d,), "layer_norm", x, gain)
        g_value = gain.value
        out = x.tape.record("layer_norm_gain", out.value * g_value, (out, gain),
                            lambda g, xh=xhat: (g * g_value, (g * xh).sum(axis=0)))
    if bias is not None:
        out = add_bias(out, bias)
    return out


def cross_entropy(log_probs: Node, targets: np.ndarray, mask: Optional[np.ndarray] = None) -> Node:
    """
    対数確率に対する平均交差エントロピー（パディング位置はマスク）

    Args:
        log_probs: 対数確率 [N × V]
        targets: 正解ID [N]
        mask: 損失に含める位置 [N]（省略時は全位置）

    Returns:
        スカラー損失ノード
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, v = log_probs.shape
    _require(targets.shape == (n,), "cross_entropy", log_probs, targets)
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    _require(mask.shape == (n,), "cross_entropy", log_probs, mask)
    count = int(mask.sum())
    if count == 0:
        raise ShapeError("cross_entropy: mask selects no positions", details={"op": "cross_entropy"})
    safe_targets = np.where(mask, targets, 0)
    if safe_targets.max() >= v or safe_targets.min() < 0:
        raise ShapeError("cross_entropy: target id out of range",
                         details={"op": "cross_entropy", "shapes": [(n, v)]})
    rows = np.arange(n)
    picked = log_probs.value[rows, safe_targets]
    loss = -(picked * mask).sum() / count

    def backward_fn(g):
        grad = np.zeros((n, v))
        grad[rows[mask], safe_targets[mask]] = -1.0 / count
        return (grad * g,)

    return log_probs.tape.record("cross_entropy", np.asarray(loss), (log_probs,), backward_fn)
