"""
中心差分による勾配チェック
"""

from typing import Dict, Optional

import numpy as np

from autodiff.graph import Graph
from core.exceptions import ConfigurationError


def _projected(graph: Graph, inputs: Dict[str, np.ndarray], weights: np.ndarray) -> float:
    return float(np.sum(graph.forward(inputs) * weights))


def grad_check(graph: Graph, point: Dict[str, np.ndarray], h: float = 1e-6,
               max_components: Optional[int] = None, seed: int = 0) -> float:
    """
    解析的勾配と中心差分を要素ごとに比較し、最大相対誤差を返す

    出力が多次元の場合は固定の乱数重みで射影したスカラーを微分する。
    相対誤差の分母は max(|a|, |b|, 1e-8)。

    Args:
        graph: 検査対象のグラフ
        point: 入力名 → 値（すべて有限）
        h: 差分ステップ（1e-8 〜 1e-4）
        max_components: 入力ごとに検査する要素数の上限（省略時は全要素）
        seed: 射影重みと要素抽出の乱数シード

    Returns:
        最大相対誤差
    """
    if not 1e-8 <= h <= 1e-4:
        raise ConfigurationError(f"step h={h} outside [1e-8, 1e-4]", details={"h": h})
    rng = np.random.default_rng(seed)
    point = {name: np.array(value, dtype=np.float64) for name, value in point.items()}

    output = graph.forward(point)
    weights = rng.standard_normal(np.shape(output))
    analytic = graph.backward(weights)

    worst = 0.0
    for name, value in point.items():
        flat = value.reshape(-1)
        indices = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            indices = rng.choice(flat.size, size=max_components, replace=False)
        grad_flat = analytic[name].reshape(-1)
        for i in indices:
            original = flat[i]
            flat[i] = original + h
            f_plus = _projected(graph, point, weights)
            flat[i] = original - h
            f_minus = _projected(graph, point, weights)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = grad_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)

    # 最後の状態を元の入力に戻しておく
    graph.forward(point)
    return worst
