"""
計算グラフ - 逆伝播モード自動微分のテープとノード
"""

from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core.exceptions import GraphStateError, ShapeError


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Node:
    """テープ上の1演算の記録（出力テンソルと勾配関数）"""

    __slots__ = ("tape", "index", "op", "value", "inputs", "backward_fn", "name")

    def __init__(self, tape: "Tape", index: int, op: str, value: np.ndarray,
                 inputs: Tuple["Node", ...] = (), backward_fn: Optional[BackwardFn] = None,
                 name: Optional[str] = None):
        self.tape = tape
        self.index = index
        self.op = op
        self.value = value
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape}, name={self.name})"


class Tape:
    """ノードを生成順（トポロジカル順）に記録するテープ"""

    def __init__(self):
        self.nodes: List[Node] = []
        self.leaves: Dict[str, Node] = {}

    def leaf(self, name: str, value: np.ndarray) -> Node:
        """微分対象の入力・パラメータを登録"""
        node = Node(self, len(self.nodes), "leaf", np.asarray(value, dtype=np.float64), name=name)
        self.nodes.append(node)
        self.leaves[name] = node
        return node

    def constant(self, value: np.ndarray) -> Node:
        """勾配を必要としない定数を登録"""
        node = Node(self, len(self.nodes), "constant", np.asarray(value, dtype=np.float64))
        self.nodes.append(node)
        return node

    def record(self, op: str, value: np.ndarray, inputs: Tuple[Node, ...], backward_fn: BackwardFn) -> Node:
        """演算結果をテープに追加"""
        node = Node(self, len(self.nodes), op, value, inputs, backward_fn)
        self.nodes.append(node)
        return node

    def backward(self, output: Node, upstream: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        """
        逆トポロジカル順に勾配を伝播

        Args:
            output: 微分する出力ノード
            upstream: 出力に対する上流勾配（省略時は全要素1）

        Returns:
            葉ノード名 → 勾配
        """
        if upstream is None:
            upstream = np.ones_like(output.value)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != output.shape:
            raise ShapeError(
                f"backward: upstream shape {upstream.shape} does not match output shape {output.shape}",
                details={"op": "backward", "shapes": [upstream.shape, output.shape]})

        grads: Dict[int, np.ndarray] = {output.index: upstream}
        for node in reversed(self.nodes[:output.index + 1]):
            grad = grads.pop(node.index, None)
            if grad is None:
                continue
            if node.op == "leaf":
                grads[node.index] = grad  # 葉は最後に回収
                continue
            if node.backward_fn is None:
                continue
            input_grads = node.backward_fn(grad)
            for parent, parent_grad in zip(node.inputs, input_grads):
                if parent_grad is None or parent.op == "constant":
                    continue
                if parent.index in grads:
                    # 分岐した経路の勾配は和を取る
                    grads[parent.index] = grads[parent.index] + parent_grad
                else:
                    grads[parent.index] = parent_grad

        return {
            name: grads.get(leaf.index, np.zeros_like(leaf.value))
            for name, leaf in self.leaves.items()
        }


GraphBuilder = Callable[[Tape, Dict[str, Node]], Node]


class Graph:
    """入力形状の宣言と構築関数から成る計算グラフ"""

    def __init__(self, build: GraphBuilder, input_shapes: Optional[Dict[str, Tuple[int, ...]]] = None):
        """
        初期化

        Args:
            build: テープと入力ノードから出力ノードを構築する関数
            input_shapes: 入力名 → 期待される形状（省略時は検査しない）
        """
        self.build = build
        self.input_shapes = input_shapes or {}
        self.tape: Optional[Tape] = None
        self.output: Optional[Node] = None

    def forward(self, inputs: Dict[str, np.ndarray]) -> np.ndarray:
        """入力を与えてテープを作り直し、出力値を返す"""
        for name, expected in self.input_shapes.items():
            if name not in inputs:
                raise ShapeError(f"forward: missing input '{name}'", details={"op": "forward", "input": name})
            actual = np.shape(inputs[name])
            if tuple(actual) != tuple(expected):
                raise ShapeError(
                    f"forward: input '{name}' has shape {actual}, declared {tuple(expected)}",
                    details={"op": "forward", "shapes": [actual, tuple(expected)]})

        self.tape = Tape()
        nodes = {name: self.tape.leaf(name, value) for name, value in inputs.items()}
        self.output = self.build(self.tape, nodes)
        return self.output.value

    def backward(self, upstream: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        """直前のforwardに対して勾配を計算"""
        if self.tape is None or self.output is None:
            raise GraphStateError("backward called before forward")
        return self.tape.backward(self.output, upstream)


def forward(graph: Graph, inputs: Dict[str, np.ndarray]) -> np.ndarray:
    """グラフを評価する（同一入力に対して決定的）"""
    return graph.forward(inputs)


def backward(graph: Graph, upstream: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """評価済みグラフの全入力に対する勾配を返す"""
    return graph.backward(upstream)
