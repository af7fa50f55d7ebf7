"""
GRU言語モデル（埋め込み → GRU層 → tanh射影 → log-softmax出力）
"""

from typing import Dict, List, Optional, Tuple

import numpy as np

from autodiff import ops
from autodiff.graph import Node, Tape
from core.interfaces import ArchitectureSpec, LanguageModel

_GATES = ("r", "z", "n")


class GRULanguageModel(LanguageModel):
    """隠れ状態の再帰で逐次的に予測するGRU言語モデル"""

    @classmethod
    def parameter_shapes(cls, spec: ArchitectureSpec) -> Dict[str, Tuple[int, ...]]:
        v, e, h, p = spec.vocab_size, spec.embed_dim, spec.gru_hidden, spec.gru_proj
        shapes: Dict[str, Tuple[int, ...]] = {"embedding.weight": (v, e)}
        for layer in range(spec.layers):
            n_in = e if layer == 0 else h
            prefix = f"gru{layer}"
            for gate in _GATES:
                shapes[f"{prefix}.weight_ih_{gate}"] = (n_in, h)
                shapes[f"{prefix}.weight_hh_{gate}"] = (h, h)
                shapes[f"{prefix}.bias_ih_{gate}"] = (h,)
                shapes[f"{prefix}.bias_hh_{gate}"] = (h,)
        shapes["projection.weight"] = (h, p)
        shapes["projection.bias"] = (p,)
        shapes["output.weight"] = (p, v)
        shapes["output.bias"] = (v,)
        return shapes

    def _gru_layer(self, params: Dict[str, Node], layer: int, inputs: Node, batch: int,
                   steps: int, h0: Node) -> Tuple[Node, Node]:
        """
        1層分のGRUを全時刻にわたって展開

        Args:
            params: パラメータノード
            layer: 層番号
            inputs: 時刻優先で並べた入力 [T·B × in]
            batch: バッチサイズ B
            steps: 時刻数 T
            h0: 初期隠れ状態 [B × H]

        Returns:
            (全時刻の隠れ状態 [T·B × H], 最終隠れ状態)
        """
        prefix = f"gru{layer}"
        # 入力側の線形変換は全時刻まとめて計算
        x_proj = {
            g: ops.add_bias(ops.matmul(inputs, params[f"{prefix}.weight_ih_{g}"]), params[f"{prefix}.bias_ih_{g}"])
            for g in _GATES
        }
        h = h0
        outputs: List[Node] = []
        for t in range(steps):
            rows = {g: ops.slice_rows(x_proj[g], t * batch, (t + 1) * batch) for g in _GATES}
            hh = {
                g: ops.add_bias(ops.matmul(h, params[f"{prefix}.weight_hh_{g}"]), params[f"{prefix}.bias_hh_{g}"])
                for g in _GATES
            }
            r = ops.sigmoid(ops.add(rows["r"], hh["r"]))
            z = ops.sigmoid(ops.add(rows["z"], hh["z"]))
            n = ops.tanh(ops.add(rows["n"], ops.mul(r, hh["n"])))
            h = ops.add(n, ops.mul(z, ops.sub(h, n)))  # (1 - z)·n + z·h
            outputs.append(h)
        return ops.concat(outputs, axis=0), h

    def _run(self, params: Dict[str, Node], token_ids: np.ndarray,
             initial: Optional[List[np.ndarray]] = None) -> Tuple[Node, List[Node]]:
        tape: Tape = params["embedding.weight"].tape
        batch, steps = token_ids.shape
        hidden = self.spec.gru_hidden
        # 時刻優先（t·B + b）の並び
        x = ops.embedding(params["embedding.weight"], token_ids.T.reshape(-1))
        finals: List[Node] = []
        for layer in range(self.spec.layers):
            h0 = tape.constant(initial[layer] if initial is not None else np.zeros((batch, hidden)))
            x, h_last = self._gru_layer(params, layer, x, batch, steps, h0)
            finals.append(h_last)
        projected = ops.tanh(ops.add_bias(ops.matmul(x, params["projection.weight"]), params["projection.bias"]))
        logits = ops.add_bias(ops.matmul(projected, params["output.weight"]), params["output.bias"])
        log_probs = ops.log_softmax(logits)
        # 文優先（b·T + t）の並びに戻す
        order = (np.arange(steps)[None, :] * batch + np.arange(batch)[:, None]).reshape(-1)
        return ops.take_rows(log_probs, order), finals

    def build_log_probs(self, params: Dict[str, Node], token_ids: np.ndarray) -> Node:
        return self._run(params, token_ids)[0]

    def initial_state(self) -> List[np.ndarray]:
        """各層の初期隠れ状態（ゼロ）"""
        return [np.zeros((1, self.spec.gru_hidden)) for _ in range(self.spec.layers)]

    def step(self, state: List[np.ndarray], token_id: int) -> Tuple[np.ndarray, List[np.ndarray]]:
        """
        1トークン分だけ進める逐次評価

        Args:
            state: 各層の隠れ状態
            token_id: 入力トークンID

        Returns:
            (次単語の対数確率 [V_total], 更新後の隠れ状態)
        """
        ids = self._check_ids(np.array([[token_id]]))
        tape = Tape()
        log_probs, finals = self._run(self.bind_parameters(tape, trainable=False), ids, initial=state)
        return log_probs.value[0], [h.value for h in finals]

    def forward_incremental(self, token_ids: np.ndarray) -> np.ndarray:
        """step を繰り返して [T × V_total] の対数確率を得る"""
        state = self.initial_state()
        rows = []
        for token_id in np.asarray(token_ids).reshape(-1):
            row, state = self.step(state, int(token_id))
            rows.append(row)
        return np.vstack(rows)
