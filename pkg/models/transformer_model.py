"""
因果的Transformer言語モデル（正弦波位置符号 + マスク付き多頭注意）
"""

from typing import Dict, List, Tuple

import numpy as np

from autodiff import ops
from autodiff.graph import Node, Tape
from config import POSITION_ENCODING_BASE
from core.interfaces import ArchitectureSpec, LanguageModel


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """正弦波位置符号 [length × dim]"""
    positions = np.arange(length)[:, None]
    rates = POSITION_ENCODING_BASE ** (-(np.arange(0, dim, 2) / dim))
    enc = np.zeros((length, dim))
    enc[:, 0::2] = np.sin(positions * rates)
    enc[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return enc


def causal_mask(length: int) -> np.ndarray:
    """上三角（未来位置）が True のマスク"""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


class TransformerLanguageModel(LanguageModel):
    """自己注意層を重ねた因果的言語モデル（post-LN、LNはアフィンなし）"""

    @classmethod
    def parameter_shapes(cls, spec: ArchitectureSpec) -> Dict[str, Tuple[int, ...]]:
        v, e, f = spec.vocab_size, spec.embed_dim, spec.ffn_dim
        shapes: Dict[str, Tuple[int, ...]] = {"embedding.weight": (v, e)}
        for layer in range(spec.layers):
            prefix = f"layer{layer}"
            for proj in ("q", "k", "v", "o"):
                shapes[f"{prefix}.attn.{proj}.weight"] = (e, e)
                shapes[f"{prefix}.attn.{proj}.bias"] = (e,)
            shapes[f"{prefix}.ffn.in.weight"] = (e, f)
            shapes[f"{prefix}.ffn.in.bias"] = (f,)
            shapes[f"{prefix}.ffn.out.weight"] = (f, e)
            shapes[f"{prefix}.ffn.out.bias"] = (e,)
        shapes["output.weight"] = (e, v)
        shapes["output.bias"] = (v,)
        return shapes

    def _linear(self, x: Node, params: Dict[str, Node], name: str) -> Node:
        return ops.add_bias(ops.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])

    def _attention(self, params: Dict[str, Node], layer: int, x: Node, batch: int, steps: int) -> Node:
        prefix = f"layer{layer}.attn"
        q = self._linear(x, params, f"{prefix}.q")
        k = self._linear(x, params, f"{prefix}.k")
        v = self._linear(x, params, f"{prefix}.v")
        heads = self.spec.heads
        d_head = self.spec.embed_dim // heads
        mask = causal_mask(steps)
        per_sentence: List[Node] = []
        for b in range(batch):
            rows = (b * steps, (b + 1) * steps)
            qb, kb, vb = (ops.slice_rows(m, *rows) for m in (q, k, v))
            head_outputs = []
            for hd in range(heads):
                cols = (hd * d_head, (hd + 1) * d_head)
                qh, kh, vh = (ops.slice_cols(m, *cols) for m in (qb, kb, vb))
                scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), 1.0 / np.sqrt(d_head))
                weights = ops.softmax(ops.masked_fill(scores, mask))
                head_outputs.append(ops.matmul(weights, vh))
            per_sentence.append(ops.concat(head_outputs, axis=1))
        attended = ops.concat(per_sentence, axis=0) if batch > 1 else per_sentence[0]
        return self._linear(attended, params, f"{prefix}.o")

    def build_log_probs(self, params: Dict[str, Node], token_ids: np.ndarray) -> Node:
        tape: Tape = params["embedding.weight"].tape
        batch, steps = token_ids.shape
        dim = self.spec.embed_dim
        x = ops.scale(ops.embedding(params["embedding.weight"], token_ids.reshape(-1)), np.sqrt(dim))
        if self.spec.use_position_encoding:
            x = ops.add(x, tape.constant(np.tile(sinusoidal_encoding(steps, dim), (batch, 1))))
        for layer in range(self.spec.layers):
            x = ops.layer_norm(ops.add(x, self._attention(params, layer, x, batch, steps)))
            hidden = ops.relu(self._linear(x, params, f"layer{layer}.ffn.in"))
            x = ops.layer_norm(ops.add(x, self._linear(hidden, params, f"layer{layer}.ffn.out")))
        return ops.log_softmax(self._linear(x, params, "output"))
