"""
共通インターフェースの定義
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Any, Tuple

import numpy as np

from autodiff.graph import Node, Tape
from config import (EMBED_DIM, GRU_HIDDEN, GRU_PROJECTION, TRANSFORMER_HEADS,
                    TRANSFORMER_FFN_DIM, EOS_ID, PAD_ID)
from core.exceptions import ConfigurationError, ShapeError


class ModelKind(Enum):
    """言語モデルの種類"""
    GRU = "gru"
    TRANSFORMER = "transformer"


@dataclass(frozen=True)
class ArchitectureSpec:
    """言語モデルのアーキテクチャ記述"""
    kind: ModelKind
    layers: int
    vocab_size: int
    embed_dim: int = EMBED_DIM
    gru_hidden: int = GRU_HIDDEN
    gru_proj: int = GRU_PROJECTION
    heads: int = TRANSFORMER_HEADS
    ffn_dim: int = TRANSFORMER_FFN_DIM
    use_position_encoding: bool = True

    def __post_init__(self):
        if not isinstance(self.kind, ModelKind):
            object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.layers < 1:
            raise ConfigurationError(f"layers must be >= 1, got {self.layers}")
        if self.vocab_size < 4:
            raise ConfigurationError(f"vocab_size too small: {self.vocab_size}")
        if self.kind == ModelKind.TRANSFORMER and self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def label(self) -> str:
        """LM種別ラベル（例: gru1, transformer2）"""
        return f"{self.kind.value}{self.layers}"

    def with_vocab(self, vocab_size: int) -> "ArchitectureSpec":
        return replace(self, vocab_size=vocab_size)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "layers": self.layers,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "gru_hidden": self.gru_hidden,
            "gru_proj": self.gru_proj,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "use_position_encoding": self.use_position_encoding,
        }


@dataclass
class ModelCheckpoint:
    """名前付きパラメータ + アーキテクチャ + 学習進捗"""
    spec: ArchitectureSpec
    tensors: Dict[str, np.ndarray]
    seed: int
    sentences_seen: int = 0
    checkpoint_tag: str = "init"

    def copy(self) -> "ModelCheckpoint":
        return ModelCheckpoint(
            spec=self.spec,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            seed=self.seed,
            sentences_seen=self.sentences_seen,
            checkpoint_tag=self.checkpoint_tag,
        )

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "sentences_seen": self.sentences_seen,
            "checkpoint_tag": self.checkpoint_tag,
            "n_parameters": self.n_parameters,
        }


class LanguageModel(ABC):
    """言語モデルの基底クラス"""

    def __init__(self, checkpoint: ModelCheckpoint):
        self.checkpoint = checkpoint
        self.spec = checkpoint.spec

    @classmethod
    @abstractmethod
    def parameter_shapes(cls, spec: ArchitectureSpec) -> Dict[str, Tuple[int, ...]]:
        """
        パラメータ名 → 形状（抽象メソッド）

        Args:
            spec: アーキテクチャ記述

        Returns:
            宣言順のパラメータ形状
        """
        pass

    @abstractmethod
    def build_log_probs(self, params: Dict[str, Node], token_ids: np.ndarray) -> Node:
        """
        次単語の対数確率をテープ上に構築する（抽象メソッド）

        Args:
            params: パラメータ名 → ノード
            token_ids: [B × T] のID行列（パディング位置は埋め込み可能なIDに置換済み）

        Returns:
            [B·T × V_total] の対数確率ノード（行は文ごと・位置順）
        """
        pass

    def bind_parameters(self, tape: Tape, trainable: bool = True) -> Dict[str, Node]:
        """チェックポイントのテンソルをテープに登録"""
        if trainable:
            return {name: tape.leaf(name, value) for name, value in self.checkpoint.tensors.items()}
        return {name: tape.constant(value) for name, value in self.checkpoint.tensors.items()}

    def _check_ids(self, token_ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        valid = ids != PAD_ID
        if np.any(ids[valid] < 0) or np.any(ids[valid] >= self.spec.vocab_size):
            raise ShapeError(
                f"token id out of range for vocabulary of {self.spec.vocab_size}",
                details={"op": "forward_log_probs", "max_id": int(ids.max()), "vocab_size": self.spec.vocab_size})
        # パディング位置はEOSで埋める（因果性によりそれ以前の行には影響しない）
        return np.where(valid, ids, EOS_ID)

    def forward_log_probs(self, token_ids: np.ndarray) -> np.ndarray:
        """
        1文（BOS/EOS付き）の各位置における次単語の対数確率

        Args:
            token_ids: 長さTのID列

        Returns:
            [T × V_total] の行列（行tは位置t以前のトークンに条件付けた分布）
        """
        raw = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
        if np.any(raw < 0):
            raise ShapeError("token id out of range: negative id",
                             details={"op": "forward_log_probs", "min_id": int(raw.min())})
        ids = self._check_ids(raw)
        tape = Tape()
        return self.build_log_probs(self.bind_parameters(tape, trainable=False), ids).value

    def batch_log_probs(self, params: Dict[str, Node], token_ids: np.ndarray) -> Node:
        """パディングを含むミニバッチの対数確率を構築"""
        return self.build_log_probs(params, self._check_ids(token_ids))
