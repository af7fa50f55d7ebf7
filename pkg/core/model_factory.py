"""
言語モデルのファクトリークラス
"""

from typing import Dict, Tuple, Type

import numpy as np

from config import (ALLOWED_LAYER_COUNTS, EMBEDDING_INIT_RANGE, INITIAL_LR_GRU,
                    INITIAL_LR_TRANSFORMER)
from core.exceptions import ConfigurationError
from core.interfaces import ArchitectureSpec, LanguageModel, ModelCheckpoint, ModelKind


class ModelFactory:
    """言語モデルの生成を管理するファクトリークラス"""

    @staticmethod
    def model_class(kind: ModelKind) -> Type[LanguageModel]:
        """
        種類に対応するモデルクラスを返す

        Args:
            kind: 言語モデルの種類

        Returns:
            LanguageModel のサブクラス
        """
        if kind == ModelKind.GRU:
            from models.gru_model import GRULanguageModel
            return GRULanguageModel

        elif kind == ModelKind.TRANSFORMER:
            from models.transformer_model import TransformerLanguageModel
            return TransformerLanguageModel

        else:
            raise ConfigurationError(f"サポートされていないモデル種別: {kind}")

    @staticmethod
    def create(checkpoint: ModelCheckpoint) -> LanguageModel:
        """チェックポイントから評価・学習用のモデルを作成"""
        return ModelFactory.model_class(checkpoint.spec.kind)(checkpoint)

    @staticmethod
    def parse_label(label: str, vocab_size: int, **overrides) -> ArchitectureSpec:
        """
        "gru1" / "transformer2" のようなラベルからアーキテクチャを作成

        Args:
            label: 種別名 + 層数
            vocab_size: V_total
            **overrides: 次元などの上書き

        Returns:
            アーキテクチャ記述
        """
        head = label.rstrip("0123456789")
        digits = label[len(head):]
        try:
            kind = ModelKind(head.lower())
        except ValueError as e:
            raise ConfigurationError(f"不明なアーキテクチャ: {label}", original_error=e)
        if not digits or int(digits) not in ALLOWED_LAYER_COUNTS:
            raise ConfigurationError(f"層数は {ALLOWED_LAYER_COUNTS} のいずれか: {label}",
                                     details={"label": label})
        return ArchitectureSpec(kind=kind, layers=int(digits), vocab_size=vocab_size, **overrides)

    @staticmethod
    def default_learning_rate(kind: ModelKind) -> float:
        """種類ごとの初期学習率"""
        return INITIAL_LR_GRU if kind == ModelKind.GRU else INITIAL_LR_TRANSFORMER


def parameter_shapes(spec: ArchitectureSpec) -> Dict[str, Tuple[int, ...]]:
    """宣言順のパラメータ形状"""
    return ModelFactory.model_class(spec.kind).parameter_shapes(spec)


def count_parameters(spec: ArchitectureSpec) -> int:
    """宣言されたテンソル形状の要素数の総和"""
    return int(sum(np.prod(shape) for shape in parameter_shapes(spec).values()))


def _is_bias(name: str) -> bool:
    return name.endswith(".bias") or ".bias_" in name


def init_model(spec: ArchitectureSpec, seed: int) -> ModelCheckpoint:
    """
    シードから決定的に初期化したチェックポイントを作成

    埋め込みはシードだけから最初に生成するため、同じ語彙サイズなら
    GRUとTransformerで同一の初期値になる。

    Args:
        spec: アーキテクチャ記述
        seed: 乱数シード

    Returns:
        初期チェックポイント（checkpoint_tag="init"）
    """
    shapes = parameter_shapes(spec)
    embed_rng = np.random.default_rng(seed)
    weight_rng = np.random.default_rng([seed, 1])

    tensors: Dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name == "embedding.weight":
            tensors[name] = embed_rng.uniform(-EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE, size=shape)
        elif _is_bias(name):
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = weight_rng.uniform(-bound, bound, size=shape)
    return ModelCheckpoint(spec=spec, tensors=tensors, seed=seed, sentences_seen=0, checkpoint_tag="init")
