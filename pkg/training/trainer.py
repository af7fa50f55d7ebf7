"""
言語モデルの学習（モメンタム付きSGD + 学習率の段階的半減 + チェックポイント）
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from autodiff import ops
from autodiff.graph import Tape
from config import BATCH_SIZE, EPOCHS, MOMENTUM
from core.exceptions import ConfigurationError, CorpusError, TrainingDivergedError
from core.interfaces import ArchitectureSpec, ModelCheckpoint
from core.model_factory import ModelFactory, init_model
from corpus.batching import batches
from corpus.vocabulary import SentenceCorpus

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    """学習設定"""
    spec: ArchitectureSpec
    initial_lr: float
    seed: int
    checkpoint_ladder: Tuple[int, ...] = ()
    momentum: float = MOMENTUM
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ConfigurationError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1",
                                     details={"epochs": self.epochs, "batch_size": self.batch_size})
        ladder = tuple(int(x) for x in self.checkpoint_ladder)
        if any(b <= a for a, b in zip(ladder, ladder[1:])) or any(x < 1 for x in ladder):
            raise ConfigurationError(f"checkpoint ladder must be strictly increasing and positive: {ladder}")
        object.__setattr__(self, "checkpoint_ladder", ladder)

    def to_dict(self) -> Dict:
        return {
            "spec": self.spec.to_dict(),
            "initial_lr": self.initial_lr,
            "seed": self.seed,
            "checkpoint_ladder": list(self.checkpoint_ladder),
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }


@dataclass
class TrainRun:
    """学習結果（チェックポイント列と損失の履歴）"""
    config: TrainConfig
    checkpoints: List[ModelCheckpoint] = field(default_factory=list)
    loss_trace: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "config": self.config.to_dict(),
            "checkpoints": [c.checkpoint_tag for c in self.checkpoints],
            "batches": len(self.loss_trace),
            "final_loss": self.loss_trace[-1] if self.loss_trace else None,
        }


def ladder_tag(sentences: int) -> str:
    """ラダー点のラベル（1000 → "1K", 3000000 → "3M"）"""
    if sentences % 1_000_000 == 0:
        return f"{sentences // 1_000_000}M"
    if sentences % 1_000 == 0:
        return f"{sentences // 1_000}K"
    return str(sentences)


def tag_sort_key(tag: str) -> Tuple[int, int]:
    """チェックポイントタグの学習順（ラダー点 < epoch1 < epoch2 ...）"""
    if tag.startswith("epoch"):
        return 1, int(tag[len("epoch"):])
    scale = {"K": 1_000, "M": 1_000_000}.get(tag[-1:], 1)
    digits = tag[:-1] if scale > 1 else tag
    return 0, int(digits) * scale


def checkpoint_schedule(ladder: Tuple[int, ...], corpus_size: int, epochs: int) -> List[Tuple[int, str]]:
    """
    チェックポイントを出力する既読文数とタグの一覧

    エポック終端と重なるラダー点はエポックのタグで1回だけ出力する。
    """
    points: Dict[int, str] = {n: ladder_tag(n) for n in ladder}
    for epoch in range(1, epochs + 1):
        points[corpus_size * epoch] = f"epoch{epoch}"
    return sorted(points.items())


def lr_at(sentences_seen: int, corpus_size: int, initial_lr: float) -> float:
    """
    既読文数に応じた学習率

    1エポック目の 1/3, 2/3, 終端で半減し、2エポック目以降は initial/8 で固定。
    """
    if corpus_size <= 0:
        raise ConfigurationError(f"corpus_size must be positive, got {corpus_size}")
    if sentences_seen >= corpus_size:
        return initial_lr / 8
    if 3 * sentences_seen >= 2 * corpus_size:
        return initial_lr / 4
    if 3 * sentences_seen >= corpus_size:
        return initial_lr / 2
    return initial_lr


def sgd_momentum_step(params: Params, grads: Params, velocity: Params, lr: float,
                      momentum: float = MOMENTUM) -> Tuple[Params, Params]:
    """
    古典的モメンタムによる1ステップの更新（v ← μv + g, p ← p − lr·v）

    Args:
        params: パラメータ
        grads: 勾配
        velocity: 速度
        lr: 学習率
        momentum: モメンタム係数

    Returns:
        (更新後のパラメータ, 更新後の速度)
    """
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingDivergedError(f"non-finite gradient in {', '.join(sorted(bad))}",
                                    details={"parameters": sorted(bad)})
    new_params: Params = {}
    new_velocity: Params = {}
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ConfigurationError(f"gradient shape mismatch for {name}",
                                     details={"param": value.shape, "grad": grads[name].shape})
        v = momentum * velocity[name] + grads[name]
        new_velocity[name] = v
        new_params[name] = value - lr * v
    return new_params, new_velocity


def batch_loss(model, tape: Tape, token_ids: np.ndarray, pad_mask: np.ndarray):
    """ミニバッチの平均交差エントロピー（非パディングの予測対象のみ）"""
    params = model.bind_parameters(tape, trainable=True)
    log_probs = model.batch_log_probs(params, token_ids[:, :-1])
    targets = token_ids[:, 1:].reshape(-1)
    mask = ~pad_mask[:, 1:].reshape(-1)
    return ops.cross_entropy(log_probs, targets, mask)


def train(config: TrainConfig, corpus: SentenceCorpus,
          on_checkpoint: Optional[Callable[[ModelCheckpoint], None]] = None,
          keep_checkpoints: bool = True, show_progress: bool = True) -> TrainRun:
    """
    設定に従って1本の言語モデルを学習

    Args:
        config: 学習設定
        corpus: 学習文
        on_checkpoint: チェックポイント出力時に呼ばれる関数（ファイル保存など）
        keep_checkpoints: TrainRun にチェックポイントを保持するか
        show_progress: tqdm の進捗表示

    Returns:
        学習結果
    """
    n = len(corpus)
    if n == 0:
        raise CorpusError("cannot train on an empty corpus")
    if config.checkpoint_ladder and config.checkpoint_ladder[-1] > n * config.epochs:
        raise ConfigurationError(
            f"checkpoint ladder exceeds corpus size × epochs ({n * config.epochs})",
            details={"ladder": list(config.checkpoint_ladder), "corpus_size": n})

    current = init_model(config.spec, config.seed)
    model = ModelFactory.create(current)
    velocity = {name: np.zeros_like(v) for name, v in current.tensors.items()}
    schedule = checkpoint_schedule(config.checkpoint_ladder, n, config.epochs)
    next_point = 0
    run = TrainRun(config=config)
    seen = 0
    batch_index = 0

    def emit(tag: str):
        snapshot = current.copy()
        snapshot.sentences_seen = seen
        snapshot.checkpoint_tag = tag
        if on_checkpoint is not None:
            on_checkpoint(snapshot)
        if keep_checkpoints:
            run.checkpoints.append(snapshot)

    n_batches = math.ceil(n / config.batch_size)
    for epoch in range(config.epochs):
        progress = tqdm(batches(corpus, config.batch_size, config.seed, epoch), total=n_batches,
                        desc=f"{config.spec.label} s{config.seed} epoch {epoch + 1}",
                        disable=not show_progress, leave=False)
        for batch in progress:
            lr = lr_at(seen, n, config.initial_lr)
            tape = Tape()
            loss = batch_loss(model, tape, batch.token_ids, batch.pad_mask)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at batch {batch_index}",
                                            details={"batch_index": batch_index, "label": config.spec.label,
                                                     "seed": config.seed})
            grads = tape.backward(loss)
            try:
                current.tensors, velocity = sgd_momentum_step(current.tensors, grads, velocity, lr,
                                                              config.momentum)
            except TrainingDivergedError as e:
                e.details["batch_index"] = batch_index
                raise
            run.loss_trace.append(value)
            seen += batch.n_sentences
            batch_index += 1
            progress.set_postfix(loss=f"{value:.3f}", lr=f"{lr:.5f}")
            while next_point < len(schedule) and seen >= schedule[next_point][0]:
                emit(schedule[next_point][1])
                next_point += 1
    return run
