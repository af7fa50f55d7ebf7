"""
ミニバッチの生成（決定的シャッフル + BOS/EOS付与 + パディング）
"""

from dataclasses import dataclass
from typing import Iterator, List

import numpy as np

from config import BOS_ID, EOS_ID, PAD_ID
from core.exceptions import CorpusError
from corpus.vocabulary import SentenceCorpus


@dataclass(frozen=True)
class Minibatch:
    """パディング済みのID行列"""
    token_ids: np.ndarray  # [B × T_max]、パディング位置は PAD_ID
    pad_mask: np.ndarray   # [B × T_max]、パディング位置で True
    lengths: List[int]     # BOS/EOSを含む各文の長さ

    @property
    def n_sentences(self) -> int:
        return len(self.lengths)


def make_minibatch(sentences: List[tuple]) -> Minibatch:
    """文のリストにBOS/EOSを付けて右詰めでパディング"""
    wrapped = [(BOS_ID,) + tuple(s) + (EOS_ID,) for s in sentences]
    lengths = [len(s) for s in wrapped]
    t_max = max(lengths)
    token_ids = np.full((len(wrapped), t_max), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(wrapped):
        token_ids[row, :len(seq)] = seq
    return Minibatch(token_ids=token_ids, pad_mask=token_ids == PAD_ID, lengths=lengths)


def epoch_order(n_sentences: int, order_seed: int, epoch: int = 0) -> np.ndarray:
    """エポックごとの文の並び順（シードとエポック番号で決定）"""
    return np.random.default_rng([order_seed, epoch]).permutation(n_sentences)


def batches(corpus: SentenceCorpus, batch_size: int, order_seed: int, epoch: int = 0) -> Iterator[Minibatch]:
    """
    1エポック分のミニバッチを順に返す

    Args:
        corpus: 学習文
        batch_size: 1バッチの文数
        order_seed: シャッフルのシード
        epoch: エポック番号（0始まり）

    Yields:
        ミニバッチ（最後のバッチは端数になりうる）
    """
    if len(corpus) == 0:
        raise CorpusError("cannot batch an empty corpus")
    order = epoch_order(len(corpus), order_seed, epoch)
    for start in range(0, len(order), batch_size):
        yield make_minibatch([corpus.sentences[i] for i in order[start:start + batch_size]])
