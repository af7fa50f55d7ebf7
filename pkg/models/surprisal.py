"""
サプライザルの計算・集計・CSV入出力
"""

from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import BOS_ID, EOS_ID, FLOAT_FORMAT, UNK_ID
from core.exceptions import CorpusError, InputDataError
from core.interfaces import LanguageModel, ModelCheckpoint
from core.model_factory import ModelFactory
from corpus.tokenizer import normalize_stimulus_word
from corpus.vocabulary import Vocabulary

SURPRISAL_COLUMNS = ["model", "layers", "seed", "checkpoint", "sentence_id", "position", "word", "surprisal"]

ModelLike = Union[LanguageModel, ModelCheckpoint]


def _as_model(model: ModelLike) -> LanguageModel:
    return model if isinstance(model, LanguageModel) else ModelFactory.create(model)


def surprisal_of(model: ModelLike, sentence: Sequence[int]) -> List[float]:
    """
    文中の各語（と文末EOS）のサプライザル（nats）

    Args:
        model: 言語モデルまたはチェックポイント
        sentence: 語のID列（BOS/EOSなし）

    Returns:
        長さ len(sentence)+1 のリスト。s_t = −log P(w_t | w_<t)
    """
    ids = np.array([BOS_ID, *sentence, EOS_ID], dtype=np.int64)
    log_probs = _as_model(model).forward_log_probs(ids)
    return [max(0.0, -float(log_probs[t - 1, ids[t]])) for t in range(1, len(ids))]


def stimulus_ids(text: str, vocab: Vocabulary) -> Tuple[List[str], List[int]]:
    """提示文を語とIDの列に変換（語彙外の語はエラー）"""
    words = [normalize_stimulus_word(raw) for raw in text.split()]
    ids = [vocab.id_of(w) for w in words]
    missing = [w for w, i in zip(words, ids) if i == UNK_ID]
    if missing:
        raise CorpusError(f"stimulus words missing from vocabulary: {', '.join(sorted(set(missing)))}",
                          details={"words": sorted(set(missing))})
    return words, ids


def surprisal_table(checkpoint: ModelCheckpoint, stimuli: Iterable[Tuple[int, str]],
                    vocab: Vocabulary) -> pd.DataFrame:
    """
    全刺激文について1語1行のサプライザル表を作成

    Args:
        checkpoint: 評価するチェックポイント
        stimuli: (sentence_id, 提示文) の列
        vocab: 語彙

    Returns:
        SURPRISAL_COLUMNS を列に持つ表（位置は1始まり）
    """
    model = ModelFactory.create(checkpoint)
    rows = []
    for sentence_id, text in stimuli:
        words, ids = stimulus_ids(text, vocab)
        values = surprisal_of(model, ids)
        for position, (word, value) in enumerate(zip(words, values), start=1):
            rows.append((checkpoint.spec.kind.value, checkpoint.spec.layers, checkpoint.seed,
                         checkpoint.checkpoint_tag, int(sentence_id), position, word, value))
    return pd.DataFrame(rows, columns=SURPRISAL_COLUMNS)


def avg_log_prob(table: pd.DataFrame, included: Optional[pd.DataFrame] = None) -> float:
    """
    選択された行の平均対数確率（= −平均サプライザル）

    Args:
        table: サプライザル表
        included: 対象とする (sentence_id, position) を列に持つ表（省略時は全行）

    Returns:
        1語あたりの平均対数確率（nats）
    """
    selected = table
    if included is not None:
        keys = included[["sentence_id", "position"]].drop_duplicates()
        selected = table.merge(keys, on=["sentence_id", "position"], how="inner")
    if selected.empty:
        raise InputDataError("avg_log_prob: selection contains no rows")
    return float(-selected["surprisal"].mean())


def write_surprisal_table(table: pd.DataFrame, path: Union[str, Path]):
    """CSVとして保存"""
    table[SURPRISAL_COLUMNS].to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_surprisal_table(path: Union[str, Path]) -> pd.DataFrame:
    """保存済みCSVを読み込み"""
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"surprisal table not found: {path}", details={"path": str(path)})
    table = pd.read_csv(path, dtype={"model": str, "checkpoint": str, "word": str})
    missing = [c for c in SURPRISAL_COLUMNS if c not in table.columns]
    if missing:
        raise InputDataError(f"surprisal table {path} lacks columns: {missing}", details={"path": str(path)})
    return table
