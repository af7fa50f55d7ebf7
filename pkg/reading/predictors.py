"""
回帰用の予測変数表の構築（頻度・語長・位置・前の語の影響・サプライザル）
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from core.exceptions import ReadingDataError
from corpus.tokenizer import normalize_stimulus_word
from reading.datasets import ReadingEvent

# データセットごとのベースライン固定効果
DATASET_MAINS: Dict[str, List[str]] = {
    "SPR": ["log_freq", "length", "position", "prev_log_freq", "prev_length", "prev_log_rt"],
    "ET": ["log_freq", "length", "position", "prev_log_freq", "prev_length"],
    "EEG": ["log_freq", "length", "position", "baseline"],
}
SURPRISAL_TERMS: Dict[str, List[str]] = {
    "SPR": ["surprisal", "prev_surprisal"],
    "ET": ["surprisal", "prev_surprisal"],
    "EEG": ["surprisal"],
}
DEPENDENT = "y"


@dataclass(frozen=True)
class FrequencyNorms:
    """語 → 100万語あたりの出現頻度"""
    per_million: Dict[str, float]

    def __post_init__(self):
        bad = sorted(w for w, c in self.per_million.items() if not c > 0)
        if bad:
            raise ReadingDataError(f"frequency norms must be positive: {', '.join(bad[:10])}",
                                   details={"words": bad})

    def log_frequency(self, word: str) -> float:
        """ln(100万語あたり頻度 + 1)"""
        return float(np.log(self.per_million[word] + 1.0))

    def missing(self, words: Iterable[str]) -> List[str]:
        return sorted({w for w in words if w not in self.per_million})


def load_norms(path: Union[str, Path]) -> FrequencyNorms:
    """TSV `word<TAB>count_per_million` を読み込み"""
    path = Path(path)
    if not path.exists():
        raise ReadingDataError(f"frequency norms not found: {path}", details={"path": str(path)})
    values: Dict[str, float] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError(line)
                values[parts[0]] = float(parts[1])
            except ValueError as e:
                raise ReadingDataError(f"{path}:{line_no}: malformed frequency row",
                                       details={"path": str(path), "line": line_no}, original_error=e)
    return FrequencyNorms(per_million=values)


def write_norms(norms: FrequencyNorms, path: Union[str, Path]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        for word in sorted(norms.per_million):
            writer.writerow([word, repr(float(norms.per_million[word]))])


def standardize(frame: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """指定列を平均0・標準偏差1に変換（母標準偏差）"""
    result = frame.copy()
    for column in columns:
        values = result[column].to_numpy(dtype=float)
        sd = values.std()
        if not sd > 0:
            raise ReadingDataError(f"column '{column}' has zero variance after exclusions",
                                   details={"column": column})
        result[column] = (values - values.mean()) / sd
    return result


@dataclass
class PredictorTable:
    """1データセット分の分析用の表（固定効果は標準化済み）"""
    dataset: str
    frame: pd.DataFrame
    mains: List[str]
    surprisal_columns: List[str] = field(default_factory=list)
    n_dropped: int = 0
    standardized: bool = True

    @property
    def dependent(self) -> str:
        return DEPENDENT

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def keys(self) -> pd.DataFrame:
        """(sentence_id, position) の一覧"""
        return self.frame[["sentence_id", "word_position"]].rename(columns={"word_position": "position"})

    def with_surprisal(self, surprisal: pd.DataFrame) -> "PredictorTable":
        """
        1つの (model, seed, checkpoint) のサプライザルを結合して標準化

        Args:
            surprisal: SURPRISAL_COLUMNS 形式の表

        Returns:
            サプライザル列を持つ新しい表
        """
        groups = surprisal[["model", "layers", "seed", "checkpoint"]].drop_duplicates()
        if len(groups) != 1:
            raise ReadingDataError(f"expected surprisal from exactly one checkpoint, got {len(groups)}",
                                   details={"groups": len(groups)})
        lookup = {(int(s), int(p)): float(v) for s, p, v in
                  surprisal[["sentence_id", "position", "surprisal"]].itertuples(index=False)}
        frame = self.frame.copy()
        terms = SURPRISAL_TERMS[self.dataset]
        missing: Set[str] = set()
        for term in terms:
            offset = -1 if term.startswith("prev_") else 0
            values = []
            for sid, pos, word in frame[["sentence_id", "word_position", "word"]].itertuples(index=False):
                value = lookup.get((int(sid), int(pos) + offset))
                if value is None:
                    missing.add(f"{word}@{sid}:{int(pos) + offset}")
                values.append(np.nan if value is None else value)
            frame[term] = values
        if missing:
            listed = sorted(missing)
            raise ReadingDataError(f"missing surprisal for {len(listed)} words: {', '.join(listed[:10])}",
                                   details={"words": listed})
        if self.standardized:
            frame = standardize(frame, terms)
        return replace(self, frame=frame, surprisal_columns=list(terms))


def _word_features(word: str, norms: FrequencyNorms) -> Tuple[float, int]:
    token = normalize_stimulus_word(word)
    return norms.log_frequency(token), len(token)


def build_predictors(events: Sequence[ReadingEvent], norms: FrequencyNorms,
                     surprisal: Optional[pd.DataFrame] = None,
                     context: Optional[Sequence[ReadingEvent]] = None, standardized: bool = True) -> PredictorTable:
    """
    除外後のイベントから標準化済みの予測変数表を作成

    前の語（t−1）の特徴は、その語自身が除外されているかに関係なく
    未フィルタのデータ（context）から取る。

    Args:
        events: 除外規則を適用済みのイベント（1データセット分）
        norms: 頻度ノルム
        surprisal: 1チェックポイント分のサプライザル表（省略時はベースライン用）
        context: 未フィルタのイベント（省略時は events）
        standardized: False なら標準化前の値のまま返す

    Returns:
        予測変数表
    """
    if not events:
        raise ReadingDataError("no events left to build predictors from")
    datasets = {e.dataset for e in events}
    if len(datasets) != 1:
        raise ReadingDataError(f"events mix datasets: {sorted(datasets)}")
    dataset = datasets.pop()
    context = events if context is None else context

    words: Dict[Tuple[int, int], str] = {}
    measures: Dict[Tuple[str, int, int], float] = {}
    for e in context:
        words.setdefault((e.sentence_id, e.position), e.word)
        measures[(e.subject, e.sentence_id, e.position)] = e.measure
    for e in events:
        words.setdefault((e.sentence_id, e.position), e.word)

    needed = {normalize_stimulus_word(e.word) for e in events}
    needed |= {normalize_stimulus_word(words[(e.sentence_id, e.position - 1)])
               for e in events if (e.sentence_id, e.position - 1) in words}
    missing = norms.missing(needed)
    if missing:
        raise ReadingDataError(f"missing frequency for {len(missing)} words: {', '.join(missing[:10])}",
                               details={"words": missing})

    rows = []
    dropped = 0
    for e in events:
        log_freq, length = _word_features(e.word, norms)
        row = {
            "subject": e.subject,
            "sentence_id": e.sentence_id,
            "word_position": e.position,
            "word": normalize_stimulus_word(e.word),
            "item": f"{e.sentence_id}:{e.position}",
            "log_freq": log_freq,
            "length": float(length),
        }
        if dataset == "EEG":
            row[DEPENDENT] = e.measure
            row["baseline"] = e.baseline
        else:
            if e.measure <= 0:
                raise ReadingDataError(f"non-positive reading time for subject {e.subject}",
                                       details={"sentence_id": e.sentence_id, "position": e.position})
            row[DEPENDENT] = float(np.log(e.measure))
            previous = words.get((e.sentence_id, e.position - 1))
            if previous is None:
                dropped += 1
                continue
            row["prev_log_freq"], prev_length = _word_features(previous, norms)
            row["prev_length"] = float(prev_length)
            if dataset == "SPR":
                prev_rt = measures.get((e.subject, e.sentence_id, e.position - 1))
                if prev_rt is None or prev_rt <= 0:
                    dropped += 1
                    continue
                row["prev_log_rt"] = float(np.log(prev_rt))
        rows.append(row)

    mains = DATASET_MAINS[dataset]
    frame = pd.DataFrame(rows)
    if frame.empty:
        raise ReadingDataError(f"{dataset}: every event lacked spill-over data")
    frame["position"] = frame["word_position"].astype(float)
    if standardized:
        frame = standardize(frame, mains)
    table = PredictorTable(dataset=dataset, frame=frame, mains=list(mains), n_dropped=dropped,
                           standardized=standardized)
    return table.with_surprisal(surprisal) if surprisal is not None else table


def split_spr_by_subset(events: Sequence[ReadingEvent],
                        subset_sentence_ids: Iterable[int]) -> Tuple[List[ReadingEvent], List[ReadingEvent]]:
    """
    SPRイベントを、ET/EEGにも現れる文とそれ以外に分割

    Returns:
        (共有文のイベント, SPRのみの文のイベント)
    """
    subset = set(int(i) for i in subset_sentence_ids)
    shared = [e for e in events if e.sentence_id in subset]
    spr_only = [e for e in events if e.sentence_id not in subset]
    return shared, spr_only
