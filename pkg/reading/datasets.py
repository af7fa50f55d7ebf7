"""
読解データ（SPR / ET / EEG）のCSV入出力
"""

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

from config import DATASET_KINDS, READING_DATA_COLUMNS
from core.exceptions import ReadingDataError

_TRUE_FLAGS = {"1", "true", "yes"}
_FALSE_FLAGS = {"", "0", "false", "no"}


@dataclass(frozen=True)
class ReadingEvent:
    """1被験者が1語を読んだときの測定値"""
    dataset: str
    subject: str
    sentence_id: int
    position: int
    word: str  # 提示されたままの語（句読点を含む）
    measure: float  # SPR: 読み時間ms, ET: 注視時間ms, EEG: N400振幅µV
    baseline: Optional[float] = None  # EEGのみ: 語提示前100msの平均振幅
    artifact: bool = False  # EEGのみ

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _parse_float(text: str, column: str, line_no: int, path: Path) -> float:
    try:
        value = float(text)
    except ValueError as e:
        raise ReadingDataError(f"{path}:{line_no}: column '{column}' is not a number: {text!r}",
                               details={"path": str(path), "line": line_no, "column": column}, original_error=e)
    if not math.isfinite(value):
        raise ReadingDataError(f"{path}:{line_no}: column '{column}' is not finite",
                               details={"path": str(path), "line": line_no, "column": column})
    return value


def _parse_int(text: str, column: str, line_no: int, path: Path) -> int:
    try:
        return int(text)
    except ValueError as e:
        raise ReadingDataError(f"{path}:{line_no}: column '{column}' is not an integer: {text!r}",
                               details={"path": str(path), "line": line_no, "column": column}, original_error=e)


def _parse_row(row: Dict[str, str], kind: str, line_no: int, path: Path) -> ReadingEvent:
    dataset = row["dataset"].strip().upper()
    if dataset != kind:
        raise ReadingDataError(f"{path}:{line_no}: dataset '{row['dataset']}' does not match {kind}",
                               details={"path": str(path), "line": line_no})
    position = _parse_int(row["position"], "position", line_no, path)
    if position < 1:
        raise ReadingDataError(f"{path}:{line_no}: position must be >= 1",
                               details={"path": str(path), "line": line_no})
    flag = row["artifact"].strip().lower()
    if flag not in _TRUE_FLAGS | _FALSE_FLAGS:
        raise ReadingDataError(f"{path}:{line_no}: artifact flag must be 0/1, got {row['artifact']!r}",
                               details={"path": str(path), "line": line_no})
    baseline: Optional[float] = None
    if kind == "EEG":
        baseline = _parse_float(row["baseline"], "baseline", line_no, path)
    elif row["baseline"].strip():
        raise ReadingDataError(f"{path}:{line_no}: baseline is only allowed for EEG",
                               details={"path": str(path), "line": line_no})
    if not row["subject"].strip() or not row["word"].strip():
        raise ReadingDataError(f"{path}:{line_no}: subject and word must not be empty",
                               details={"path": str(path), "line": line_no})
    return ReadingEvent(
        dataset=kind,
        subject=row["subject"].strip(),
        sentence_id=_parse_int(row["sentence_id"], "sentence_id", line_no, path),
        position=position,
        word=row["word"],
        measure=_parse_float(row["measure"], "measure", line_no, path),
        baseline=baseline,
        artifact=flag in _TRUE_FLAGS,
    )


def load_dataset(kind: str, path: Union[str, Path]) -> List[ReadingEvent]:
    """
    読解データCSVを読み込み

    Args:
        kind: "SPR" / "ET" / "EEG"
        path: CSVファイル

    Returns:
        測定イベントのリスト（空ファイルなら空リスト）
    """
    kind = kind.upper()
    if kind not in DATASET_KINDS:
        raise ReadingDataError(f"unknown dataset kind: {kind}", details={"kind": kind})
    path = Path(path)
    if not path.exists():
        raise ReadingDataError(f"reading data not found: {path}", details={"path": str(path)})
    if path.stat().st_size == 0:
        return []

    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in READING_DATA_COLUMNS if c not in frame.columns]
    if missing:
        raise ReadingDataError(f"{path}:1: header lacks columns {missing}", details={"path": str(path), "line": 1})
    # ヘッダが1行目なのでデータ行は2行目から
    return [_parse_row(row, kind, line_no, path)
            for line_no, row in enumerate(frame[READING_DATA_COLUMNS].to_dict("records"), start=2)]


def events_to_frame(events: List[ReadingEvent]) -> pd.DataFrame:
    """イベント列を READING_DATA_COLUMNS の表に変換"""
    return pd.DataFrame([e.to_dict() for e in events], columns=READING_DATA_COLUMNS)


def save_dataset(events: List[ReadingEvent], path: Union[str, Path]):
    """READING_DATA_COLUMNS 形式のCSVとして保存（EEG以外はbaseline/artifactが空欄）"""
    rows = []
    for e in events:
        eeg = e.dataset == "EEG"
        rows.append({
            "dataset": e.dataset,
            "subject": e.subject,
            "sentence_id": e.sentence_id,
            "position": e.position,
            "word": e.word,
            "measure": repr(float(e.measure)),
            "baseline": repr(float(e.baseline)) if eeg and e.baseline is not None else "",
            "artifact": int(e.artifact) if eeg else "",
        })
    pd.DataFrame(rows, columns=READING_DATA_COLUMNS).to_csv(path, index=False, lineterminator="\n")
