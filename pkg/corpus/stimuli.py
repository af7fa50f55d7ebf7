"""
テスト刺激文のTSV入出力（`sentence_id<TAB>提示文`）
"""

from pathlib import Path
from typing import List, Sequence, Set, Tuple, Union

from core.exceptions import CorpusError
from corpus.tokenizer import normalize_stimulus_word

Stimulus = Tuple[int, str]


def read_stimuli(path: Union[str, Path]) -> List[Stimulus]:
    """刺激文を読み込み（IDの重複はエラー）"""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"stimuli file not found: {path}", details={"path": str(path)})
    stimuli: List[Stimulus] = []
    seen: Set[int] = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip().isdigit() or not parts[1].strip():
                raise CorpusError(f"{path}:{line_no}: malformed stimulus row",
                                  details={"path": str(path), "line": line_no})
            sentence_id = int(parts[0])
            if sentence_id in seen:
                raise CorpusError(f"{path}:{line_no}: duplicate sentence id {sentence_id}",
                                  details={"path": str(path), "line": line_no})
            seen.add(sentence_id)
            stimuli.append((sentence_id, parts[1].strip()))
    if not stimuli:
        raise CorpusError(f"stimuli file is empty: {path}", details={"path": str(path)})
    return stimuli


def write_stimuli(stimuli: Sequence[Stimulus], path: Union[str, Path]):
    with open(path, "w", encoding="utf-8") as f:
        for sentence_id, text in stimuli:
            f.write(f"{int(sentence_id)}\t{text}\n")


def stimulus_words(stimuli: Sequence[Stimulus]) -> Set[str]:
    """語彙に追加するテスト刺激の語（句読点を除いた形）"""
    return {normalize_stimulus_word(raw) for _, text in stimuli for raw in text.split()}
