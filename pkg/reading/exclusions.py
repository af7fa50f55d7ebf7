"""
分析対象から除外するイベントの判定
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

from config import READING_TIME_MAX_MS, READING_TIME_MIN_MS
from corpus.tokenizer import ends_with_comma
from reading.datasets import ReadingEvent


class SentenceLayout:
    """文ごとの語の並び（最終位置とカンマ位置の判定用）"""

    def __init__(self, events: Sequence[ReadingEvent]):
        self.words: Dict[Tuple[str, int, int], str] = {}
        self.final_position: Dict[Tuple[str, int], int] = {}
        for e in events:
            self.words.setdefault((e.dataset, e.sentence_id, e.position), e.word)
            key = (e.dataset, e.sentence_id)
            self.final_position[key] = max(self.final_position.get(key, 0), e.position)

    def word_at(self, event: ReadingEvent, offset: int = 0) -> Optional[str]:
        return self.words.get((event.dataset, event.sentence_id, event.position + offset))

    def is_final(self, event: ReadingEvent) -> bool:
        return event.position == self.final_position[(event.dataset, event.sentence_id)]


ExclusionRule = Callable[[ReadingEvent, SentenceLayout], bool]


def sentence_initial(event: ReadingEvent, layout: SentenceLayout) -> bool:
    return event.position == 1


def sentence_final(event: ReadingEvent, layout: SentenceLayout) -> bool:
    return layout.is_final(event)


def followed_by_comma(event: ReadingEvent, layout: SentenceLayout) -> bool:
    """提示語の直後にカンマがある語"""
    return ends_with_comma(event.word)


def after_comma(event: ReadingEvent, layout: SentenceLayout) -> bool:
    """カンマ直後の語（SPR/ETのみ）"""
    if event.dataset == "EEG":
        return False
    previous = layout.word_at(event, -1)
    return previous is not None and ends_with_comma(previous)


def reading_time_out_of_range(event: ReadingEvent, layout: SentenceLayout) -> bool:
    """50ms未満または3500ms超の読み時間（SPR/ETのみ）"""
    if event.dataset == "EEG":
        return False
    return event.measure < READING_TIME_MIN_MS or event.measure > READING_TIME_MAX_MS


def eeg_artifact(event: ReadingEvent, layout: SentenceLayout) -> bool:
    return event.dataset == "EEG" and event.artifact


EXCLUSION_RULES: Dict[str, ExclusionRule] = {
    "sentence_initial": sentence_initial,
    "sentence_final": sentence_final,
    "followed_by_comma": followed_by_comma,
    "after_comma": after_comma,
    "reading_time_out_of_range": reading_time_out_of_range,
    "eeg_artifact": eeg_artifact,
}


def exclusion_counts(events: Sequence[ReadingEvent]) -> Dict[str, int]:
    """規則ごとの該当イベント数（重複あり）"""
    layout = SentenceLayout(events)
    return {name: sum(1 for e in events if rule(e, layout)) for name, rule in EXCLUSION_RULES.items()}


def apply_exclusions(events: Sequence[ReadingEvent], rules: Optional[Sequence[str]] = None) -> List[ReadingEvent]:
    """
    除外規則に該当しないイベントだけを残す

    Args:
        events: 1データセット分のイベント（文の境界判定のため未フィルタのもの）
        rules: 適用する規則名（省略時は全規則）

    Returns:
        分析対象のイベント
    """
    active = [EXCLUSION_RULES[name] for name in (rules if rules is not None else EXCLUSION_RULES)]
    layout = SentenceLayout(events)
    return [e for e in events if not any(rule(e, layout) for rule in active)]
