"""
トークナイザ - 空白区切り・小文字化・トークン妥当性判定
"""

from typing import List, NamedTuple

from config import TOKEN_ALLOWED_PUNCTUATION


class Token(NamedTuple):
    """トークン文字列と妥当性フラグ"""
    text: str
    valid: bool


def is_valid_token(token: str) -> bool:
    """文字・ハイフン・アポストロフィのみから成り、文字を1つ以上含むか"""
    if not token:
        return False
    has_letter = False
    for ch in token:
        if ch.isalpha():
            has_letter = True
        elif ch not in TOKEN_ALLOWED_PUNCTUATION:
            return False
    return has_letter


def tokenize_line(text: str) -> List[Token]:
    """
    1行を空白で分割して小文字化し、各トークンの妥当性を判定

    数字や句読点を含むトークンは除去せず invalid として印を付ける。
    "don't" のような短縮形は1トークンのまま扱う。

    Args:
        text: UTF-8の1行

    Returns:
        トークンのリスト（空行なら空リスト）
    """
    return [Token(raw.lower(), is_valid_token(raw.lower())) for raw in text.split()]


def normalize_stimulus_word(raw: str) -> str:
    """提示された刺激語から前後の句読点を除き小文字化（"said," → "said"）"""
    stripped = raw.strip()
    start, end = 0, len(stripped)
    while start < end and not (stripped[start].isalpha() or stripped[start] in TOKEN_ALLOWED_PUNCTUATION):
        start += 1
    while end > start and not (stripped[end - 1].isalpha() or stripped[end - 1] in TOKEN_ALLOWED_PUNCTUATION):
        end -= 1
    return stripped[start:end].lower()


def ends_with_comma(raw: str) -> bool:
    """提示語の直後にカンマがあるか"""
    return raw.rstrip().endswith(",")
