"""
語彙の構築・文フィルタ・TSV入出力
"""

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Set, Tuple, Union

from config import (SPECIAL_TOKENS, BOS_ID, EOS_ID, UNK_ID, MAX_SENTENCE_LENGTH)
from core.exceptions import CorpusError
from corpus.tokenizer import Token, is_valid_token


@dataclass(frozen=True)
class Vocabulary:
    """単語 ↔ ID の対応（特殊トークンが先頭3つのIDを占める）"""
    entries: Tuple[Tuple[str, int], ...]
    word_to_id: Dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mapping = {token: i for i, token in enumerate(SPECIAL_TOKENS)}
        for word, _ in self.entries:
            if word in mapping:
                raise CorpusError(f"duplicate vocabulary word: {word}", details={"word": word})
            if not is_valid_token(word):
                raise CorpusError(f"invalid vocabulary word: {word}", details={"word": word})
            mapping[word] = len(mapping)
        object.__setattr__(self, "word_to_id", mapping)
        object.__setattr__(self, "_id_to_word", list(mapping))

    @property
    def specials(self) -> Dict[str, int]:
        return {"BOS": BOS_ID, "EOS": EOS_ID, "UNK": UNK_ID}

    @property
    def n_words(self) -> int:
        """特殊トークンを除いた語数 V_words"""
        return len(self.entries)

    def __len__(self) -> int:
        """V_total = V_words + 3"""
        return len(self.word_to_id)

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word_of(self, token_id: int) -> str:
        return self._id_to_word[token_id]

    def contains_word(self, word: str) -> bool:
        """特殊トークン以外の語彙に含まれるか"""
        token_id = self.word_to_id.get(word)
        return token_id is not None and token_id >= len(SPECIAL_TOKENS)

    def to_dict(self) -> Dict[str, int]:
        return {"n_words": self.n_words, "v_total": len(self)}


@dataclass(frozen=True)
class SentenceCorpus:
    """語彙内の単語のみから成る学習文の集合（ID列）"""
    sentences: Tuple[Tuple[int, ...], ...]
    max_len: int

    def __len__(self) -> int:
        return len(self.sentences)


def _as_text(token: Union[str, Token]) -> str:
    return token.text if isinstance(token, Token) else token


def build_vocabulary(training_corpus: Iterable[Sequence[Union[str, Token]]],
                     test_words: Iterable[str], n_top: int) -> Vocabulary:
    """
    学習コーパスの頻出上位 n_top 語とテスト刺激の語から語彙を構築

    頻度が同じ場合は辞書順で順位を決める。

    Args:
        training_corpus: トークン列のストリーム
        test_words: テスト刺激に現れる語の集合
        n_top: 採用する頻出語の数

    Returns:
        語彙
    """
    if n_top < 1:
        raise CorpusError(f"n_top must be >= 1, got {n_top}")
    counts: Counter = Counter()
    for sentence in training_corpus:
        counts.update(t for t in map(_as_text, sentence) if is_valid_token(t))
    if not counts:
        raise CorpusError("training corpus contains no valid tokens")

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    top = ranked[:n_top]
    selected: Set[str] = {word for word, _ in top}
    additions = sorted(
        ((w, counts.get(w, 0)) for w in set(test_words) if w not in selected and is_valid_token(w)),
        key=lambda item: (-item[1], item[0]))
    return Vocabulary(entries=tuple(top) + tuple(additions))


def filter_sentences(raw_sentences: Iterable[Sequence[Union[str, Token]]], vocab: Vocabulary,
                     max_len: int = MAX_SENTENCE_LENGTH) -> SentenceCorpus:
    """語彙内の単語のみから成り、長さが max_len 以下の文だけを残す"""
    kept: List[Tuple[int, ...]] = []
    for sentence in raw_sentences:
        words = [_as_text(t) for t in sentence]
        if not words or len(words) > max_len:
            continue
        if all(vocab.contains_word(w) for w in words):
            kept.append(tuple(vocab.word_to_id[w] for w in words))
    return SentenceCorpus(sentences=tuple(kept), max_len=max_len)


def corpus_statistics(corpus: SentenceCorpus) -> Dict[str, float]:
    """文数・トークン数・平均文長・最大文長"""
    lengths = [len(s) for s in corpus.sentences]
    n_tokens = sum(lengths)
    return {
        "sentences": len(lengths),
        "tokens": n_tokens,
        "mean_length": n_tokens / len(lengths) if lengths else 0.0,
        "max_length": max(lengths) if lengths else 0,
    }


def write_vocabulary(vocab: Vocabulary, path: Union[str, Path]):
    """TSV `word<TAB>frequency` 形式で保存（頻度降順）"""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        for word, freq in vocab.entries:
            writer.writerow([word, freq])


def read_vocabulary(path: Union[str, Path]) -> Vocabulary:
    """TSVから語彙を読み込み"""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"vocabulary file not found: {path}", details={"path": str(path)})
    entries = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].isdigit():
                raise CorpusError(f"malformed vocabulary row at line {line_no}",
                                  details={"path": str(path), "line": line_no})
            entries.append((parts[0], int(parts[1])))
    return Vocabulary(entries=tuple(entries))


def write_corpus(corpus: SentenceCorpus, vocab: Vocabulary, path: Union[str, Path]):
    """フィルタ済みコーパスを1行1文で保存"""
    with open(path, "w", encoding="utf-8") as f:
        for sentence in corpus.sentences:
            f.write(" ".join(vocab.word_of(i) for i in sentence) + "\n")


def read_corpus(path: Union[str, Path], vocab: Vocabulary, max_len: int = MAX_SENTENCE_LENGTH) -> SentenceCorpus:
    """保存済みコーパスを読み込み、語彙で再フィルタする"""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}", details={"path": str(path)})
    with open(path, encoding="utf-8") as f:
        return filter_sentences((line.split() for line in f), vocab, max_len)
