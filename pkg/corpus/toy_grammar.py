"""
デスク規模の検証用トイコーパス生成（確率文法による決定的生成）
"""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from corpus.tokenizer import normalize_stimulus_word

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

_DETERMINERS = ["the", "a", "this", "every", "some"]
_PREPOSITIONS = ["with", "near", "under", "behind", "for"]
_FUNCTION_WORDS = ["that", "and", "when", "very", "not", "she", "he", "they", "it's", "don't"]


@dataclass
class ToyCorpus:
    """トイコーパス一式"""
    corpus_lines: List[str]
    stimuli: List[Tuple[int, str]]
    norms: Dict[str, float]


class ToyGrammar:
    """品詞ごとにZipf分布を持つ小さな確率文法"""

    def __init__(self, seed: int, n_nouns: int = 900, n_verbs: int = 500,
                 n_adjectives: int = 400, n_adverbs: int = 150):
        self.rng = np.random.default_rng(seed)
        used = set(_DETERMINERS + _PREPOSITIONS + _FUNCTION_WORDS)
        self.nouns = self._make_words(n_nouns, used)
        self.verbs_t = self._make_words(n_verbs // 2, used)
        self.verbs_i = self._make_words(n_verbs - n_verbs // 2, used)
        self.adjectives = self._make_words(n_adjectives, used, suffix="y")
        self.adverbs = self._make_words(n_adverbs, used, suffix="ly")
        # 他動詞ごとに好む名詞の帯域（意味的な共起を作る）
        self.object_band = self.rng.integers(0, max(1, n_nouns - 50), size=len(self.verbs_t))

    def _make_words(self, n: int, used: set, suffix: str = "") -> List[str]:
        words = []
        while len(words) < n:
            n_syllables = int(self.rng.integers(1, 4))
            word = "".join(self._syllable() for _ in range(n_syllables)) + suffix
            if n_syllables == 1 and self.rng.random() < 0.5:
                word += "-" + self._syllable()
            if word not in used:
                used.add(word)
                words.append(word)
        return words

    def _syllable(self) -> str:
        return _CONSONANTS[int(self.rng.integers(len(_CONSONANTS)))] + _VOWELS[int(self.rng.integers(len(_VOWELS)))]

    def _zipf(self, items: List[str]) -> str:
        ranks = np.arange(1, len(items) + 1)
        p = 1.0 / (ranks + 2.7)
        return items[int(self.rng.choice(len(items), p=p / p.sum()))]

    def noun_phrase(self, depth: int = 0, band: int = None) -> List[str]:
        words = [self._zipf(_DETERMINERS)]
        if self.rng.random() < 0.35:
            if self.rng.random() < 0.2:
                words.append("very")
            words.append(self._zipf(self.adjectives))
        if band is not None and self.rng.random() < 0.7:
            words.append(self.nouns[band + int(self.rng.integers(0, 50))])
        else:
            words.append(self._zipf(self.nouns))
        if depth < 1 and self.rng.random() < 0.15:
            words += ["that"] + self.verb_phrase(depth + 1)
        return words

    def verb_phrase(self, depth: int = 0) -> List[str]:
        if self.rng.random() < 0.6:
            i = int(self.rng.choice(len(self.verbs_t), p=self._verb_p(len(self.verbs_t))))
            words = [self.verbs_t[i]] + self.noun_phrase(depth + 1, band=int(self.object_band[i]))
            if self.rng.random() < 0.25:
                words += [self._zipf(_PREPOSITIONS)] + self.noun_phrase(depth + 1)
            return words
        words = [self._zipf(self.verbs_i)]
        if self.rng.random() < 0.4:
            words.append(self._zipf(self.adverbs))
        return words

    @staticmethod
    def _verb_p(n: int) -> np.ndarray:
        p = 1.0 / (np.arange(1, n + 1) + 2.7)
        return p / p.sum()

    def subject(self) -> List[str]:
        if self.rng.random() < 0.15:
            return [self._zipf(["she", "he", "they"])]
        return self.noun_phrase()

    def sentence(self, with_comma: bool = False) -> List[str]:
        """1文を生成（with_comma の場合は従属節の後にカンマを置く）"""
        words: List[str] = []
        if with_comma:
            clause = ["when"] + self.subject() + [self._zipf(self.verbs_i)]
            clause[-1] = clause[-1] + ","
            words += clause
        words += self.subject()
        if self.rng.random() < 0.1:
            words.append("don't" if words[-1] in ("she", "he", "they") else "not")
        words += self.verb_phrase()
        if not with_comma and self.rng.random() < 0.1:
            words += ["and"] + self.verb_phrase()
        return words


def generate_toy_corpus(seed: int, n_sentences: int, n_stimuli: int = 120,
                        max_len: int = 39, numeral_rate: float = 0.02) -> ToyCorpus:
    """
    学習用コーパス・テスト刺激・頻度ノルムを決定的に生成

    Args:
        seed: 乱数シード
        n_sentences: 学習文の数
        n_stimuli: テスト刺激文の数
        max_len: 刺激文の最大語数
        numeral_rate: 数字トークンを混ぜる文の割合（フィルタ処理の確認用）

    Returns:
        トイコーパス一式
    """
    grammar = ToyGrammar(seed)
    lines: List[str] = []
    counts: Counter = Counter()
    while len(lines) < n_sentences:
        words = grammar.sentence(with_comma=False)
        if grammar.rng.random() < numeral_rate:
            words.insert(int(grammar.rng.integers(0, len(words) + 1)), str(int(grammar.rng.integers(2, 99))))
        counts.update(words)
        lines.append(" ".join(words))

    stimuli: List[Tuple[int, str]] = []
    while len(stimuli) < n_stimuli:
        words = grammar.sentence(with_comma=grammar.rng.random() < 0.3)
        if not 4 <= len(words) <= max_len:
            continue
        text = " ".join(words)
        stimuli.append((len(stimuli) + 1, text[0].upper() + text[1:] + "."))

    total = sum(counts.values())
    norms = {w: c * 1e6 / total for w, c in counts.items() if not any(ch.isdigit() for ch in w)}
    for _, text in stimuli:
        for raw in text.split():
            word = normalize_stimulus_word(raw)
            norms.setdefault(word, 0.5)
    return ToyCorpus(corpus_lines=lines, stimuli=stimuli, norms=norms)
