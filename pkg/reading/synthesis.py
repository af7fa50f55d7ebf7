"""
合成読解データの生成（既知のサプライザル効果を持つSPR / ET / EEG）
"""

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import (DATASET_KINDS, JSON_INDENT_LEVEL, SYNTH_ARTIFACT_RATE, SYNTH_ITEM_SD, SYNTH_NOISE_SD,
                    SYNTH_SHARED_FRACTION, SYNTH_SUBJECT_SD, SYNTH_SUBJECTS_EEG, SYNTH_SUBJECTS_ET,
                    SYNTH_SUBJECTS_SPR, SYNTH_SURPRISAL_EFFECT)
from core.exceptions import ReadingDataError
from corpus.tokenizer import normalize_stimulus_word
from reading.datasets import ReadingEvent
from reading.predictors import FrequencyNorms

# 測定値のスケール（従属変数のSD単位 → 実測スケール）
_LOG_RT_CENTER = {"SPR": float(np.log(320.0)), "ET": float(np.log(230.0))}
_LOG_RT_SCALE = 0.25
_N400_SCALE_UV = 2.0
_BASELINE_SD_UV = 1.5
_BASELINE_WEIGHT = 0.3


def _default_subjects() -> Dict[str, int]:
    return {"SPR": SYNTH_SUBJECTS_SPR, "ET": SYNTH_SUBJECTS_ET, "EEG": SYNTH_SUBJECTS_EEG}


def _default_coefficients() -> Dict[str, float]:
    return {"log_freq": -0.2, "length": 0.15, "position": -0.05}


@dataclass(frozen=True)
class SynthesisParams:
    """生成モデルのパラメータ（従属変数のSD単位）"""
    seed: int
    surprisal_effect: float = SYNTH_SURPRISAL_EFFECT
    noise_sd: float = SYNTH_NOISE_SD
    subject_sd: float = SYNTH_SUBJECT_SD
    item_sd: float = SYNTH_ITEM_SD
    artifact_rate: float = SYNTH_ARTIFACT_RATE
    shared_fraction: float = SYNTH_SHARED_FRACTION
    subjects: Dict[str, int] = field(default_factory=_default_subjects)
    coefficients: Dict[str, float] = field(default_factory=_default_coefficients)

    def to_dict(self) -> Dict:
        return asdict(self)


def select_shared_stimuli(stimuli: Sequence[Tuple[int, str]], fraction: float) -> List[int]:
    """語数の少ない順に fraction の割合の刺激文を選ぶ（同数ならID順）"""
    if not 0 < fraction <= 1:
        raise ReadingDataError(f"shared fraction must be in (0, 1], got {fraction}")
    ranked = sorted(stimuli, key=lambda s: (len(s[1].split()), s[0]))
    n = max(1, int(round(fraction * len(ranked))))
    return sorted(int(sid) for sid, _ in ranked[:n])


def unigram_surprisal(stimuli: Sequence[Tuple[int, str]], norms: FrequencyNorms) -> pd.DataFrame:
    """頻度ノルムから求めたユニグラムのサプライザル（チェックポイントがない場合の代替）"""
    rows = []
    for sentence_id, text in stimuli:
        for position, raw in enumerate(text.split(), start=1):
            word = normalize_stimulus_word(raw)
            rows.append((int(sentence_id), position, word, -float(np.log(norms.per_million[word] / 1e6))))
    return pd.DataFrame(rows, columns=["sentence_id", "position", "word", "surprisal"])


def _zscore(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    return (values - values.mean()) / sd if sd > 0 else np.zeros_like(values)


def _word_table(stimuli: Sequence[Tuple[int, str]], norms: FrequencyNorms,
                true_surprisal: pd.DataFrame, coefficients: Dict[str, float], effect: float) -> pd.DataFrame:
    rows = []
    for sentence_id, text in stimuli:
        for position, raw in enumerate(text.split(), start=1):
            word = normalize_stimulus_word(raw)
            rows.append({"sentence_id": int(sentence_id), "position": position, "raw": raw,
                         "log_freq": float(np.log(norms.per_million[word] + 1.0)),
                         "length": float(len(word))})
    table = pd.DataFrame(rows)
    merged = table.merge(true_surprisal[["sentence_id", "position", "surprisal"]],
                         on=["sentence_id", "position"], how="left")
    if merged["surprisal"].isna().any():
        raise ReadingDataError("true surprisal does not cover every stimulus word")
    fixed = np.zeros(len(merged))
    for name, coef in coefficients.items():
        fixed += coef * _zscore(merged[name].to_numpy(dtype=float))
    merged["fixed"] = fixed + effect * _zscore(merged["surprisal"].to_numpy(dtype=float))
    return merged


def synthesize_datasets(stimuli: Sequence[Tuple[int, str]], norms: FrequencyNorms, true_surprisal: pd.DataFrame,
                        params: SynthesisParams,
                        kinds: Sequence[str] = DATASET_KINDS) -> Tuple[Dict[str, List[ReadingEvent]], Dict]:
    """
    既知の生成モデルから読解データを作る

    従属変数 = 標準化した予測変数の線形結合 + γ·サプライザル + 被験者・項目の切片 + ノイズ。
    ET/EEGは語数の少ない刺激文の部分集合だけを使う。

    Args:
        stimuli: (sentence_id, 提示文) の列
        norms: 頻度ノルム
        true_surprisal: 生成に使う (sentence_id, position, surprisal) の表
        params: 生成パラメータ
        kinds: 生成するデータセット

    Returns:
        (データセット名 → イベント列, サイドカー用のパラメータ記録)
    """
    words = _word_table(stimuli, norms, true_surprisal, params.coefficients, params.surprisal_effect)
    shared = select_shared_stimuli(stimuli, params.shared_fraction)
    shared_set = set(shared)
    item_rng = np.random.default_rng([params.seed, 0])
    item_effect = item_rng.normal(0.0, params.item_sd, size=len(words))

    datasets: Dict[str, List[ReadingEvent]] = {}
    for index, kind in enumerate(DATASET_KINDS):
        if kind not in kinds:
            continue
        rng = np.random.default_rng([params.seed, index + 1])
        rows = words if kind == "SPR" else words[words["sentence_id"].isin(shared_set)]
        item = item_effect[rows.index.to_numpy()]
        fixed = rows["fixed"].to_numpy()
        events: List[ReadingEvent] = []
        for s in range(params.subjects[kind]):
            subject = f"{kind.lower()}{s + 1:02d}"
            dep = fixed + item + rng.normal(0.0, params.subject_sd) + rng.normal(0.0, params.noise_sd, size=len(rows))
            if kind == "EEG":
                baseline = rng.normal(0.0, _BASELINE_SD_UV, size=len(rows))
                measure = _N400_SCALE_UV * dep + _BASELINE_WEIGHT * baseline
                artifact = rng.random(len(rows)) < params.artifact_rate
            else:
                measure = np.exp(_LOG_RT_CENTER[kind] + _LOG_RT_SCALE * dep)
            for i, (sid, pos, raw) in enumerate(rows[["sentence_id", "position", "raw"]].itertuples(index=False)):
                events.append(ReadingEvent(
                    dataset=kind, subject=subject, sentence_id=int(sid), position=int(pos), word=raw,
                    measure=float(measure[i]),
                    baseline=float(baseline[i]) if kind == "EEG" else None,
                    artifact=bool(artifact[i]) if kind == "EEG" else False))
        datasets[kind] = events

    sidecar = {
        "params": params.to_dict(),
        "shared_sentence_ids": shared,
        "n_events": {k: len(v) for k, v in datasets.items()},
        "measure_scale": {"log_rt_center": _LOG_RT_CENTER, "log_rt_scale": _LOG_RT_SCALE,
                          "n400_scale_uv": _N400_SCALE_UV, "baseline_sd_uv": _BASELINE_SD_UV,
                          "baseline_weight": _BASELINE_WEIGHT},
    }
    return datasets, sidecar


def write_sidecar(sidecar: Dict, path: Union[str, Path]):
    """生成パラメータをJSONで保存"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, ensure_ascii=False, indent=JSON_INDENT_LEVEL, sort_keys=True)
        f.write("\n")
