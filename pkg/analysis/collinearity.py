"""
多重共線性のチェック（VIFと相関係数）
"""

import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd
from statsmodels.stats.outliers_influence import variance_inflation_factor

from config import CORRELATION_THRESHOLD, VIF_THRESHOLD
from core.exceptions import InputDataError

# これを超えるVIFは完全な共線性として扱う
_VIF_INFINITE = 1e12


@dataclass
class CollinearityReport:
    """VIFと相関の検査結果"""
    vif: Dict[str, float]
    correlations: pd.DataFrame = field(repr=False)
    flagged_vif: List[str] = field(default_factory=list)
    flagged_pairs: List[Tuple[str, str, float]] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.flagged_vif or self.flagged_pairs)

    @property
    def max_vif(self) -> float:
        return max(self.vif.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vif": self.vif,
            "flagged_vif": self.flagged_vif,
            "flagged_pairs": [list(p) for p in self.flagged_pairs],
        }


def collinearity_check(columns: Union[pd.DataFrame, np.ndarray], names: List[str] = None,
                       vif_threshold: float = VIF_THRESHOLD,
                       correlation_threshold: float = CORRELATION_THRESHOLD) -> CollinearityReport:
    """
    各列のVIF（他の列への回帰の 1/(1−R²)）と2列間の相関を計算

    Args:
        columns: 主効果とサプライザルの列（切片は含めない）
        names: ndarray を渡す場合の列名
        vif_threshold: VIFの警告しきい値
        correlation_threshold: |r| の警告しきい値

    Returns:
        検査結果（完全な共線性の列のVIFは +inf）
    """
    if isinstance(columns, pd.DataFrame):
        frame = columns.astype(float)
    else:
        values = np.asarray(columns, dtype=float)
        names = names or [f"x{i}" for i in range(values.shape[1])]
        frame = pd.DataFrame(values, columns=names)
    if frame.shape[1] < 3:
        raise InputDataError(f"collinearity check needs at least 3 columns, got {frame.shape[1]}",
                             details={"columns": list(frame.columns)})

    exog = frame.copy()
    exog["const"] = 1.0
    vif: Dict[str, float] = {}
    with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
        warnings.simplefilter("ignore", RuntimeWarning)
        for i, name in enumerate(frame.columns):
            value = float(variance_inflation_factor(exog.values, i))
            if not np.isfinite(value) or value > _VIF_INFINITE:
                value = float("inf")
            vif[name] = value

    correlations = frame.corr()
    pairs = []
    labels = list(frame.columns)
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            r = float(correlations.loc[a, b])
            if abs(r) > correlation_threshold:
                pairs.append((a, b, r))
    return CollinearityReport(vif=vif, correlations=correlations,
                              flagged_vif=[n for n, v in vif.items() if v > vif_threshold],
                              flagged_pairs=pairs)
