"""
GAMの結果の図（散布図・平滑化曲線・差分曲線）とCSVの出力
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import matplotlib

matplotlib.use("Agg")
# SVG内のidを実行ごとに同じにする
matplotlib.rcParams["svg.hashsalt"] = "surprisal-workbench"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from analysis.gam import DifferenceCurve, GamFit  # noqa: E402
from config import FIGURE_FORMAT, FLOAT_FORMAT, GAM_GRID_SIZE  # noqa: E402
from core.exceptions import InputDataError  # noqa: E402

SERIES_COLUMNS = ["x", "estimate", "se", "lo", "hi", "significant"]


@dataclass
class PanelReport:
    """出力したファイルと差分パネルの有意区間の目盛り数"""
    files: List[Path] = field(default_factory=list)
    ticks: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {"files": [str(p) for p in self.files], "ticks": self.ticks}


def _write_series(frame: pd.DataFrame, path: Path, report: PanelReport):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    report.files.append(path)


def _save(fig, path: Path, report: PanelReport):
    # SVGのメタデータから日時を除いて出力を再現可能にする
    fig.savefig(path, format=FIGURE_FORMAT, metadata={"Date": None})
    plt.close(fig)
    report.files.append(path)


def smooth_series(fit: GamFit, level: str, grid_size: int = GAM_GRID_SIZE) -> pd.DataFrame:
    """レベルの予測曲線（切片込み）と信頼区間"""
    lo, hi = fit.smooths[level].x_range
    x = np.linspace(lo, hi, grid_size)
    estimate, se = fit.predict(level, x)
    z = fit.spec.z
    return pd.DataFrame({"x": x, "estimate": estimate, "se": se, "lo": estimate - z * se,
                         "hi": estimate + z * se, "significant": np.abs(estimate) > z * se})


def _pair_name(curve: DifferenceCurve) -> str:
    return f"{curve.level_a}_vs_{curve.level_b}"


def emit_panels(results: Dict[str, Tuple[GamFit, List[DifferenceCurve]]],
                out_dir: Union[str, Path]) -> PanelReport:
    """
    データセットごとに3枚の図と、図に描いた全系列のCSVを出力

    Args:
        results: データセット名 → (GAMの推定結果, 差分曲線の一覧)
        out_dir: 出力ディレクトリ

    Returns:
        出力ファイルの一覧
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        marker = out_dir / ".write_test"
        marker.write_text("")
        marker.unlink()
    except OSError as e:
        raise InputDataError(f"cannot write panels to {out_dir}", details={"path": str(out_dir)},
                             original_error=e)

    report = PanelReport()
    for dataset in sorted(results):
        fit, curves = results[dataset]
        data = fit.data
        spec = fit.spec

        # 散布図
        _write_series(data.sort_values([spec.factor, spec.random, spec.covariate]).reset_index(drop=True),
                      out_dir / f"{dataset}_points.csv", report)
        fig, ax = plt.subplots(figsize=(5, 4))
        for level in fit.levels:
            rows = data[data[spec.factor] == level]
            ax.scatter(rows[spec.covariate], rows[spec.response], s=12, alpha=0.7, label=level)
        ax.set_xlabel(spec.covariate)
        ax.set_ylabel(spec.response)
        ax.set_title(f"{dataset}: goodness of fit")
        ax.legend(fontsize=8)
        _save(fig, out_dir / f"{dataset}_scatter.{FIGURE_FORMAT}", report)

        # 平滑化曲線と信頼区間
        fig, ax = plt.subplots(figsize=(5, 4))
        for level in fit.levels:
            series = smooth_series(fit, level)
            _write_series(series[SERIES_COLUMNS], out_dir / f"{dataset}_smooth_{level}.csv", report)
            line, = ax.plot(series["x"], series["estimate"], label=level)
            ax.fill_between(series["x"], series["lo"], series["hi"], color=line.get_color(), alpha=0.2)
        ax.set_xlabel(spec.covariate)
        ax.set_ylabel(f"fitted {spec.response}")
        ax.set_title(f"{dataset}: smooths ({int(spec.ci_level * 100)}% CI)")
        ax.legend(fontsize=8)
        _save(fig, out_dir / f"{dataset}_smooths.{FIGURE_FORMAT}", report)

        # 差分曲線（有意区間はx軸上の目盛り）
        report.ticks[dataset] = {}
        if not curves:
            continue
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.axhline(0.0, color="grey", linewidth=0.8)
        floor = min(float(c.lo.min()) for c in curves)
        for curve in curves:
            _write_series(curve.to_frame()[SERIES_COLUMNS], out_dir / f"{dataset}_diff_{_pair_name(curve)}.csv",
                          report)
            line, = ax.plot(curve.x, curve.estimate, label=curve.label)
            ax.fill_between(curve.x, curve.lo, curve.hi, color=line.get_color(), alpha=0.15)
            marked = curve.x[curve.significant]
            if len(marked):
                ax.plot(marked, np.full(len(marked), floor), linestyle="none", marker="|",
                        color=line.get_color(), markersize=8)
            report.ticks[dataset][curve.label] = int(len(marked))
        ax.set_xlabel(spec.covariate)
        ax.set_ylabel(f"difference in {spec.response}")
        ax.set_title(f"{dataset}: differences")
        ax.legend(fontsize=8)
        _save(fig, out_dir / f"{dataset}_differences.{FIGURE_FORMAT}", report)
    return report
