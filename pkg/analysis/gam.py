"""
一般化加法モデル（LM種別ごとの平滑化 + 反復の変量切片）と差分平滑化
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.stats import norm

from config import (GAM_BASIS_SIZE, GAM_CI_LEVEL, GAM_GRID_SIZE, GAM_LAMBDA_GRID, GAM_MAX_CYCLES,
                    GAM_REFINE_POINTS)
from core.exceptions import ConfigurationError, FitError, InputDataError
from training.trainer import tag_sort_key

REPETITION_PENALTY = "repetition"


@dataclass(frozen=True)
class GamSpec:
    """GAMの構成"""
    response: str = "gof"
    covariate: str = "avg_log_prob"
    factor: str = "lm_type"
    random: str = "seed"
    k: int = GAM_BASIS_SIZE
    ci_level: float = GAM_CI_LEVEL
    lambdas: Optional[Dict[str, float]] = None  # 固定する平滑化パラメータ（GCV探索を省略）

    def __post_init__(self):
        if self.k < 4:
            raise ConfigurationError(f"basis size k must be >= 4, got {self.k}")
        if not 0 < self.ci_level < 1:
            raise ConfigurationError(f"ci_level must be in (0, 1), got {self.ci_level}")

    @property
    def z(self) -> float:
        """両側信頼区間の臨界値"""
        return float(norm.ppf(1.0 - (1.0 - self.ci_level) / 2.0))


class CubicRegressionSpline:
    """
    分位点にノットを置く3次回帰スプライン基底（ノット上の値がパラメータ）

    2階微分の二乗積分を罰則とし、データ点での和が0になる制約で再パラメータ化する。
    """

    def __init__(self, x: np.ndarray, k: int):
        unique = np.unique(x)
        self.knots = np.quantile(unique, np.linspace(0.0, 1.0, k))
        h = np.diff(self.knots)
        D = np.zeros((k - 2, k))
        B = np.zeros((k - 2, k - 2))
        for i in range(k - 2):
            D[i, i] = 1.0 / h[i]
            D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
            D[i, i + 2] = 1.0 / h[i + 1]
            B[i, i] = (h[i] + h[i + 1]) / 3.0
            if i + 1 < k - 2:
                B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
        binv_d = scipy.linalg.solve(B, D, assume_a="pos")
        self.F = np.vstack([np.zeros(k), binv_d, np.zeros(k)])  # ノット上の2階微分 = F β
        self.S = D.T @ binv_d
        raw = self.raw_basis(x)
        # 和0制約の零空間
        q, _ = np.linalg.qr(raw.sum(axis=0).reshape(-1, 1), mode="complete")
        self.null = q[:, 1:]
        self.penalty = self.null.T @ self.S @ self.null

    @property
    def x_range(self) -> Tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def raw_basis(self, x: np.ndarray) -> np.ndarray:
        knots = self.knots
        x = np.clip(np.asarray(x, dtype=float), knots[0], knots[-1])
        j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(knots) - 2)
        h = knots[j + 1] - knots[j]
        right = knots[j + 1] - x
        left = x - knots[j]
        a_minus, a_plus = right / h, left / h
        c_minus = (right ** 3 / h - h * right) / 6.0
        c_plus = (left ** 3 / h - h * left) / 6.0
        rows = np.arange(len(x))
        basis = c_minus[:, None] * self.F[j] + c_plus[:, None] * self.F[j + 1]
        basis[rows, j] += a_minus
        basis[rows, j + 1] += a_plus
        return basis

    def basis(self, x: np.ndarray) -> np.ndarray:
        """制約付き基底 [len(x) × (k−1)]"""
        return self.raw_basis(x) @ self.null


@dataclass
class GamFit:
    """GAMの推定結果"""
    spec: GamSpec
    levels: List[str]
    repetitions: List[str]
    smooths: Dict[str, CubicRegressionSpline]
    columns: Dict[str, slice]  # "intercept", "level:<name>", "smooth:<name>", "repetition"
    coef: np.ndarray
    Vb: np.ndarray
    lambdas: Dict[str, float]
    edf: Dict[str, float]
    sigma2: float
    gcv: float
    n: int
    data: pd.DataFrame = field(repr=False, default=None)

    def level_matrix(self, level: str, x: np.ndarray, include_intercept: bool = True) -> np.ndarray:
        """指定レベルの予測行列（反復の変量効果は含めない）"""
        if level not in self.smooths:
            raise FitError(f"level {level!r} not present in fit", details={"levels": self.levels})
        x = np.asarray(x, dtype=float)
        pmat = np.zeros((len(x), len(self.coef)))
        if include_intercept:
            pmat[:, self.columns["intercept"]] = 1.0
            key = f"level:{level}"
            if key in self.columns:
                pmat[:, self.columns[key]] = 1.0
        pmat[:, self.columns[f"smooth:{level}"]] = self.smooths[level].basis(x)
        return pmat

    def predict(self, level: str, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(予測値, 標準誤差)"""
        pmat = self.level_matrix(level, x)
        return pmat @ self.coef, np.sqrt(np.einsum("ij,jk,ik->i", pmat, self.Vb, pmat))

    def smooth_values(self, level: str, x: np.ndarray) -> np.ndarray:
        """中心化された平滑化項のみの値"""
        return self.level_matrix(level, x, include_intercept=False) @ self.coef

    def to_dict(self) -> Dict[str, Any]:
        return {
            "levels": self.levels,
            "repetitions": self.repetitions,
            "lambdas": self.lambdas,
            "edf": self.edf,
            "sigma2": self.sigma2,
            "gcv": self.gcv,
            "n": self.n,
        }


def _as_frame(spec: GamSpec, points: Union[pd.DataFrame, Sequence[Tuple[float, float, str, Any]]]) -> pd.DataFrame:
    if isinstance(points, pd.DataFrame):
        missing = [c for c in (spec.covariate, spec.response, spec.factor, spec.random) if c not in points.columns]
        if missing:
            raise InputDataError(f"GAM input lacks columns {missing}")
        frame = points[[spec.covariate, spec.response, spec.factor, spec.random]].copy()
    else:
        frame = pd.DataFrame(list(points), columns=[spec.covariate, spec.response, spec.factor, spec.random])
    frame[spec.factor] = frame[spec.factor].astype(str)
    frame[spec.random] = frame[spec.random].astype(str)
    return frame.reset_index(drop=True)


class _PenalizedProblem:
    """罰則付き最小二乗の構成要素"""

    def __init__(self, X: np.ndarray, y: np.ndarray, penalties: Dict[str, Tuple[slice, np.ndarray]]):
        self.X, self.y = X, y
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.n, self.p = X.shape
        # X'X と同程度の大きさになるように罰則行列を正規化
        self.penalties = {}
        for name, (cols, S) in penalties.items():
            block = self.XtX[cols, cols]
            scale = np.linalg.norm(block) / max(np.linalg.norm(S), 1e-300)
            full = np.zeros((self.p, self.p))
            full[cols, cols] = S * scale
            self.penalties[name] = full

    def solve(self, lambdas: Dict[str, float]) -> Dict[str, Any]:
        H = self.XtX.copy()
        for name, S in self.penalties.items():
            H += lambdas[name] * S
        try:
            factor = scipy.linalg.cho_factor(H)
            H_inv = scipy.linalg.cho_solve(factor, np.eye(self.p))
        except np.linalg.LinAlgError:
            H_inv = np.linalg.pinv(H)
        coef = H_inv @ self.Xty
        resid = self.y - self.X @ coef
        rss = float(resid @ resid)
        influence = H_inv @ self.XtX
        trace = float(np.trace(influence))
        denom = self.n - trace
        gcv = self.n * rss / denom ** 2 if denom > 0 else np.inf
        return {"coef": coef, "rss": rss, "H_inv": H_inv, "influence": influence, "trace": trace, "gcv": gcv}


def _search_lambdas(problem: _PenalizedProblem, names: List[str]) -> Dict[str, float]:
    """対数等間隔の格子で座標ごとにGCVを最小化し、最適点の周りで1回細分する"""
    lo, hi, points = GAM_LAMBDA_GRID
    grid = np.linspace(lo, hi, int(points))
    step = grid[1] - grid[0]
    log_lambda = {name: 0.0 for name in names}

    def score(name: str, value: float) -> float:
        trial = {k: 10.0 ** v for k, v in log_lambda.items()}
        trial[name] = 10.0 ** value
        return problem.solve(trial)["gcv"]

    for _ in range(GAM_MAX_CYCLES):
        changed = False
        for name in names:
            coarse = grid[int(np.argmin([score(name, v) for v in grid]))]
            fine = np.linspace(max(lo, coarse - step), min(hi, coarse + step), GAM_REFINE_POINTS)
            best = float(fine[int(np.argmin([score(name, v) for v in fine]))])
            if abs(best - log_lambda[name]) > 1e-12:
                changed = True
            log_lambda[name] = best
        if not changed:
            break
    return {name: 10.0 ** v for name, v in log_lambda.items()}


def fit_gam(spec: GamSpec, points: Union[pd.DataFrame, Sequence[Tuple[float, float, str, Any]]]) -> GamFit:
    """
    y = α + Σ_level (α_level + s_level(x)) + b_repetition + ε を当てはめる

    Args:
        spec: GAMの構成
        points: (共変量, 応答, LM種別, 反復) の表または列

    Returns:
        推定結果（事後共分散 = σ²(X'X + Σλ S)⁻¹）
    """
    frame = _as_frame(spec, points)
    if frame.empty:
        raise InputDataError("no points to fit a GAM to")
    x = frame[spec.covariate].to_numpy(dtype=float)
    y = frame[spec.response].to_numpy(dtype=float)
    levels = sorted(frame[spec.factor].unique())
    repetitions = sorted(frame[spec.random].unique())

    for level in levels:
        mask = frame[spec.factor].to_numpy() == level
        if mask.sum() < spec.k or len(np.unique(x[mask])) < spec.k:
            raise FitError(f"level {level!r} has fewer than k={spec.k} distinct points",
                           details={"level": level, "points": int(mask.sum()), "k": spec.k})

    blocks: List[np.ndarray] = [np.ones((len(x), 1))]
    columns: Dict[str, slice] = {"intercept": slice(0, 1)}
    offset = 1
    for level in levels[1:]:
        blocks.append((frame[spec.factor].to_numpy() == level).astype(float)[:, None])
        columns[f"level:{level}"] = slice(offset, offset + 1)
        offset += 1

    smooths: Dict[str, CubicRegressionSpline] = {}
    penalties: Dict[str, Tuple[slice, np.ndarray]] = {}
    for level in levels:
        mask = frame[spec.factor].to_numpy() == level
        smooth = CubicRegressionSpline(x[mask], spec.k)
        smooths[level] = smooth
        block = np.zeros((len(x), spec.k - 1))
        block[mask] = smooth.basis(x[mask])
        blocks.append(block)
        cols = slice(offset, offset + spec.k - 1)
        columns[f"smooth:{level}"] = cols
        penalties[level] = (cols, smooth.penalty)
        offset += spec.k - 1

    if len(repetitions) > 1:
        codes = pd.Categorical(frame[spec.random], categories=repetitions).codes
        block = np.zeros((len(x), len(repetitions)))
        block[np.arange(len(x)), codes] = 1.0
        blocks.append(block)
        cols = slice(offset, offset + len(repetitions))
        columns[REPETITION_PENALTY] = cols
        penalties[REPETITION_PENALTY] = (cols, np.eye(len(repetitions)))
        offset += len(repetitions)

    X = np.hstack(blocks)
    problem = _PenalizedProblem(X, y, penalties)
    names = list(penalties)
    if spec.lambdas is not None:
        missing = [name for name in names if name not in spec.lambdas]
        if missing:
            raise ConfigurationError(f"fixed smoothing parameters missing for {missing}")
        lambdas = {name: float(spec.lambdas[name]) for name in names}
    else:
        lambdas = _search_lambdas(problem, names)

    solved = problem.solve(lambdas)
    residual_df = len(y) - solved["trace"]
    if not residual_df > 0:
        raise FitError("GAM has no residual degrees of freedom", details={"n": len(y), "edf": solved["trace"]})
    sigma2 = solved["rss"] / residual_df
    Vb = sigma2 * solved["H_inv"]
    Vb = 0.5 * (Vb + Vb.T)
    diag = np.diag(solved["influence"])
    edf = {level: float(diag[columns[f"smooth:{level}"]].sum()) for level in levels}
    return GamFit(spec=spec, levels=levels, repetitions=repetitions, smooths=smooths, columns=columns,
                  coef=solved["coef"], Vb=Vb, lambdas=lambdas, edf=edf, sigma2=float(sigma2),
                  gcv=float(solved["gcv"]), n=len(y), data=frame)


@dataclass
class DifferenceCurve:
    """2つのLM種別の平滑化曲線の差"""
    level_a: str
    level_b: str
    x: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    significant: np.ndarray

    @property
    def label(self) -> str:
        return f"{self.level_a} - {self.level_b}"

    def intervals(self) -> List[Tuple[float, float]]:
        """CIが0を含まない区間（連続する格子点の最大の連なり）"""
        runs = []
        start = None
        for i, flag in enumerate(self.significant):
            if flag and start is None:
                start = i
            if not flag and start is not None:
                runs.append((float(self.x[start]), float(self.x[i - 1])))
                start = None
        if start is not None:
            runs.append((float(self.x[start]), float(self.x[-1])))
        return runs

    def coverage(self) -> float:
        return float(np.mean(self.significant))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "estimate": self.estimate, "se": self.se, "lo": self.lo,
                             "hi": self.hi, "significant": self.significant.astype(bool)})


def difference_smooth(fit: GamFit, level_a: str, level_b: str, grid_size: int = GAM_GRID_SIZE) -> DifferenceCurve:
    """
    s_a(x) − s_b(x)（レベル切片の差を含む）と同時事後共分散からの標準誤差

    Args:
        fit: GAMの推定結果
        level_a: 比較するLM種別
        level_b: 比較相手のLM種別
        grid_size: 格子点数

    Returns:
        両レベルの共変量範囲の重なりの上での差分曲線
    """
    for level in (level_a, level_b):
        if level not in fit.smooths:
            raise FitError(f"level {level!r} not present in fit", details={"levels": fit.levels})
    lo_a, hi_a = fit.smooths[level_a].x_range
    lo_b, hi_b = fit.smooths[level_b].x_range
    lo, hi = max(lo_a, lo_b), min(hi_a, hi_b)
    if not lo < hi:
        raise FitError(f"covariate ranges of {level_a!r} and {level_b!r} do not overlap",
                       details={"a": [lo_a, hi_a], "b": [lo_b, hi_b]})
    grid = np.linspace(lo, hi, grid_size)
    pmat_diff = fit.level_matrix(level_a, grid) - fit.level_matrix(level_b, grid)
    estimate = pmat_diff @ fit.coef
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", pmat_diff, fit.Vb, pmat_diff), 0.0))
    z = fit.spec.z
    return DifferenceCurve(level_a=level_a, level_b=level_b, x=grid, estimate=estimate, se=se,
                           lo=estimate - z * se, hi=estimate + z * se, significant=np.abs(estimate) > z * se)


def quality_summary(rows: pd.DataFrame) -> pd.DataFrame:
    """
    LM種別ごとの最終チェックポイントの平均対数確率と、最良と最悪の種別の差

    Args:
        rows: 分析結果の表（dataset, model, layers, seed, checkpoint, avg_log_prob）

    Returns:
        dataset, lm_type, final_checkpoint, final_avg_log_prob, best_minus_worst の表
    """
    if rows.empty:
        raise InputDataError("no analysis rows to summarize")
    frame = rows.copy()
    frame["lm_type"] = frame["model"].astype(str) + frame["layers"].astype(str)
    records = []
    for (dataset, lm_type), group in frame.groupby(["dataset", "lm_type"], sort=True):
        final_tag = max(group["checkpoint"].astype(str).unique(), key=tag_sort_key)
        final = group[group["checkpoint"].astype(str) == final_tag]
        records.append({"dataset": dataset, "lm_type": lm_type, "final_checkpoint": final_tag,
                        "final_avg_log_prob": float(final["avg_log_prob"].mean())})
    summary = pd.DataFrame(records)
    spread = summary.groupby("dataset")["final_avg_log_prob"].agg(lambda v: v.max() - v.min())
    summary["best_minus_worst"] = summary["dataset"].map(spread)
    return summary
