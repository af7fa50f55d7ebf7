"""
線形混合効果モデル（最尤法、プロファイル逸脱度 + 疎行列分解）
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from config import LMER_LOG_THETA_BOUNDS, LMER_MAX_EVALUATIONS, LMER_RESTARTS, LMER_TOLERANCE
from core.exceptions import ConfigurationError, ConvergenceError, FitError, RankDeficiencyError
from reading.predictors import PredictorTable

INTERCEPT = "(Intercept)"
FIT_METADATA = {
    "criterion": "ML",
    "gof_convention": "deviance_difference",
    "random_slopes": "baseline_mains_diagonal",
    "item": "word_token",
}


@dataclass(frozen=True)
class ModelFormula:
    """固定効果と変量効果の構成"""
    dependent: str
    mains: Tuple[str, ...]
    extras: Tuple[str, ...] = ()  # サプライザル項（交互作用には入れない）
    interaction_order: int = 2
    subject: Optional[str] = "subject"
    item: Optional[str] = "item"
    subject_slopes: bool = True

    def __post_init__(self):
        if self.interaction_order not in (0, 1, 2):
            raise ConfigurationError(f"interaction_order must be 0, 1 or 2, got {self.interaction_order}")
        object.__setattr__(self, "mains", tuple(self.mains))
        object.__setattr__(self, "extras", tuple(self.extras))

    @classmethod
    def for_table(cls, table: PredictorTable, with_surprisal: bool = True) -> "ModelFormula":
        """予測変数表のベースライン（または + サプライザル）モデル"""
        return cls(dependent=table.dependent, mains=tuple(table.mains),
                   extras=tuple(table.surprisal_columns) if with_surprisal else ())

    def interactions(self) -> List[Tuple[str, str]]:
        return list(combinations(self.mains, 2)) if self.interaction_order == 2 else []

    def fixed_names(self) -> List[str]:
        return [INTERCEPT, *self.mains, *(f"{a}:{b}" for a, b in self.interactions()), *self.extras]

    def random_terms(self) -> List[Tuple[str, str]]:
        """(グループ列, 係数名) の列（対角共分散）"""
        terms = []
        if self.subject:
            terms.append((self.subject, INTERCEPT))
            if self.subject_slopes:
                terms.extend((self.subject, m) for m in self.mains)
        if self.item:
            terms.append((self.item, INTERCEPT))
        return terms

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dependent": self.dependent,
            "fixed": self.fixed_names(),
            "random": [f"{c}|{g}" for g, c in self.random_terms()],
        }


@dataclass
class Design:
    """固定効果行列 X、変量効果行列 Z とその項の対応"""
    X: np.ndarray
    names: List[str]
    y: np.ndarray
    Z: sp.csc_matrix
    term_index: np.ndarray  # Z の各列が属する変量効果項の番号
    term_labels: List[str]

    @property
    def n(self) -> int:
        return self.X.shape[0]


def check_rank(X: np.ndarray, names: Sequence[str]):
    """ピボット付きQRでランク落ちを検出し、従属な列を報告"""
    _, r, pivots = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        aliased = [names[i] for i in pivots[rank:]]
        raise RankDeficiencyError(f"design matrix is rank deficient; aliased columns: {', '.join(aliased)}",
                                  details={"aliased": aliased, "rank": rank, "columns": X.shape[1]})


def build_design(formula: ModelFormula, table: Union[PredictorTable, pd.DataFrame]) -> Design:
    """
    式と表から計画行列を作る

    Args:
        formula: モデル式
        table: 予測変数表（標準化済み）

    Returns:
        X = 切片 + 主効果 + 主効果の2次交互作用 + サプライザル項、
        Z = 被験者ごとの切片と傾き + 項目ごとの切片
    """
    frame = table.frame if isinstance(table, PredictorTable) else table
    needed = [formula.dependent, *formula.mains, *formula.extras]
    needed += [g for g, _ in formula.random_terms()]
    missing = sorted({c for c in needed if c not in frame.columns})
    if missing:
        raise ConfigurationError(f"columns missing from predictor table: {missing}", details={"missing": missing})

    n = len(frame)
    columns = [np.ones(n)]
    columns += [frame[m].to_numpy(dtype=float) for m in formula.mains]
    columns += [frame[a].to_numpy(dtype=float) * frame[b].to_numpy(dtype=float) for a, b in formula.interactions()]
    columns += [frame[e].to_numpy(dtype=float) for e in formula.extras]
    X = np.column_stack(columns)
    names = formula.fixed_names()
    check_rank(X, names)

    blocks = []
    term_index: List[np.ndarray] = []
    labels = []
    for t, (group, coef) in enumerate(formula.random_terms()):
        codes, levels = pd.factorize(frame[group], sort=True)
        values = np.ones(n) if coef == INTERCEPT else frame[coef].to_numpy(dtype=float)
        blocks.append(sp.csc_matrix((values, (np.arange(n), codes)), shape=(n, len(levels))))
        term_index.append(np.full(len(levels), t))
        labels.append(f"{coef}|{group}")
    Z = sp.hstack(blocks, format="csc") if blocks else sp.csc_matrix((n, 0))
    return Design(X=X, names=names, y=frame[formula.dependent].to_numpy(dtype=float), Z=Z,
                  term_index=np.concatenate(term_index) if term_index else np.zeros(0, dtype=int),
                  term_labels=labels)


@dataclass
class MixedFit:
    """最尤推定の結果"""
    names: List[str]
    beta: np.ndarray
    se: np.ndarray
    theta: np.ndarray  # 変量効果SDと残差SDの比
    sigma2: float
    deviance: float
    n: int
    term_labels: List[str] = field(default_factory=list)
    converged: bool = True
    n_evaluations: int = 0
    simplex_spread: float = 0.0
    metadata: Dict[str, str] = field(default_factory=lambda: dict(FIT_METADATA))

    @property
    def loglik(self) -> float:
        return -0.5 * self.deviance

    @property
    def variance_components(self) -> Dict[str, float]:
        return {label: float(self.sigma2 * t ** 2) for label, t in zip(self.term_labels, self.theta)}

    def coef(self, name: str) -> float:
        try:
            return float(self.beta[self.names.index(name)])
        except ValueError:
            raise FitError(f"no fixed effect named {name}", details={"names": self.names})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fixed_effects": {n: float(b) for n, b in zip(self.names, self.beta)},
            "standard_errors": {n: float(s) for n, s in zip(self.names, self.se)},
            "variance_components": self.variance_components,
            "residual_variance": self.sigma2,
            "loglik": self.loglik,
            "deviance": self.deviance,
            "n": self.n,
            "converged": self.converged,
            "n_evaluations": self.n_evaluations,
            "simplex_spread": self.simplex_spread,
            "metadata": self.metadata,
        }


class ProfiledDeviance:
    """θ を与えたときの罰則付き最小二乗解とプロファイル逸脱度"""

    def __init__(self, X: np.ndarray, Z: sp.spmatrix, y: np.ndarray, term_index: np.ndarray):
        self.X, self.y = X, y
        self.Z = sp.csc_matrix(Z)
        self.term_index = term_index
        self.n = X.shape[0]
        self.q = self.Z.shape[1]
        self.ZtZ = (self.Z.T @ self.Z).tocsc()
        self.ZtX = np.asarray(self.Z.T @ X)
        self.Zty = np.asarray(self.Z.T @ y).ravel()
        self.XtX = X.T @ X
        self.Xty = X.T @ y

    def solve(self, theta: np.ndarray) -> Dict[str, Any]:
        lam = np.asarray(theta, dtype=float)[self.term_index]
        scale = sp.diags(lam)
        A = (scale @ self.ZtZ @ scale + sp.identity(self.q)).tocsc()
        lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        logdet = float(np.sum(np.log(np.abs(lu.U.diagonal()))))
        lzx = lam[:, None] * self.ZtX
        lzy = lam * self.Zty
        a_zx = lu.solve(lzx) if lzx.size else lzx
        a_zy = lu.solve(lzy)
        rxtrx = self.XtX - lzx.T @ a_zx
        beta = scipy.linalg.solve(rxtrx, self.Xty - lzx.T @ a_zy, assume_a="pos")
        u = a_zy - a_zx @ beta
        resid = self.y - self.X @ beta - self.Z @ (lam * u)
        r2 = float(resid @ resid + u @ u)
        deviance = logdet + self.n * (1.0 + np.log(2.0 * np.pi * r2 / self.n))
        return {"deviance": float(deviance), "beta": beta, "r2": r2, "rxtrx": rxtrx}

    def __call__(self, log_theta: np.ndarray) -> float:
        try:
            value = self.solve(np.exp(log_theta))["deviance"]
        except (np.linalg.LinAlgError, RuntimeError, ValueError):
            return np.inf
        return value if np.isfinite(value) else np.inf


def _ols_fit(X: np.ndarray, y: np.ndarray, names: List[str]) -> MixedFit:
    n = X.shape[0]
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / n
    try:
        cov = sigma2 * np.linalg.inv(X.T @ X)
    except np.linalg.LinAlgError as e:
        raise FitError(f"least squares covariance is singular: {e}", original_error=e)
    deviance = n * (1.0 + np.log(2.0 * np.pi * sigma2))
    return MixedFit(names=names, beta=beta, se=np.sqrt(np.diag(cov)), theta=np.zeros(0), sigma2=sigma2,
                    deviance=float(deviance), n=n)


def fit_ml(X: np.ndarray, Z: Optional[sp.spmatrix], y: np.ndarray, term_index: Optional[np.ndarray] = None,
           names: Optional[List[str]] = None, term_labels: Optional[List[str]] = None,
           theta0: Optional[np.ndarray] = None, max_evaluations: int = LMER_MAX_EVALUATIONS,
           tolerance: float = LMER_TOLERANCE, restarts: int = LMER_RESTARTS) -> MixedFit:
    """
    プロファイル逸脱度を Nelder–Mead で最小化する最尤推定

    Args:
        X: 固定効果行列 [n × p]
        Z: 変量効果行列 [n × q]（None または列なしなら通常の最小二乗）
        y: 従属変数
        term_index: Z の各列の変量効果項番号（省略時は全列で1項）
        names: 固定効果名
        term_labels: 変量効果項の名前
        theta0: θ の初期値（省略時は全て1）
        max_evaluations: 1回の最適化での逸脱度評価の上限
        tolerance: 単体内の逸脱度の差がこれ未満なら収束
        restarts: 未収束時に摂動した初期値からやり直す回数

    Returns:
        推定結果
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = names or [INTERCEPT if j == 0 else f"x{j}" for j in range(p)]
    if y.shape != (n,):
        raise FitError(f"y has shape {y.shape}, expected ({n},)")
    if n < p + 2:
        raise FitError(f"too few rows ({n}) for {p} fixed effects", details={"n": n, "p": p})
    check_rank(X, names)
    if Z is None or Z.shape[1] == 0:
        return _ols_fit(X, y, names)

    term_index = np.zeros(Z.shape[1], dtype=int) if term_index is None else np.asarray(term_index, dtype=int)
    k = int(term_index.max()) + 1
    term_labels = term_labels or [f"term{t}" for t in range(k)]
    objective = ProfiledDeviance(X, Z, y, term_index)
    lower, upper = LMER_LOG_THETA_BOUNDS
    start = np.zeros(k) if theta0 is None else np.clip(np.log(np.maximum(theta0, np.exp(lower))), lower, upper)

    evaluations = 0
    best = None
    rng = np.random.default_rng(0)
    for attempt in range(restarts + 1):
        result = scipy.optimize.minimize(
            objective, start, method="Nelder-Mead", bounds=[(lower, upper)] * k,
            options={"maxfev": max_evaluations, "xatol": 1e-7, "fatol": tolerance, "adaptive": k > 2})
        evaluations += int(result.nfev)
        spread = float(np.ptp(result.final_simplex[1]))
        if best is None or result.fun < best[0].fun:
            best = (result, spread)
        if result.success or spread < tolerance:
            break
        start = np.clip(result.x + rng.normal(0.0, 0.1, size=k), lower, upper)

    result, spread = best
    if not np.isfinite(result.fun):
        raise FitError("profiled deviance is not finite at any evaluated θ", details={"evaluations": evaluations})
    theta = np.exp(result.x)
    try:
        solved = objective.solve(theta)
        sigma2 = solved["r2"] / n
        cov = sigma2 * np.linalg.inv(solved["rxtrx"])
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as e:
        raise FitError(f"mixed model solve failed at θ = {theta.tolist()}: {e}",
                       details={"theta": theta.tolist(), "evaluations": evaluations}, original_error=e)
    fit = MixedFit(names=names, beta=solved["beta"], se=np.sqrt(np.diag(cov)), theta=theta, sigma2=sigma2,
                   deviance=solved["deviance"], n=n, term_labels=term_labels,
                   converged=bool(result.success or spread < tolerance), n_evaluations=evaluations,
                   simplex_spread=spread)
    if not fit.converged:
        raise ConvergenceError(f"Nelder-Mead did not converge within {evaluations} evaluations",
                               best_fit=fit, details={"evaluations": evaluations, "simplex_spread": spread})
    return fit


def fit_design(design: Design, theta0: Optional[np.ndarray] = None, **kwargs) -> MixedFit:
    """Design に対して fit_ml を呼ぶ"""
    return fit_ml(design.X, design.Z, design.y, term_index=design.term_index, names=design.names,
                  term_labels=design.term_labels, theta0=theta0, **kwargs)


@dataclass(frozen=True)
class GoodnessOfFit:
    """ベースラインからの逸脱度の減少（負の符号は予想と逆向きの効果）"""
    value: float
    raw_value: float
    surprisal_coefficient: float
    flagged_negative: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "raw_value": self.raw_value,
            "surprisal_coefficient": self.surprisal_coefficient,
            "flagged_negative": self.flagged_negative,
        }


def goodness_of_fit(base: MixedFit, full: MixedFit, surprisal_coefficient: Optional[float] = None) -> GoodnessOfFit:
    """
    逸脱度の差 deviance_base − deviance_full

    Args:
        base: ベースラインモデル
        full: サプライザル項を加えたモデル
        surprisal_coefficient: 現在語のサプライザルの係数（省略時は full の "surprisal"）

    Returns:
        係数が負なら符号を反転して印を付けた適合度
    """
    if base.n != full.n:
        raise FitError(f"fits use different rows ({base.n} vs {full.n})", details={"base": base.n, "full": full.n})
    if not set(base.names) <= set(full.names):
        extra = sorted(set(base.names) - set(full.names))
        raise FitError(f"full model lacks base fixed effects: {extra}", details={"missing": extra})
    coefficient = full.coef("surprisal") if surprisal_coefficient is None else float(surprisal_coefficient)
    raw = base.deviance - full.deviance
    flagged = coefficient < 0
    return GoodnessOfFit(value=-raw if flagged else raw, raw_value=raw, surprisal_coefficient=coefficient,
                         flagged_negative=flagged)
