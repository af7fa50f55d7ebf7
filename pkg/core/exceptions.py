"""
アプリケーション専用の例外クラス
"""

from typing import Optional, Dict, Any


class SurprisalWorkbenchError(Exception):
    """アプリケーション基底例外"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        self.original_error = original_error

    def to_dict(self) -> Dict[str, Any]:
        """例外情報を辞書として返す"""
        return {
            "error_type": self.__class__.__name__,
            "message": self.message,
            "details": self.details,
            "original_error": str(self.original_error) if self.original_error else None
        }


class ConfigurationError(SurprisalWorkbenchError):
    """設定関連の例外"""
    pass


class InputDataError(SurprisalWorkbenchError):
    """入力データ関連の例外（CLIの終了コード1）"""
    pass


class CorpusError(InputDataError):
    """コーパス・語彙関連の例外"""
    pass


class ReadingDataError(InputDataError):
    """読解データ関連の例外"""
    pass


class CheckpointFormatError(SurprisalWorkbenchError):
    """チェックポイントファイルの形式エラー"""
    pass


class NumericalError(SurprisalWorkbenchError):
    """数値計算関連の例外（CLIの終了コード2）"""
    pass


class ShapeError(NumericalError):
    """テンソル形状の不一致"""
    pass


class GraphStateError(NumericalError):
    """計算グラフの状態異常（forward前のbackwardなど）"""
    pass


class TrainingDivergedError(NumericalError):
    """学習中のNaN/Infによる中断"""
    pass


class FitError(NumericalError):
    """回帰・GAMのフィッティング失敗"""
    pass


class RankDeficiencyError(FitError):
    """計画行列のランク落ち"""
    pass


class ConvergenceError(FitError):
    """最適化が予算内に収束しなかった場合の例外"""

    def __init__(self, message: str, best_fit: Any = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details=details)
        self.best_fit = best_fit
