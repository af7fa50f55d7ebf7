"""
実行ログ記録モジュール - パイプライン各ステージの記録と分析
"""

import json
import os
from datetime import datetime
from pathlib import Path
from typing import Dict, Any, List, Optional

from config import JSON_INDENT_LEVEL


class ExecutionLogger:
    """実行ログを記録・管理するクラス"""

    def __init__(self, log_dir: str = "logs", stage: Optional[str] = None):
        """
        初期化

        Args:
            log_dir: ログディレクトリのパス
            stage: 実行中のステージ名（preprocess, train など）
        """
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        # 実行セッションの開始
        self.session_start = datetime.now()
        self.session_id = self.session_start.strftime("%Y%m%d_%H%M%S_%f")

        self.execution_log = {
            "session_id": self.session_id,
            "session_start": self.session_start.isoformat(),
            "stage": stage,
            "steps": [],
            "work_items": [],
            "errors": [],
            "performance": {},
            "final_result": None
        }

    def set_stage(self, stage: str):
        """処理対象のステージ名を設定"""
        self.execution_log["stage"] = stage

    def log_step(self, step_name: str, status: str, details: Dict[str, Any] = None, duration: float = None):
        """
        実行ステップをログに記録

        Args:
            step_name: ステップ名
            status: 実行状態 (start, success, error, info, skipped)
            details: 詳細情報
            duration: 実行時間（秒）
        """
        self.execution_log["steps"].append({
            "timestamp": datetime.now().isoformat(),
            "step_name": step_name,
            "status": status,
            "details": details or {},
            "duration": duration
        })
        self._save_log()

    def log_work_item(self, item_key: str, result: Dict[str, Any], duration: float = None, error: str = None):
        """
        ワーカープールで処理した作業単位をログに記録

        Args:
            item_key: 作業単位のキー（例: "SPR/gru1/s1/1K"）
            result: 結果の要約
            duration: 実行時間（秒）
            error: エラーメッセージ（エラー時）
        """
        self.execution_log["work_items"].append({
            "timestamp": datetime.now().isoformat(),
            "item_key": item_key,
            "result": result,
            "duration": duration,
            "error": error,
            "status": "error" if error else "success"
        })
        self._save_log()

    def log_error(self, error_type: str, error_message: str, context: Dict[str, Any] = None):
        """
        エラー情報をログに記録

        Args:
            error_type: エラー種別
            error_message: エラーメッセージ
            context: エラー発生時のコンテキスト
        """
        self.execution_log["errors"].append({
            "timestamp": datetime.now().isoformat(),
            "error_type": error_type,
            "error_message": error_message,
            "context": context or {}
        })
        self._save_log()

    def log_performance_metric(self, metric_name: str, value: Any, unit: str = None):
        """パフォーマンス指標をログに記録"""
        self.execution_log["performance"][metric_name] = {
            "value": value,
            "unit": unit,
            "timestamp": datetime.now().isoformat()
        }
        self._save_log()

    def set_final_result(self, result: Dict[str, Any]):
        """最終結果をログに記録"""
        self.execution_log["final_result"] = result
        self.execution_log["session_end"] = datetime.now().isoformat()
        self._save_log()

    def _save_log(self):
        """ログをファイルに保存"""
        try:
            log_file = self.log_dir / f"execution_log_{self.session_id}.json"
            for path in (log_file, self.log_dir / "latest_execution_log.json"):
                with open(path, 'w', encoding='utf-8') as f:
                    json.dump(self.execution_log, f, ensure_ascii=False, indent=JSON_INDENT_LEVEL, default=str)
                    f.flush()
                    os.fsync(f.fileno())
        except Exception as e:
            print(f"⚠️ ログ保存エラー: {e}")

    def get_summary(self) -> Dict[str, Any]:
        """実行サマリーを取得"""
        steps = self.execution_log["steps"]
        items = self.execution_log["work_items"]

        session_duration = None
        if "session_end" in self.execution_log:
            start_time = datetime.fromisoformat(self.execution_log["session_start"])
            end_time = datetime.fromisoformat(self.execution_log["session_end"])
            session_duration = (end_time - start_time).total_seconds()

        return {
            "session_id": self.session_id,
            "stage": self.execution_log["stage"],
            "total_steps": len(steps),
            "successful_steps": len([s for s in steps if s["status"] == "success"]),
            "total_work_items": len(items),
            "successful_work_items": len([i for i in items if i["status"] == "success"]),
            "total_errors": len(self.execution_log["errors"]),
            "session_duration": session_duration,
            "performance_metrics": self.execution_log["performance"]
        }


class ExecutionLogAnalyzer:
    """実行ログの分析を行うクラス"""

    def __init__(self, log_dir: str = "logs"):
        self.log_dir = Path(log_dir)

    def load_log(self, session_id: str = None) -> Dict[str, Any]:
        """
        指定されたセッションのログを読み込み

        Args:
            session_id: セッションID（Noneの場合は最新ログ）

        Returns:
            ログデータ（存在しない場合は空の辞書）
        """
        if session_id:
            log_file = self.log_dir / f"execution_log_{session_id}.json"
        else:
            log_file = self.log_dir / "latest_execution_log.json"

        try:
            if log_file.exists():
                with open(log_file, 'r', encoding='utf-8') as f:
                    return json.load(f)
            return {}
        except Exception as e:
            print(f"⚠️ ログ読み込みエラー: {e}")
            return {}

    def list_all_sessions(self) -> List[str]:
        """全てのセッションIDを取得（新しい順）"""
        session_ids = [p.stem.replace("execution_log_", "") for p in self.log_dir.glob("execution_log_*.json")]
        return sorted(session_ids, reverse=True)

    def analyze_work_items(self, session_id: str = None) -> Dict[str, Any]:
        """作業単位の成功数・失敗数と平均実行時間を集計"""
        log_data = self.load_log(session_id)
        items = log_data.get("work_items", [])
        durations = [i["duration"] for i in items if i.get("duration")]
        return {
            "total": len(items),
            "successful": len([i for i in items if i["status"] == "success"]),
            "failed": [i["item_key"] for i in items if i["status"] == "error"],
            "average_duration": sum(durations) / len(durations) if durations else None
        }
