"""
作業単位を並列に処理するワーカープール（結果はキーの順に統合）
"""

import concurrent.futures
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Hashable, List, Optional

from tqdm import tqdm

from config import CONCURRENT_WORKERS
from core.exceptions import SurprisalWorkbenchError


@dataclass
class WorkResult:
    """1つの作業単位の結果"""
    key: Hashable
    value: Any = None
    error: Optional[SurprisalWorkbenchError] = None
    duration: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


def _timed(func: Callable[[Any], Any], payload: Any) -> WorkResult:
    start = time.time()
    try:
        value = func(payload)
    except SurprisalWorkbenchError as e:
        return WorkResult(key=None, error=e, duration=time.time() - start)
    return WorkResult(key=None, value=value, duration=time.time() - start)


def run_work_items(func: Callable[[Any], Any], items: Dict[Hashable, Any], jobs: int = CONCURRENT_WORKERS,
                   desc: str = "work items", show_progress: bool = True) -> List[WorkResult]:
    """
    作業単位を最大 jobs 個のプロセスで処理

    アプリケーション例外は作業単位ごとに記録して処理を続け、
    それ以外の例外はそのまま送出する。

    Args:
        func: モジュールレベルの関数（プロセス間で受け渡すため）
        items: キー → 引数
        jobs: ワーカー数（1ならプロセスを起動せずに逐次実行）
        desc: 進捗表示のラベル

    Returns:
        キーでソートした結果の一覧
    """
    keys = sorted(items)
    results: Dict[Hashable, WorkResult] = {}
    if jobs <= 1 or len(keys) <= 1:
        for key in tqdm(keys, desc=desc, disable=not show_progress, leave=False):
            result = _timed(func, items[key])
            result.key = key
            results[key] = result
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(_timed, func, items[key]): key for key in keys}
            progress = tqdm(concurrent.futures.as_completed(futures), total=len(futures), desc=desc,
                            disable=not show_progress, leave=False)
            for future in progress:
                key = futures[future]
                result = future.result()
                result.key = key
                results[key] = result
    return [results[key] for key in keys]
