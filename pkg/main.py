#!/usr/bin/env python3
"""
サプライザル分析ワークベンチ - 言語モデルの学習から読解データの適合度比較まで
"""

import argparse
import sys
import time
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from config import (DISPLAY_SEPARATOR_CHAR, DISPLAY_SEPARATOR_LENGTH, EXIT_INPUT_ERROR, EXIT_NUMERICAL_ERROR,
                    EXIT_SUCCESS)
from core.exceptions import NumericalError, SurprisalWorkbenchError
from core.pipeline_service import PipelineConfig, PipelineService
from utils.execution_logger import ExecutionLogAnalyzer, ExecutionLogger

# .envファイルから環境変数を読み込み
load_dotenv()

STAGES: Dict[str, Callable[[PipelineService], object]] = {
    "toy-corpus": PipelineService.toy_corpus,
    "preprocess": PipelineService.preprocess,
    "train": PipelineService.train,
    "analyze": PipelineService.analyze,
    "compare": PipelineService.compare,
    "synthesize": PipelineService.synthesize,
}

STAGE_HELP = {
    "toy-corpus": "デスク規模のトイコーパス・刺激文・頻度ノルムを生成",
    "preprocess": "語彙を構築して学習文をフィルタ",
    "train": "全アーキテクチャ × シードの言語モデルを学習（再実行時は完了済みをスキップ）",
    "analyze": "サプライザルを計算し、混合効果モデルで適合度を推定",
    "compare": "GAMで適合度とLMの質の関係を比較し、図とCSVを出力",
    "synthesize": "既知の効果を持つ合成読解データを生成",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="サプライザル分析ワークベンチ（LMの質と読解データへの適合度）"
    )
    parser.add_argument("--config", "-c", help="設定ファイル（KEY = value 形式, 例: configs/desk.env）")
    parser.add_argument("--out", "-o", help="出力ディレクトリ（設定ファイルの OUTPUT_DIR を上書き）")
    parser.add_argument("--jobs", "-j", type=int, help="並列ワーカー数")
    parser.add_argument("--seed-offset", type=int, help="全シードに加えるオフセット")
    parser.add_argument("--quiet", action="store_true", help="進捗バーを表示しない")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in STAGE_HELP.items():
        subparsers.add_parser(name, help=help_text)
    logs = subparsers.add_parser("logs", help="実行ログのセッション一覧と作業単位の集計を表示")
    logs.add_argument("--session", help="セッションID（省略時は最新）")
    return parser


def exit_code_for(error: Exception) -> int:
    """例外の種類から終了コードを決める（入力・設定・チェックポイント形式のエラーは1）"""
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL_ERROR
    return EXIT_INPUT_ERROR


def show_logs(config: PipelineConfig, session: Optional[str]) -> int:
    analyzer = ExecutionLogAnalyzer(str(config.log_dir))
    sessions = analyzer.list_all_sessions()
    if not sessions:
        print(f"⚠️ 実行ログがありません: {config.log_dir}")
        return EXIT_SUCCESS
    print(f"📋 セッション数: {len(sessions)}")
    for session_id in sessions[:10]:
        log = analyzer.load_log(session_id)
        print(f"   - {session_id} ({log.get('stage')})")
    stats = analyzer.analyze_work_items(session)
    print(f"\n📊 作業単位: {stats['successful']}/{stats['total']} 成功")
    if stats["average_duration"] is not None:
        print(f"   - 平均実行時間: {stats['average_duration']:.2f}秒")
    for key in stats["failed"]:
        print(f"   ❌ {key}")
    return EXIT_SUCCESS


def main(argv: Optional[List[str]] = None) -> int:
    """メイン関数"""
    args = build_parser().parse_args(argv)

    try:
        config = PipelineConfig.from_file(args.config, output_dir=args.out, jobs=args.jobs,
                                          seed_offset=args.seed_offset,
                                          show_progress=False if args.quiet else None)
    except SurprisalWorkbenchError as e:
        print(f"❌ 設定エラー: {e.message}")
        return exit_code_for(e)

    if args.command == "logs":
        return show_logs(config, args.session)

    config.output_dir.mkdir(parents=True, exist_ok=True)
    logger = ExecutionLogger(log_dir=str(config.log_dir), stage=args.command)
    logger.log_step("main_start", "start", {"command": args.command, "config": config.to_dict()})

    print(f"=== {args.command}: {STAGE_HELP[args.command]} ===")
    print(f"📁 出力先: {config.output_dir}")
    print()

    service = PipelineService(config, logger=logger)
    start_time = time.time()
    try:
        result = STAGES[args.command](service)
    except SurprisalWorkbenchError as e:
        logger.log_error(type(e).__name__, e.message, e.to_dict())
        logger.log_step("main_error", "error", {"error": e.message})
        print(f"❌ エラーが発生しました: {e.message}")
        for key, value in e.details.items():
            print(f"   - {key}: {value}")
        print(f"\n📋 詳細ログ: {config.log_dir / 'latest_execution_log.json'}")
        return exit_code_for(e)

    duration = time.time() - start_time
    logger.log_performance_metric(f"{args.command}_duration", duration, "seconds")
    logger.set_final_result({"command": args.command,
                             "result": result if isinstance(result, dict) else {"rows": len(result)}})

    summary = logger.get_summary()
    print("\n" + DISPLAY_SEPARATOR_CHAR * DISPLAY_SEPARATOR_LENGTH)
    print(f"📊 実行ログ: セッションID {summary['session_id']}")
    print(f"   - 実行ステップ: {summary['successful_steps']}/{summary['total_steps']}")
    if summary["total_work_items"]:
        print(f"   - 作業単位: {summary['successful_work_items']}/{summary['total_work_items']}")
    if summary["total_errors"] > 0:
        print(f"   - エラー数: {summary['total_errors']}")
    print(f"   - 実行時間: {duration:.1f}秒")
    return EXIT_SUCCESS


if __name__ == "__main__":
    sys.exit(main())
