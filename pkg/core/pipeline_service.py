"""
パイプライン全体（前処理・学習・分析・比較・合成データ生成）を統括するサービス

各ステージは出力ディレクトリのファイルだけを介して受け渡す。
"""

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from analysis.collinearity import collinearity_check
from analysis.gam import GamSpec, difference_smooth, fit_gam, quality_summary
from analysis.mixed_effects import (FIT_METADATA, MixedFit, ModelFormula, build_design, fit_design,
                                    goodness_of_fit)
from analysis.panels import emit_panels
from config import (BATCH_SIZE, CONCURRENT_WORKERS, DATASET_KINDS, DEFAULT_COMPARISON_PAIRS, DEFAULT_OUTPUT_DIR,
                    EMBED_DIM, EPOCHS, FLOAT_FORMAT, FULL_CHECKPOINT_LADDER, FULL_SEEDS, GAM_BASIS_SIZE,
                    GRU_HIDDEN, GRU_PROJECTION, JSON_INDENT_LEVEL, MAX_SENTENCE_LENGTH, MOMENTUM, SYNTH_SURPRISAL_EFFECT,
                    TRANSFORMER_FFN_DIM, TRANSFORMER_HEADS, VOCAB_TOP_N)
from core.exceptions import (ConfigurationError, ConvergenceError, InputDataError, SurprisalWorkbenchError)
from core.interfaces import ModelKind
from core.model_factory import ModelFactory
from corpus.stimuli import read_stimuli, stimulus_words, write_stimuli
from corpus.tokenizer import tokenize_line
from corpus.toy_grammar import generate_toy_corpus
from corpus.vocabulary import (build_vocabulary, corpus_statistics, filter_sentences, read_corpus,
                               read_vocabulary, write_corpus, write_vocabulary)
from models.checkpoint_io import checkpoint_filename, load_checkpoint, save_checkpoint
from models.surprisal import avg_log_prob, read_surprisal_table, surprisal_table, write_surprisal_table
from reading.datasets import ReadingEvent, load_dataset, save_dataset
from reading.exclusions import apply_exclusions, exclusion_counts
from reading.predictors import (SURPRISAL_TERMS, FrequencyNorms, PredictorTable, build_predictors, load_norms,
                               split_spr_by_subset, write_norms)
from reading.synthesis import SynthesisParams, synthesize_datasets, unigram_surprisal, write_sidecar
from training.trainer import TrainConfig, tag_sort_key, train
from utils.execution_logger import ExecutionLogger
from utils.worker_pool import WorkResult, run_work_items

RESULT_COLUMNS = ["dataset", "model", "layers", "seed", "checkpoint", "avg_log_prob", "gof", "flagged_negative",
                  "converged", "n_points", "error", "max_vif", "collinearity_flag"]
SPR_SHARED = "SPR-shared"
SPR_ONLY = "SPR-only"

_CHECKPOINT_NAME = re.compile(r"^(?P<label>[a-z]+\d+)_s(?P<seed>-?\d+)_(?P<tag>[A-Za-z0-9]+)\.ckpt$")


# ==============================================================================
# 設定ファイル
# ==============================================================================

def _as_list(value: Optional[str]) -> List[str]:
    return [v.strip() for v in (value or "").split(",") if v.strip()]


def _as_int_list(value: Optional[str], key: str) -> List[int]:
    try:
        return [int(v.replace("_", "")) for v in _as_list(value)]
    except ValueError as e:
        raise ConfigurationError(f"{key} must be a comma-separated list of integers: {value!r}", original_error=e)


def _as_bool(value: Optional[str]) -> bool:
    return (value or "").strip().lower() in ("1", "true", "yes", "on")


def _as_pairs(value: Optional[str]) -> List[Tuple[str, str]]:
    pairs = []
    for item in _as_list(value):
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigurationError(f"comparison pair must look like gru1:transformer2, got {item!r}")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


def _default_dims() -> Dict[str, int]:
    return {"embed_dim": EMBED_DIM, "gru_hidden": GRU_HIDDEN, "gru_proj": GRU_PROJECTION,
            "heads": TRANSFORMER_HEADS, "ffn_dim": TRANSFORMER_FFN_DIM}


@dataclass
class PipelineConfig:
    """パイプラインの設定（設定ファイル → CLI引数の順に上書き）"""
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    corpus_path: Optional[Path] = None
    stimuli_path: Optional[Path] = None
    norms_path: Optional[Path] = None
    reading_data: Dict[str, Path] = field(default_factory=dict)
    vocab_size: int = VOCAB_TOP_N
    max_sentence_length: int = MAX_SENTENCE_LENGTH
    architectures: List[str] = field(default_factory=lambda: ["gru1", "gru2", "transformer1", "transformer2"])
    seeds: List[int] = field(default_factory=lambda: list(FULL_SEEDS))
    seed_offset: int = 0
    checkpoint_ladder: Tuple[int, ...] = FULL_CHECKPOINT_LADDER
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    momentum: float = MOMENTUM
    learning_rates: Dict[str, float] = field(default_factory=dict)
    dims: Dict[str, int] = field(default_factory=_default_dims)
    checkpoint_float_bytes: int = 8
    datasets: List[str] = field(default_factory=lambda: list(DATASET_KINDS))
    spr_subset: bool = True
    comparison_pairs: List[Tuple[str, str]] = field(default_factory=lambda: list(DEFAULT_COMPARISON_PAIRS))
    gam_k: int = GAM_BASIS_SIZE
    jobs: int = CONCURRENT_WORKERS
    toy_seed: int = 1
    toy_sentences: int = 20_000
    toy_stimuli: int = 120
    synth_seed: int = 1
    synth_effect: float = SYNTH_SURPRISAL_EFFECT
    show_progress: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seeds list must not be empty")
        if not self.architectures:
            raise ConfigurationError("architectures list must not be empty")
        for label in self.architectures:
            ModelFactory.parse_label(label, vocab_size=10)
        unknown = [d for d in self.datasets if d not in DATASET_KINDS]
        if unknown:
            raise ConfigurationError(f"unknown datasets: {unknown}", details={"allowed": list(DATASET_KINDS)})
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")

    @classmethod
    def from_file(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "PipelineConfig":
        """
        `KEY = value` 形式の設定ファイルを読み込む

        Args:
            path: 設定ファイル（省略時は既定値のみ）
            **overrides: CLI引数による上書き（None は無視）

        Returns:
            パイプライン設定
        """
        values: Dict[str, Optional[str]] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigurationError(f"config file not found: {path}", details={"path": str(path)})
            values = {k.upper(): v for k, v in dotenv_values(path).items()}

        kwargs: Dict[str, Any] = {}

        def text(key: str) -> Optional[str]:
            value = values.get(key)
            return value.strip() if value is not None and value.strip() else None

        def number(key: str, cast):
            value = text(key)
            if value is None:
                return None
            try:
                return cast(value.replace("_", ""))
            except ValueError as e:
                raise ConfigurationError(f"{key} must be a number: {value!r}", original_error=e)

        for key, name in (("OUTPUT_DIR", "output_dir"), ("CORPUS_PATH", "corpus_path"),
                          ("STIMULI_PATH", "stimuli_path"), ("NORMS_PATH", "norms_path")):
            if text(key):
                kwargs[name] = Path(text(key))
        reading = {kind: Path(text(f"{kind}_DATA_PATH")) for kind in DATASET_KINDS if text(f"{kind}_DATA_PATH")}
        if reading:
            kwargs["reading_data"] = reading
        for key, name, cast in (("VOCAB_SIZE", "vocab_size", int), ("MAX_SENTENCE_LENGTH", "max_sentence_length", int),
                                ("SEED_OFFSET", "seed_offset", int), ("EPOCHS", "epochs", int),
                                ("BATCH_SIZE", "batch_size", int), ("MOMENTUM", "momentum", float),
                                ("CHECKPOINT_FLOAT_BYTES", "checkpoint_float_bytes", int), ("GAM_K", "gam_k", int),
                                ("JOBS", "jobs", int), ("TOY_SEED", "toy_seed", int),
                                ("TOY_SENTENCES", "toy_sentences", int), ("TOY_STIMULI", "toy_stimuli", int),
                                ("SYNTH_SEED", "synth_seed", int), ("SYNTH_EFFECT", "synth_effect", float)):
            value = number(key, cast)
            if value is not None:
                kwargs[name] = value
        if text("ARCHITECTURES"):
            kwargs["architectures"] = [a.lower() for a in _as_list(text("ARCHITECTURES"))]
        if text("SEEDS"):
            kwargs["seeds"] = _as_int_list(text("SEEDS"), "SEEDS")
        if text("CHECKPOINT_LADDER"):
            kwargs["checkpoint_ladder"] = tuple(_as_int_list(text("CHECKPOINT_LADDER"), "CHECKPOINT_LADDER"))
        if text("DATASETS"):
            kwargs["datasets"] = [d.upper() for d in _as_list(text("DATASETS"))]
        if text("SPR_SUBSET"):
            kwargs["spr_subset"] = _as_bool(text("SPR_SUBSET"))
        if text("COMPARISON_PAIRS"):
            kwargs["comparison_pairs"] = _as_pairs(text("COMPARISON_PAIRS"))
        rates = {kind.value: number(f"LR_{kind.name}", float) for kind in ModelKind}
        kwargs["learning_rates"] = {k: v for k, v in rates.items() if v is not None}
        default_dims = _default_dims()
        for name in list(default_dims):
            value = number(name.upper(), int)
            if value is not None:
                default_dims[name] = value
        kwargs["dims"] = default_dims

        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        if "output_dir" in kwargs:
            kwargs["output_dir"] = Path(kwargs["output_dir"])
        return cls(**kwargs)

    # ------------------------------------------------------------------
    # 出力先（入力パスの既定値は出力ディレクトリ内）
    # ------------------------------------------------------------------
    @property
    def inputs_dir(self) -> Path:
        return self.output_dir / "inputs"

    @property
    def corpus_file(self) -> Path:
        return self.corpus_path or self.inputs_dir / "corpus.txt"

    @property
    def stimuli_file(self) -> Path:
        return self.stimuli_path or self.inputs_dir / "stimuli.tsv"

    @property
    def norms_file(self) -> Path:
        return self.norms_path or self.inputs_dir / "norms.tsv"

    def reading_file(self, kind: str) -> Path:
        return self.reading_data.get(kind) or self.output_dir / "synthetic" / f"{kind.lower()}.csv"

    @property
    def vocabulary_file(self) -> Path:
        return self.output_dir / "preprocess" / "vocabulary.tsv"

    @property
    def filtered_corpus_file(self) -> Path:
        return self.output_dir / "preprocess" / "corpus.txt"

    @property
    def checkpoint_dir(self) -> Path:
        return self.output_dir / "checkpoints"

    @property
    def surprisal_dir(self) -> Path:
        return self.output_dir / "surprisal"

    @property
    def analysis_dir(self) -> Path:
        return self.output_dir / "analysis"

    @property
    def results_file(self) -> Path:
        return self.analysis_dir / "results.csv"

    @property
    def compare_dir(self) -> Path:
        return self.output_dir / "compare"

    @property
    def log_dir(self) -> Path:
        return self.output_dir / "logs"

    @property
    def run_seeds(self) -> List[int]:
        return [s + self.seed_offset for s in self.seeds]

    def learning_rate(self, kind: ModelKind) -> float:
        return self.learning_rates.get(kind.value, ModelFactory.default_learning_rate(kind))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "output_dir": str(self.output_dir),
            "corpus": str(self.corpus_file),
            "stimuli": str(self.stimuli_file),
            "norms": str(self.norms_file),
            "reading_data": {k: str(self.reading_file(k)) for k in self.datasets},
            "vocab_size": self.vocab_size,
            "architectures": self.architectures,
            "seeds": self.run_seeds,
            "checkpoint_ladder": list(self.checkpoint_ladder),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "dims": self.dims,
            "datasets": self.datasets,
            "comparison_pairs": [list(p) for p in self.comparison_pairs],
            "jobs": self.jobs,
        }


def _require(paths: Dict[str, Path]):
    missing = {name: str(p) for name, p in paths.items() if not Path(p).exists()}
    if missing:
        raise InputDataError(f"missing inputs: {', '.join(f'{k} ({v})' for k, v in missing.items())}",
                             details={"missing": missing})


def _is_stale(output: Path, source: Path) -> bool:
    """出力がない、または元ファイルより古い"""
    return not output.exists() or output.stat().st_mtime_ns < Path(source).stat().st_mtime_ns


# ==============================================================================
# ワーカープールで実行する作業単位（プロセス間で受け渡すためモジュールレベル）
# ==============================================================================

def _train_item(payload: Dict[str, Any]) -> Dict[str, Any]:
    config: TrainConfig = payload["config"]
    out_dir = Path(payload["checkpoint_dir"])
    vocab = read_vocabulary(payload["vocabulary"])
    corpus = read_corpus(payload["corpus"], vocab, payload["max_len"])
    written: List[str] = []

    def save(checkpoint):
        path = out_dir / checkpoint_filename(checkpoint.spec, checkpoint.seed, checkpoint.checkpoint_tag)
        save_checkpoint(checkpoint, path, payload["float_bytes"])
        written.append(path.name)

    try:
        run = train(config, corpus, on_checkpoint=save, keep_checkpoints=False,
                    show_progress=payload["show_progress"])
    except SurprisalWorkbenchError as e:
        e.details.update({"run": config.spec.label, "seed": config.seed})
        raise
    return {"checkpoints": written, "batches": len(run.loss_trace),
            "final_loss": run.loss_trace[-1] if run.loss_trace else None}


def _surprisal_item(payload: Dict[str, Any]) -> str:
    checkpoint = load_checkpoint(payload["checkpoint"])
    vocab = read_vocabulary(payload["vocabulary"])
    table = surprisal_table(checkpoint, payload["stimuli"], vocab)
    write_surprisal_table(table, payload["output"])
    return str(payload["output"])


def _analysis_item(payload: Dict[str, Any]) -> Dict[str, Any]:
    """1つの (データセット, チェックポイント) の適合度"""
    table: PredictorTable = payload["table"]
    base: MixedFit = payload["baseline"]
    row: Dict[str, Any] = {"n_points": table.n_rows, "error": "", "converged": True}
    surprisal = read_surprisal_table(payload["surprisal"])
    row["avg_log_prob"] = avg_log_prob(surprisal, included=table.keys())
    full_table = table.with_surprisal(surprisal)

    report = collinearity_check(full_table.frame[full_table.mains + full_table.surprisal_columns])
    row["max_vif"] = report.max_vif
    row["collinearity_flag"] = report.flagged

    design = build_design(ModelFormula.for_table(full_table), full_table)
    try:
        full = fit_design(design, theta0=base.theta)
    except ConvergenceError as e:
        full = e.best_fit
        row["converged"] = False
        row["error"] = e.message
    gof = goodness_of_fit(base, full)
    row["gof"] = gof.value
    row["flagged_negative"] = gof.flagged_negative
    row["converged"] = row["converged"] and base.converged
    return row


# ==============================================================================
# サービス本体
# ==============================================================================

class PipelineService:
    """各ステージ（サブコマンド）の実行を統括するサービス"""

    def __init__(self, config: PipelineConfig, logger: Optional[ExecutionLogger] = None):
        self.config = config
        self.logger = logger

    def _log_step(self, name: str, status: str, details: Dict[str, Any] = None, duration: float = None):
        if self.logger:
            self.logger.log_step(name, status, details, duration)

    def _log_results(self, results: Sequence[WorkResult], key_format) -> List[WorkResult]:
        failed = []
        for result in results:
            if self.logger:
                self.logger.log_work_item(key_format(result.key),
                                          result.value if isinstance(result.value, dict) else {"value": result.value},
                                          result.duration, result.error.message if result.error else None)
            if not result.ok:
                failed.append(result)
        return failed

    # ------------------------------------------------------------------
    # toy-corpus
    # ------------------------------------------------------------------
    def toy_corpus(self) -> Dict[str, Any]:
        """デスク規模の入力（コーパス・刺激文・頻度ノルム）を生成"""
        cfg = self.config
        print(f"🧸 トイコーパスを生成中... ({cfg.toy_sentences}文, 刺激文{cfg.toy_stimuli}文)")
        toy = generate_toy_corpus(cfg.toy_seed, cfg.toy_sentences, cfg.toy_stimuli, cfg.max_sentence_length)
        for path in (cfg.corpus_file, cfg.stimuli_file, cfg.norms_file):
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(cfg.corpus_file, "w", encoding="utf-8") as f:
            for line in toy.corpus_lines:
                f.write(line + "\n")
        write_stimuli(toy.stimuli, cfg.stimuli_file)
        write_norms(FrequencyNorms(per_million=toy.norms), cfg.norms_file)
        summary = {"sentences": len(toy.corpus_lines), "stimuli": len(toy.stimuli), "norms": len(toy.norms)}
        self._log_step("toy_corpus", "success", summary)
        print(f"✅ トイコーパスを保存: {cfg.inputs_dir}")
        return summary

    # ------------------------------------------------------------------
    # preprocess
    # ------------------------------------------------------------------
    def preprocess(self) -> Dict[str, Any]:
        """語彙の構築と学習文のフィルタ"""
        cfg = self.config
        _require({"corpus": cfg.corpus_file, "stimuli": cfg.stimuli_file})
        start = time.time()
        stimuli = read_stimuli(cfg.stimuli_file)

        def sentences():
            with open(cfg.corpus_file, encoding="utf-8") as f:
                for line in f:
                    yield tokenize_line(line)

        print("📚 語彙を構築中...")
        vocab = build_vocabulary(sentences(), stimulus_words(stimuli), cfg.vocab_size)
        print(f"    語彙: {vocab.n_words}語 + 特殊トークン3 (V_total = {len(vocab)})")
        corpus = filter_sentences(sentences(), vocab, cfg.max_sentence_length)
        stats = corpus_statistics(corpus)
        if stats["sentences"] == 0:
            raise InputDataError("no training sentences left after vocabulary filtering")

        cfg.vocabulary_file.parent.mkdir(parents=True, exist_ok=True)
        write_vocabulary(vocab, cfg.vocabulary_file)
        write_corpus(corpus, vocab, cfg.filtered_corpus_file)
        print(f"    学習文: {stats['sentences']}文, {stats['tokens']}トークン, "
              f"平均長 {stats['mean_length']:.2f}, 最大長 {stats['max_length']}")
        summary = {**vocab.to_dict(), **stats}
        self._log_step("preprocess", "success", summary, time.time() - start)
        print(f"✅ 前処理結果を保存: {cfg.vocabulary_file.parent}")
        return summary

    # ------------------------------------------------------------------
    # train
    # ------------------------------------------------------------------
    def train(self) -> Dict[str, Any]:
        """全 (アーキテクチャ, シード) の学習。完了済みの学習はスキップ"""
        cfg = self.config
        _require({"vocabulary": cfg.vocabulary_file, "filtered corpus": cfg.filtered_corpus_file})
        vocab = read_vocabulary(cfg.vocabulary_file)
        cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        final_tag = f"epoch{cfg.epochs}"

        items: Dict[Tuple[str, int], Dict[str, Any]] = {}
        skipped = []
        for label in cfg.architectures:
            spec = ModelFactory.parse_label(label, len(vocab), **cfg.dims)
            for seed in cfg.run_seeds:
                if (cfg.checkpoint_dir / checkpoint_filename(spec, seed, final_tag)).exists():
                    skipped.append(f"{label}/s{seed}")
                    continue
                items[(label, seed)] = {
                    "config": TrainConfig(spec=spec, initial_lr=cfg.learning_rate(spec.kind), seed=seed,
                                          checkpoint_ladder=cfg.checkpoint_ladder, momentum=cfg.momentum,
                                          epochs=cfg.epochs, batch_size=cfg.batch_size),
                    "checkpoint_dir": str(cfg.checkpoint_dir),
                    "vocabulary": str(cfg.vocabulary_file),
                    "corpus": str(cfg.filtered_corpus_file),
                    "max_len": cfg.max_sentence_length,
                    "float_bytes": cfg.checkpoint_float_bytes,
                    "show_progress": cfg.show_progress and cfg.jobs == 1,
                }
        if skipped:
            print(f"⏭️ 学習済みのためスキップ: {', '.join(skipped)}")
        print(f"🏋️ 学習を開始: {len(items)}本 (並列数 {cfg.jobs})")
        start = time.time()
        results = run_work_items(_train_item, items, jobs=cfg.jobs, desc="train", show_progress=cfg.show_progress)
        failed = self._log_results(results, lambda k: f"{k[0]}/s{k[1]}")
        if failed:
            raise failed[0].error
        summary = {"runs": len(items), "skipped": len(skipped),
                   "checkpoints": sum(len(r.value["checkpoints"]) for r in results)}
        self._log_step("train", "success", summary, time.time() - start)
        print(f"✅ 学習完了: {summary['checkpoints']}個のチェックポイント")
        return summary

    # ------------------------------------------------------------------
    # analyze
    # ------------------------------------------------------------------
    def list_checkpoints(self) -> Dict[Tuple[str, int, str], Path]:
        """チェックポイントファイルを (ラベル, シード, タグ) で列挙"""
        found = {}
        if self.config.checkpoint_dir.exists():
            for path in sorted(self.config.checkpoint_dir.glob("*.ckpt")):
                match = _CHECKPOINT_NAME.match(path.name)
                if match:
                    found[(match["label"], int(match["seed"]), match["tag"])] = path
        return found

    def _surprisal_tables(self, checkpoints: Dict[Tuple[str, int, str], Path], stimuli) -> Dict[Tuple, Path]:
        cfg = self.config
        cfg.surprisal_dir.mkdir(parents=True, exist_ok=True)
        outputs = {key: cfg.surprisal_dir / path.with_suffix(".csv").name for key, path in checkpoints.items()}
        items = {key: {"checkpoint": str(checkpoints[key]), "vocabulary": str(cfg.vocabulary_file),
                       "stimuli": stimuli, "output": str(out)}
                 for key, out in outputs.items() if _is_stale(out, checkpoints[key])}
        if items:
            print(f"🔢 サプライザルを計算中: {len(items)}個のチェックポイント")
            results = run_work_items(_surprisal_item, items, jobs=cfg.jobs, desc="surprisal",
                                     show_progress=cfg.show_progress)
            failed = self._log_results(results, lambda k: f"surprisal/{k[0]}/s{k[1]}/{k[2]}")
            if failed:
                raise failed[0].error
        return outputs

    def _analysis_tables(self, norms: FrequencyNorms) -> Tuple[Dict[str, PredictorTable], Dict[str, Any]]:
        """データセット（とSPRの部分集合）ごとのベースライン用予測変数表"""
        cfg = self.config
        events: Dict[str, List[ReadingEvent]] = {}
        for kind in cfg.datasets:
            events[kind] = load_dataset(kind, cfg.reading_file(kind))
            if not events[kind]:
                raise InputDataError(f"{kind} reading data is empty", details={"path": str(cfg.reading_file(kind))})

        groups: Dict[str, List[ReadingEvent]] = dict(events)
        if cfg.spr_subset and "SPR" in events:
            subset = {e.sentence_id for kind in ("ET", "EEG") for e in events.get(kind, [])}
            if subset:
                shared, spr_only = split_spr_by_subset(events["SPR"], subset)
                if shared and spr_only:
                    groups[SPR_SHARED] = shared
                    groups[SPR_ONLY] = spr_only

        tables: Dict[str, PredictorTable] = {}
        info: Dict[str, Any] = {}
        for name in sorted(groups):
            raw = groups[name]
            kept = apply_exclusions(raw)
            table = build_predictors(kept, norms, context=raw)
            tables[name] = table
            info[name] = {"events": len(raw), "exclusions": exclusion_counts(raw), "kept": len(kept),
                          "spillover_dropped": table.n_dropped, "n_points": table.n_rows}
            print(f"    {name}: {len(raw)}件 → 分析対象 {table.n_rows}件")
        return tables, info

    def analyze(self) -> pd.DataFrame:
        """全データセット × チェックポイントの適合度を計算して results.csv に保存"""
        cfg = self.config
        checkpoints = self.list_checkpoints()
        if not checkpoints:
            raise InputDataError(f"no checkpoints found in {cfg.checkpoint_dir}",
                                 details={"path": str(cfg.checkpoint_dir)})
        _require({"vocabulary": cfg.vocabulary_file, "stimuli": cfg.stimuli_file, "norms": cfg.norms_file,
                  **{f"{k} data": cfg.reading_file(k) for k in cfg.datasets}})
        start = time.time()
        stimuli = read_stimuli(cfg.stimuli_file)
        norms = load_norms(cfg.norms_file)
        surprisal_files = self._surprisal_tables(checkpoints, stimuli)

        print("📋 予測変数表を作成中...")
        tables, info = self._analysis_tables(norms)

        print("📐 ベースラインモデルを推定中...")
        baselines: Dict[str, MixedFit] = {}
        baseline_errors: Dict[str, str] = {}
        for name, table in tables.items():
            design = build_design(ModelFormula.for_table(table, with_surprisal=False), table)
            try:
                baselines[name] = fit_design(design)
            except ConvergenceError as e:
                baselines[name] = e.best_fit
                info[name]["baseline_warning"] = e.message
            except SurprisalWorkbenchError as e:
                baseline_errors[name] = e.message
                if self.logger:
                    self.logger.log_error("baseline_fit_error", e.message, {"dataset": name})
            if name in baselines:
                info[name]["baseline"] = baselines[name].to_dict()
                info[name]["formula"] = ModelFormula(dependent=table.dependent, mains=tuple(table.mains),
                                                     extras=tuple(SURPRISAL_TERMS[table.dataset])).to_dict()

        items = {}
        for name in tables:
            for (label, seed, tag), path in surprisal_files.items():
                key = (name, label, seed, tag_sort_key(tag), tag)
                items[key] = {"table": tables[name], "baseline": baselines.get(name), "surprisal": str(path)}

        runnable = {k: v for k, v in items.items() if v["baseline"] is not None}
        print(f"🧮 混合効果モデルを推定中: {len(runnable)}件 (並列数 {cfg.jobs})")
        results = run_work_items(_analysis_item, runnable, jobs=cfg.jobs, desc="analyze",
                                 show_progress=cfg.show_progress)
        self._log_results(results, lambda k: f"{k[0]}/{k[1]}/s{k[2]}/{k[4]}")
        by_key = {r.key: r for r in results}

        rows = []
        for key in sorted(items):
            name, label, seed, _, tag = key
            spec = ModelFactory.parse_label(label, vocab_size=10)
            row = {"dataset": name, "model": spec.kind.value, "layers": spec.layers, "seed": seed,
                   "checkpoint": tag, "avg_log_prob": np.nan, "gof": np.nan, "flagged_negative": False,
                   "converged": False, "n_points": tables[name].n_rows, "error": "", "max_vif": np.nan,
                   "collinearity_flag": False}
            result = by_key.get(key)
            if result is None:
                row["error"] = f"baseline fit failed: {baseline_errors.get(name, 'unknown')}"
            elif not result.ok:
                row["error"] = result.error.message
            else:
                row.update(result.value)
            rows.append(row)
        frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)

        cfg.analysis_dir.mkdir(parents=True, exist_ok=True)
        frame.to_csv(cfg.results_file, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        metadata = {**FIT_METADATA, "datasets": info}
        with open(cfg.analysis_dir / "analysis_metadata.json", "w", encoding="utf-8") as f:
            json.dump(metadata, f, ensure_ascii=False, indent=JSON_INDENT_LEVEL, sort_keys=True, default=str)
            f.write("\n")

        n_errors = int((frame["error"] != "").sum())
        n_flagged = int(frame["flagged_negative"].sum())
        self._log_step("analyze", "success", {"rows": len(frame), "errors": n_errors, "flagged_negative": n_flagged},
                       time.time() - start)
        print(f"✅ 分析完了: {len(frame)}行 (エラー {n_errors}, 負の適合度 {n_flagged}) → {cfg.results_file}")
        return frame

    # ------------------------------------------------------------------
    # compare
    # ------------------------------------------------------------------
    def compare(self) -> Dict[str, Any]:
        """データセットごとにGAMを当てはめ、差分曲線と図を出力"""
        cfg = self.config
        _require({"analysis results": cfg.results_file})
        start = time.time()
        rows = pd.read_csv(cfg.results_file, dtype={"checkpoint": str, "error": str}, keep_default_na=False,
                           na_values=[""])
        rows["error"] = rows["error"].fillna("")
        if rows.empty:
            raise InputDataError(f"analysis results are empty: {cfg.results_file}")
        cfg.compare_dir.mkdir(parents=True, exist_ok=True)

        usable = rows[(rows["error"] == "") & ~rows["flagged_negative"].astype(bool) & rows["gof"].notna()].copy()
        usable["lm_type"] = usable["model"].astype(str) + usable["layers"].astype(str)
        spec = GamSpec(k=cfg.gam_k)
        results = {}
        summary: Dict[str, Any] = {}
        for dataset in sorted(usable["dataset"].unique()):
            points = usable[usable["dataset"] == dataset]
            print(f"📈 {dataset}: GAMを推定中 ({len(points)}点, {points['lm_type'].nunique()}種)")
            fit = fit_gam(spec, points)
            curves = [difference_smooth(fit, a, b) for a, b in cfg.comparison_pairs
                      if a in fit.levels and b in fit.levels]
            results[dataset] = (fit, curves)
            summary[dataset] = {"gam": fit.to_dict(),
                                "differences": {c.label: {"significant_intervals": c.intervals(),
                                                          "coverage": c.coverage()} for c in curves}}
        report = emit_panels(results, cfg.compare_dir)
        quality = quality_summary(rows[rows["avg_log_prob"].notna()])
        quality.to_csv(cfg.compare_dir / "quality_summary.csv", index=False, float_format=FLOAT_FORMAT,
                       lineterminator="\n")
        with open(cfg.compare_dir / "gam_summary.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, ensure_ascii=False, indent=JSON_INDENT_LEVEL, sort_keys=True, default=str)
            f.write("\n")
        self._log_step("compare", "success", {"datasets": sorted(results), "files": len(report.files)},
                       time.time() - start)
        print(f"✅ 比較完了: {len(report.files)}個のファイル → {cfg.compare_dir}")
        return summary

    # ------------------------------------------------------------------
    # synthesize
    # ------------------------------------------------------------------
    def _true_surprisal(self, stimuli, norms: FrequencyNorms) -> Tuple[pd.DataFrame, str]:
        """最も学習の進んだチェックポイントのサプライザル（なければユニグラム）"""
        checkpoints = self.list_checkpoints()
        if checkpoints and self.config.vocabulary_file.exists():
            label, seed, tag = max(checkpoints, key=lambda k: (tag_sort_key(k[2]), k[0], -k[1]))
            vocab = read_vocabulary(self.config.vocabulary_file)
            table = surprisal_table(load_checkpoint(checkpoints[(label, seed, tag)]), stimuli, vocab)
            return table, f"{label}/s{seed}/{tag}"
        return unigram_surprisal(stimuli, norms), "unigram"

    def synthesize(self) -> Dict[str, Any]:
        """既知の生成モデルから読解データを作成"""
        cfg = self.config
        _require({"stimuli": cfg.stimuli_file, "norms": cfg.norms_file})
        start = time.time()
        stimuli = read_stimuli(cfg.stimuli_file)
        norms = load_norms(cfg.norms_file)
        true_surprisal, source = self._true_surprisal(stimuli, norms)
        print(f"🧪 合成読解データを生成中 (サプライザル: {source}, γ = {cfg.synth_effect})")
        params = SynthesisParams(seed=cfg.synth_seed, surprisal_effect=cfg.synth_effect)
        datasets, sidecar = synthesize_datasets(stimuli, norms, true_surprisal, params, cfg.datasets)
        sidecar["surprisal_source"] = source
        for kind, events in datasets.items():
            path = cfg.reading_file(kind)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_dataset(events, path)
            print(f"    {kind}: {len(events)}件 → {path}")
        sidecar_path = cfg.reading_file(cfg.datasets[0]).parent / "synthesis.json"
        write_sidecar(sidecar, sidecar_path)
        self._log_step("synthesize", "success", sidecar["n_events"], time.time() - start)
        print(f"✅ 生成パラメータを保存: {sidecar_path}")
        return sidecar

