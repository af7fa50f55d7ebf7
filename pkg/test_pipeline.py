#!/usr/bin/env python3
"""
パイプライン設定・CLI・ステージ間の受け渡しのテスト
"""

import json
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from config import EXIT_INPUT_ERROR, EXIT_NUMERICAL_ERROR, EXIT_SUCCESS, FULL_SEEDS
from core.exceptions import (CheckpointFormatError, ConfigurationError, FitError, InputDataError,
                             TrainingDivergedError)
from core.interfaces import ModelKind
from core import pipeline_service
from core.pipeline_service import RESULT_COLUMNS, PipelineConfig, PipelineService
from main import build_parser, exit_code_for, main


def write_env(path: Path, **values) -> Path:
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")
    return path


class TestPipelineConfig:
    def test_defaults(self):
        config = PipelineConfig.from_file(None)
        assert config.architectures == ["gru1", "gru2", "transformer1", "transformer2"]
        assert config.seeds == list(FULL_SEEDS)
        assert config.learning_rate(ModelKind.GRU) == 0.02

    def test_parse_file(self, tmp_path):
        env = write_env(tmp_path / "run.env", OUTPUT_DIR=tmp_path / "out", SEEDS="1, 2",
                        CHECKPOINT_LADDER="1_000, 2000", DATASETS="spr, et", SPR_SUBSET="false",
                        COMPARISON_PAIRS="gru1:gru2, gru2:transformer2", LR_GRU="0.1", EMBED_DIM="16",
                        ARCHITECTURES="GRU1, gru2, transformer2")
        config = PipelineConfig.from_file(env)
        assert config.output_dir == tmp_path / "out"
        assert config.seeds == [1, 2]
        assert config.checkpoint_ladder == (1000, 2000)
        assert config.datasets == ["SPR", "ET"]
        assert not config.spr_subset
        assert config.comparison_pairs == [("gru1", "gru2"), ("gru2", "transformer2")]
        assert config.learning_rate(ModelKind.GRU) == 0.1
        assert config.learning_rate(ModelKind.TRANSFORMER) == 0.005
        assert config.dims["embed_dim"] == 16
        assert config.architectures == ["gru1", "gru2", "transformer2"]

    def test_overrides(self, tmp_path):
        env = write_env(tmp_path / "run.env", OUTPUT_DIR="somewhere", JOBS="3")
        config = PipelineConfig.from_file(env, output_dir=str(tmp_path / "cli"), jobs=None, seed_offset=10)
        assert config.output_dir == tmp_path / "cli"
        assert config.jobs == 3
        assert config.run_seeds == [s + 10 for s in FULL_SEEDS]

    def test_input_paths_default_to_output_dir(self, tmp_path):
        config = PipelineConfig.from_file(None, output_dir=tmp_path)
        assert config.corpus_file == tmp_path / "inputs" / "corpus.txt"
        assert config.stimuli_file == tmp_path / "inputs" / "stimuli.tsv"
        assert config.reading_file("EEG") == tmp_path / "synthetic" / "eeg.csv"
        assert config.results_file == tmp_path / "analysis" / "results.csv"

    def test_explicit_input_paths(self, tmp_path):
        env = write_env(tmp_path / "run.env", CORPUS_PATH="/data/corpus.txt", ET_DATA_PATH="/data/et.csv")
        config = PipelineConfig.from_file(env)
        assert config.corpus_file == Path("/data/corpus.txt")
        assert config.reading_file("ET") == Path("/data/et.csv")

    @pytest.mark.parametrize("values", [
        dict(SEEDS="a, b"),
        dict(DATASETS="MEG"),
        dict(COMPARISON_PAIRS="gru1"),
        dict(ARCHITECTURES="lstm1"),
        dict(ARCHITECTURES="gru3"),
        dict(JOBS="0"),
        dict(EPOCHS="two"),
    ])
    def test_invalid_values(self, tmp_path, values):
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_file(write_env(tmp_path / "bad.env", **values))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_file(tmp_path / "nope.env")

    def test_shipped_profiles_parse(self):
        root = Path(__file__).parent / "configs"
        desk = PipelineConfig.from_file(root / "desk.env")
        full = PipelineConfig.from_file(root / "full.env")
        assert desk.architectures == ["gru1", "transformer1"]
        assert len(full.seeds) == 8 and len(full.checkpoint_ladder) == 8


class TestCli:
    @pytest.mark.parametrize("error,code", [
        (InputDataError("x"), EXIT_INPUT_ERROR),
        (ConfigurationError("x"), EXIT_INPUT_ERROR),
        (CheckpointFormatError("x"), EXIT_INPUT_ERROR),
        (FitError("x"), EXIT_NUMERICAL_ERROR),
        (TrainingDivergedError("x"), EXIT_NUMERICAL_ERROR),
    ])
    def test_exit_codes(self, error, code):
        assert exit_code_for(error) == code

    def test_parser(self):
        args = build_parser().parse_args(["-c", "configs/desk.env", "-o", "out", "-j", "2", "--quiet", "train"])
        assert (args.config, args.out, args.jobs, args.quiet, args.command) == ("configs/desk.env", "out", 2,
                                                                               True, "train")
        with pytest.raises(SystemExit):
            build_parser().parse_args(["nonsense"])

    def test_missing_config_exits_with_input_error(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.env"), "train"]) == EXIT_INPUT_ERROR

    def test_missing_inputs(self, tmp_path):
        assert main(["--out", str(tmp_path), "--quiet", "train"]) == EXIT_INPUT_ERROR
        assert main(["--out", str(tmp_path), "--quiet", "analyze"]) == EXIT_INPUT_ERROR
        log = json.loads((tmp_path / "logs" / "latest_execution_log.json").read_text(encoding="utf-8"))
        assert log["errors"]


def fabricated_results(rng) -> pd.DataFrame:
    rows = []
    tags = ["1K", "10K", "100K", "epoch1", "epoch2"]
    for model, slope in (("gru", 4.0), ("transformer", 6.0)):
        for seed in (1, 2, 3):
            for i, tag in enumerate(tags):
                quality = -7.0 + 0.4 * i + rng.normal(0, 0.05)
                rows.append({"dataset": "ET", "model": model, "layers": 1, "seed": seed, "checkpoint": tag,
                             "avg_log_prob": quality, "gof": 40.0 + slope * (quality + 7.0) + rng.normal(0, 0.5),
                             "flagged_negative": False, "converged": True, "n_points": 500, "error": "",
                             "max_vif": 2.0, "collinearity_flag": False})
    rows.append({**rows[0], "seed": 9, "error": "fit failed", "gof": np.nan})
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def test_compare_stage(tmp_path, rng):
    env = write_env(tmp_path / "cmp.env", COMPARISON_PAIRS="gru1:transformer1", GAM_K="5", DATASETS="ET")
    results_file = tmp_path / "out" / "analysis" / "results.csv"
    results_file.parent.mkdir(parents=True)
    fabricated_results(rng).to_csv(results_file, index=False)

    assert main(["--config", str(env), "--out", str(tmp_path / "out"), "--quiet", "compare"]) == EXIT_SUCCESS
    compare_dir = tmp_path / "out" / "compare"
    for name in ("ET_scatter.svg", "ET_smooths.svg", "ET_differences.svg", "ET_diff_gru1_vs_transformer1.csv",
                 "quality_summary.csv", "gam_summary.json"):
        assert (compare_dir / name).exists(), name
    summary = json.loads((compare_dir / "gam_summary.json").read_text(encoding="utf-8"))
    assert summary["ET"]["gam"]["levels"] == ["gru1", "transformer1"]
    assert "gru1 - transformer1" in summary["ET"]["differences"]
    points = pd.read_csv(compare_dir / "ET_points.csv")
    assert len(points) == 30

    assert main(["--out", str(tmp_path / "out"), "logs"]) == EXIT_SUCCESS


class TestSurprisalCache:
    @pytest.fixture
    def service(self, tmp_path, monkeypatch):
        scheduled = []

        def fake_run(func, items, **kwargs):
            scheduled.extend(items)
            return []

        monkeypatch.setattr(pipeline_service, "run_work_items", fake_run)
        service = PipelineService(PipelineConfig.from_file(None, output_dir=tmp_path))
        service.scheduled = scheduled
        return service

    @staticmethod
    def checkpoint(service, name="gru1_s1_epoch1.ckpt"):
        service.config.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        path = service.config.checkpoint_dir / name
        path.write_bytes(b"weights")
        return {("gru1", 1, "epoch1"): path}

    def test_missing_table_is_computed(self, service):
        service._surprisal_tables(self.checkpoint(service), stimuli=[])
        assert service.scheduled == [("gru1", 1, "epoch1")]

    def test_fresh_table_is_reused(self, service):
        checkpoints = self.checkpoint(service)
        service.config.surprisal_dir.mkdir(parents=True)
        table = service.config.surprisal_dir / "gru1_s1_epoch1.csv"
        table.write_text("cached\n", encoding="utf-8")
        ckpt_time = checkpoints[("gru1", 1, "epoch1")].stat().st_mtime_ns
        os.utime(table, ns=(ckpt_time + 10**9, ckpt_time + 10**9))
        outputs = service._surprisal_tables(checkpoints, stimuli=[])
        assert service.scheduled == []
        assert outputs[("gru1", 1, "epoch1")] == table

    def test_table_older_than_checkpoint_is_recomputed(self, service):
        checkpoints = self.checkpoint(service)
        service.config.surprisal_dir.mkdir(parents=True)
        table = service.config.surprisal_dir / "gru1_s1_epoch1.csv"
        table.write_text("stale\n", encoding="utf-8")
        ckpt_time = checkpoints[("gru1", 1, "epoch1")].stat().st_mtime_ns
        os.utime(table, ns=(ckpt_time - 10**9, ckpt_time - 10**9))
        service._surprisal_tables(checkpoints, stimuli=[])
        assert service.scheduled == [("gru1", 1, "epoch1")]


def desk_env(path: Path, **overrides) -> Path:
    values = dict(TOY_SEED=3, TOY_SENTENCES=400, TOY_STIMULI=24, VOCAB_SIZE=5000, ARCHITECTURES="gru1, transformer1",
                  EMBED_DIM=8, GRU_HIDDEN=8, GRU_PROJ=8, HEADS=2, FFN_DIM=16, SEEDS="1, 2", EPOCHS=2, BATCH_SIZE=10,
                  CHECKPOINT_LADDER="50, 150, 250", CHECKPOINT_FLOAT_BYTES=4, DATASETS="SPR, EEG", SPR_SUBSET="false",
                  SYNTH_EFFECT=0.5, GAM_K=4, JOBS=1, COMPARISON_PAIRS="gru1:transformer1")
    values.update(overrides)
    return write_env(path, **values)


@pytest.mark.slow
def test_failed_fit_is_recorded_while_other_rows_complete(tmp_path, monkeypatch):
    env = desk_env(tmp_path / "one.env", ARCHITECTURES="gru1", SEEDS=1, EPOCHS=1, CHECKPOINT_LADDER="100, 200",
                   DATASETS="EEG")
    out = tmp_path / "out"
    for stage in ("toy-corpus", "preprocess", "train", "synthesize"):
        assert main(["--config", str(env), "--out", str(out), "--quiet", stage]) == EXIT_SUCCESS, stage

    real_fit_design = pipeline_service.fit_design
    full_fits = []

    def fit_design_once_singular(design, **kwargs):
        if "surprisal" not in design.names:
            return real_fit_design(design, **kwargs)
        full_fits.append(design)
        if len(full_fits) > 1:
            return real_fit_design(design, **kwargs)

        def singular(matrix):
            raise np.linalg.LinAlgError("Singular matrix")

        with monkeypatch.context() as patch:
            patch.setattr(np.linalg, "inv", singular)
            return real_fit_design(design, **kwargs)

    monkeypatch.setattr(pipeline_service, "fit_design", fit_design_once_singular)
    assert main(["--config", str(env), "--out", str(out), "--quiet", "analyze"]) == EXIT_SUCCESS

    results = pd.read_csv(out / "analysis" / "results.csv", dtype={"error": str}, keep_default_na=False,
                          na_values=[""])
    results["error"] = results["error"].fillna("")
    assert len(results) == 3 == len(full_fits)
    failed = results[results["error"].str.contains("solve failed")]
    assert len(failed) == 1
    assert failed["gof"].isna().all()
    assert results.drop(failed.index)["gof"].notna().all()


@pytest.mark.slow
def test_desk_pipeline_end_to_end(tmp_path):
    env = desk_env(tmp_path / "tiny.env")
    out = tmp_path / "out"

    def run(stage):
        return main(["--config", str(env), "--out", str(out), "--quiet", stage])

    for stage in ("toy-corpus", "preprocess", "train", "synthesize", "analyze"):
        assert run(stage) == EXIT_SUCCESS, stage

    tags = ("50", "150", "250", "epoch1", "epoch2")
    checkpoints = sorted((out / "checkpoints").glob("*.ckpt"))
    assert [p.name for p in checkpoints] == sorted(f"{label}_s{seed}_{tag}.ckpt" for label in ("gru1", "transformer1")
                                                   for seed in (1, 2) for tag in tags)
    before = {p.name: p.stat().st_mtime_ns for p in checkpoints}
    assert run("train") == EXIT_SUCCESS
    assert {p.name: p.stat().st_mtime_ns for p in checkpoints} == before

    results = pd.read_csv(out / "analysis" / "results.csv", keep_default_na=False, na_values=[""])
    assert list(results.columns) == RESULT_COLUMNS
    assert set(results["dataset"]) == {"SPR", "EEG"}
    assert len(results) == 2 * len(checkpoints)
    assert results["avg_log_prob"].notna().all()
    assert (results["avg_log_prob"] < 0).all()
    assert (out / "analysis" / "analysis_metadata.json").exists()
    assert (out / "synthetic" / "synthesis.json").exists()

    # 学習が進んだチェックポイントほど適合度が高い
    for (dataset, model), group in results[results["gof"].notna()].groupby(["dataset", "model"]):
        rho, _ = spearmanr(group["avg_log_prob"], group["gof"])
        assert rho > 0.6, (dataset, model, rho)

    assert run("compare") == EXIT_SUCCESS
    summary = json.loads((out / "compare" / "gam_summary.json").read_text(encoding="utf-8"))
    assert set(summary) >= {"SPR", "EEG"}
    for dataset in ("SPR", "EEG"):
        assert (out / "compare" / f"{dataset}_smooths.svg").exists()
