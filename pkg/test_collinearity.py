#!/usr/bin/env python3
"""
多重共線性チェック（VIF・相関）のテスト
"""

import math

import numpy as np
import pandas as pd
import pytest

from analysis.collinearity import collinearity_check
from core.exceptions import InputDataError


def orthonormal_columns(rng, n, k):
    """中心化した互いに直交する列（各列のノルムは1）"""
    raw = rng.standard_normal((n, k))
    raw -= raw.mean(axis=0)
    q, _ = np.linalg.qr(raw)
    return q


def test_orthogonal_columns_have_unit_vif(rng):
    report = collinearity_check(orthonormal_columns(rng, 200, 4))
    for value in report.vif.values():
        assert value == pytest.approx(1.0, abs=1e-10)
    assert not report.flagged


def test_near_duplicate_is_flagged(rng):
    x1 = rng.standard_normal(500)
    frame = pd.DataFrame({"x1": x1, "x2": x1 + rng.normal(0, 1e-3, 500), "x3": rng.standard_normal(500)})
    report = collinearity_check(frame)
    assert report.vif["x1"] > 15 and report.vif["x2"] > 15
    assert set(report.flagged_vif) == {"x1", "x2"}
    assert [(a, b) for a, b, _ in report.flagged_pairs] == [("x1", "x2")]
    assert report.max_vif > 15


def test_correlation_flag_without_vif_flag(rng):
    u = orthonormal_columns(rng, 300, 3)
    r = 0.95
    x2 = r * u[:, 0] + math.sqrt(1 - r ** 2) * u[:, 1]
    report = collinearity_check(np.column_stack([u[:, 0], x2, u[:, 2]]), names=["a", "b", "c"])
    assert report.flagged_pairs[0][:2] == ("a", "b")
    assert report.flagged_pairs[0][2] == pytest.approx(0.95, abs=1e-10)
    assert report.vif["a"] == pytest.approx(1 / (1 - r ** 2), rel=1e-8)
    assert report.flagged_vif == []
    assert report.flagged


def test_perfect_collinearity_is_infinite(rng):
    x1, x2 = rng.standard_normal(100), rng.standard_normal(100)
    report = collinearity_check(pd.DataFrame({"x1": x1, "x2": x2, "sum": x1 + x2}))
    assert math.isinf(report.vif["sum"])
    assert "sum" in report.flagged_vif
    assert report.to_dict()["vif"]["sum"] == float("inf")


def test_needs_three_columns(rng):
    with pytest.raises(InputDataError):
        collinearity_check(rng.standard_normal((50, 2)))
