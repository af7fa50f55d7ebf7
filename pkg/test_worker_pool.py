#!/usr/bin/env python3
"""
ワーカープールのテスト
"""

import pytest

from core.exceptions import InputDataError
from utils.worker_pool import run_work_items


def square(value):
    if value < 0:
        raise InputDataError(f"negative input {value}", details={"value": value})
    return value * value


def explode(value):
    raise ValueError("not an application error")


@pytest.mark.parametrize("jobs", [1, 2])
def test_results_sorted_by_key(jobs):
    items = {("b", 2): 3, ("a", 1): 2, ("a", 2): 4}
    results = run_work_items(square, items, jobs=jobs, show_progress=False)
    assert [r.key for r in results] == [("a", 1), ("a", 2), ("b", 2)]
    assert [r.value for r in results] == [4, 16, 9]
    assert all(r.ok and r.duration >= 0 for r in results)


@pytest.mark.parametrize("jobs", [1, 2])
def test_application_errors_are_recorded(jobs):
    results = run_work_items(square, {1: 5, 2: -1, 3: 1}, jobs=jobs, show_progress=False)
    failed = [r for r in results if not r.ok]
    assert [r.key for r in failed] == [2]
    assert isinstance(failed[0].error, InputDataError)
    assert failed[0].error.details == {"value": -1}
    assert [r.value for r in results if r.ok] == [25, 1]


def test_other_errors_propagate():
    with pytest.raises(ValueError):
        run_work_items(explode, {1: 0}, jobs=1, show_progress=False)


def test_empty_items():
    assert run_work_items(square, {}, jobs=4, show_progress=False) == []
