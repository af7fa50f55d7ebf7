#!/usr/bin/env python3
"""
線形混合効果モデル（計画行列・最尤推定・適合度）のテスト
"""

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from config import CHI2_95_DF1
from core.exceptions import ConfigurationError, ConvergenceError, FitError, RankDeficiencyError
from analysis.mixed_effects import (INTERCEPT, MixedFit, ModelFormula, build_design, fit_design, fit_ml,
                                    goodness_of_fit)
from reading.predictors import DATASET_MAINS


def grouped_frame(rng, n_subjects=12, n_items=15, mains=("a", "b"), surprisal_effect=0.0, subject_sd=0.6,
                  item_sd=0.4):
    """被験者 × 項目の完全交差データ"""
    subjects = np.repeat(np.arange(n_subjects), n_items)
    items = np.tile(np.arange(n_items), n_subjects)
    n = len(subjects)
    frame = pd.DataFrame({"subject": [f"s{s}" for s in subjects], "item": [f"i{i}" for i in items]})
    y = rng.normal(0, subject_sd, n_subjects)[subjects] + rng.normal(0, item_sd, n_items)[items]
    for j, name in enumerate(mains):
        frame[name] = rng.standard_normal(n)
        y = y + 0.3 * (j + 1) * frame[name].to_numpy()
    frame["surprisal"] = rng.standard_normal(n)
    frame["y"] = y + surprisal_effect * frame["surprisal"].to_numpy() + rng.standard_normal(n)
    return frame


class TestBuildDesign:
    @pytest.mark.parametrize("dataset,expected", [("SPR", 1 + 6 + 15), ("EEG", 1 + 4 + 6), ("ET", 1 + 5 + 10)])
    def test_fixed_column_count(self, rng, dataset, expected):
        mains = DATASET_MAINS[dataset]
        frame = grouped_frame(rng, mains=mains)
        formula = ModelFormula(dependent="y", mains=mains)
        assert build_design(formula, frame).X.shape[1] == expected
        with_surprisal = ModelFormula(dependent="y", mains=mains, extras=("surprisal",))
        design = build_design(with_surprisal, frame)
        assert design.X.shape[1] == expected + 1
        assert design.names[-1] == "surprisal"
        assert not any("surprisal" in name for name in design.names[:-1])

    def test_single_predictor_without_interactions(self, rng):
        frame = grouped_frame(rng, mains=("a",))
        formula = ModelFormula(dependent="y", mains=("a",), interaction_order=0, subject=None, item=None)
        design = build_design(formula, frame)
        np.testing.assert_array_equal(design.X, np.column_stack([np.ones(len(frame)), frame["a"]]))
        assert design.Z.shape[1] == 0

    def test_random_structure(self, rng):
        frame = grouped_frame(rng, n_subjects=5, n_items=7, mains=("a", "b"))
        design = build_design(ModelFormula(dependent="y", mains=("a", "b")), frame)
        # 被験者ごとの切片と2つの傾き + 項目切片
        assert design.Z.shape == (35, 5 * 3 + 7)
        assert design.term_labels == [f"{INTERCEPT}|subject", "a|subject", "b|subject", f"{INTERCEPT}|item"]

    def test_aliased_column_named(self, rng):
        frame = grouped_frame(rng, mains=("a", "b"))
        frame["c"] = 2.0 * frame["a"]
        with pytest.raises(RankDeficiencyError) as info:
            build_design(ModelFormula(dependent="y", mains=("a", "b", "c"), interaction_order=0), frame)
        assert set(info.value.details["aliased"]) & {"a", "c"}

    def test_missing_column(self, rng):
        frame = grouped_frame(rng)
        with pytest.raises(ConfigurationError):
            build_design(ModelFormula(dependent="y", mains=("a", "zzz")), frame)


class TestFitML:
    def test_empty_z_equals_ols(self, rng):
        n = 80
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        y = X @ np.array([1.0, -0.5, 2.0]) + rng.standard_normal(n)
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        rss = float(np.sum((y - X @ beta) ** 2))
        for Z in (None, sp.csc_matrix((n, 0))):
            fit = fit_ml(X, Z, y)
            np.testing.assert_allclose(fit.beta, beta, atol=1e-8)
            assert fit.deviance == pytest.approx(n * (1 + np.log(2 * np.pi * rss / n)), abs=1e-8)

    def test_balanced_one_way_closed_form(self, rng):
        g, m = 8, 6
        groups = np.repeat(np.arange(g), m)
        y = 3.0 + rng.normal(0, 2.0, g)[groups] + rng.standard_normal(g * m)
        X = np.ones((g * m, 1))
        Z = sp.csc_matrix((np.ones(g * m), (np.arange(g * m), groups)), shape=(g * m, g))
        fit = fit_ml(X, Z, y, term_labels=["group"])

        means = y.reshape(g, m).mean(axis=1)
        ssw = float(np.sum((y.reshape(g, m) - means[:, None]) ** 2))
        ssb = float(m * np.sum((means - y.mean()) ** 2))
        msw = ssw / (g * (m - 1))
        sigma2_group = (ssb / g - msw) / m
        assert sigma2_group > 0
        assert fit.sigma2 == pytest.approx(msw, rel=1e-4)
        assert fit.variance_components["group"] == pytest.approx(sigma2_group, rel=1e-4)
        assert fit.beta[0] == pytest.approx(y.mean(), rel=1e-8)
        assert fit.converged

    def test_nested_models_decrease_deviance(self, rng):
        frame = grouped_frame(rng, surprisal_effect=0.1)
        base = fit_design(build_design(ModelFormula(dependent="y", mains=("a", "b")), frame))
        full_design = build_design(ModelFormula(dependent="y", mains=("a", "b"), extras=("surprisal",)), frame)
        full = fit_design(full_design, theta0=base.theta)
        assert full.deviance <= base.deviance + 1e-6
        assert np.all(np.isfinite(full.se))
        assert all(v >= 0 for v in full.variance_components.values())

    def test_row_order_does_not_matter(self, rng):
        frame = grouped_frame(rng, n_subjects=6, n_items=8)
        formula = ModelFormula(dependent="y", mains=("a", "b"), subject_slopes=False)
        first = fit_design(build_design(formula, frame))
        shuffled = frame.sample(frac=1.0, random_state=3).reset_index(drop=True)
        second = fit_design(build_design(formula, shuffled))
        assert second.deviance == pytest.approx(first.deviance, abs=1e-6)

    def test_rescaled_predictor_keeps_deviance(self, rng):
        frame = grouped_frame(rng, n_subjects=6, n_items=8)
        formula = ModelFormula(dependent="y", mains=("a", "b"), subject_slopes=False)
        first = fit_design(build_design(formula, frame))
        second = fit_design(build_design(formula, frame.assign(a=frame["a"] * 10)))
        assert second.deviance == pytest.approx(first.deviance, abs=1e-4)

    def test_non_convergence_carries_best_fit(self, rng):
        frame = grouped_frame(rng, n_subjects=6, n_items=8)
        design = build_design(ModelFormula(dependent="y", mains=("a",)), frame)
        with pytest.raises(ConvergenceError) as info:
            fit_design(design, max_evaluations=3, restarts=0)
        assert isinstance(info.value.best_fit, MixedFit)
        assert not info.value.best_fit.converged

    def test_singular_solve_becomes_fit_error(self, rng, monkeypatch):
        frame = grouped_frame(rng, n_subjects=6, n_items=8)
        design = build_design(ModelFormula(dependent="y", mains=("a",), subject_slopes=False), frame)

        def singular(matrix):
            raise np.linalg.LinAlgError("Singular matrix")

        monkeypatch.setattr(np.linalg, "inv", singular)
        with pytest.raises(FitError) as info:
            fit_design(design)
        assert isinstance(info.value.original_error, np.linalg.LinAlgError)
        assert "theta" in info.value.details
        with pytest.raises(FitError):
            fit_ml(design.X, None, design.y)

    def test_too_few_rows(self):
        with pytest.raises(FitError):
            fit_ml(np.ones((2, 1)), None, np.ones(2))


def fake_fit(names, deviance, n=100, surprisal=0.0):
    beta = np.array([surprisal if name == "surprisal" else 0.0 for name in names])
    return MixedFit(names=list(names), beta=beta, se=np.ones(len(names)), theta=np.zeros(0), sigma2=1.0,
                    deviance=deviance, n=n)


class TestGoodnessOfFit:
    def test_identical_fits(self):
        base = fake_fit([INTERCEPT, "surprisal"], 120.0, surprisal=0.3)
        assert goodness_of_fit(base, base).value == 0.0

    def test_negative_coefficient_flips_sign(self):
        base = fake_fit([INTERCEPT], 110.0)
        full = fake_fit([INTERCEPT, "surprisal"], 100.0, surprisal=-0.2)
        gof = goodness_of_fit(base, full)
        assert gof.value == pytest.approx(-10.0)
        assert gof.raw_value == pytest.approx(10.0)
        assert gof.flagged_negative
        assert goodness_of_fit(base, full, surprisal_coefficient=0.5).value == pytest.approx(10.0)

    def test_row_mismatch(self):
        with pytest.raises(FitError):
            goodness_of_fit(fake_fit([INTERCEPT], 10.0, n=50), fake_fit([INTERCEPT, "surprisal"], 9.0, n=51))

    def test_missing_base_effect(self):
        with pytest.raises(FitError):
            goodness_of_fit(fake_fit([INTERCEPT, "a"], 10.0), fake_fit([INTERCEPT, "surprisal"], 9.0))

    def test_real_effect_is_detected(self, rng):
        frame = grouped_frame(rng, surprisal_effect=0.4)
        base = fit_design(build_design(ModelFormula(dependent="y", mains=("a", "b"), subject_slopes=False), frame))
        full = fit_design(build_design(ModelFormula(dependent="y", mains=("a", "b"), extras=("surprisal",),
                                                    subject_slopes=False), frame), theta0=base.theta)
        gof = goodness_of_fit(base, full)
        assert gof.value > CHI2_95_DF1
        assert not gof.flagged_negative

    def test_reversed_effect_is_flagged(self, rng):
        frame = grouped_frame(rng, surprisal_effect=-0.4)
        base = fit_design(build_design(ModelFormula(dependent="y", mains=("a",), subject_slopes=False), frame))
        full = fit_design(build_design(ModelFormula(dependent="y", mains=("a",), extras=("surprisal",),
                                                    subject_slopes=False), frame))
        gof = goodness_of_fit(base, full)
        assert gof.flagged_negative
        assert gof.value < -CHI2_95_DF1


@pytest.mark.slow
def test_recovers_generating_parameters():
    """20回の反復で固定効果は3標準誤差以内、分散成分の平均は真値の25%以内"""
    truth = {INTERCEPT: 0.0, "a": 0.3, "b": 0.6, "a:b": 0.0, "surprisal": 0.25}
    formula = ModelFormula(dependent="y", mains=("a", "b"), extras=("surprisal",), subject_slopes=False)
    within = []
    components = []
    for seed in range(20):
        frame = grouped_frame(np.random.default_rng(500 + seed), n_subjects=30, n_items=40,
                              surprisal_effect=truth["surprisal"])
        fit = fit_design(build_design(formula, frame))
        within += [abs(fit.coef(name) - value) <= 3 * fit.se[fit.names.index(name)] for name, value in truth.items()]
        components.append([fit.variance_components[f"{INTERCEPT}|subject"],
                           fit.variance_components[f"{INTERCEPT}|item"], fit.sigma2])
    assert np.mean(within) >= 0.95
    np.testing.assert_allclose(np.mean(components, axis=0), [0.6 ** 2, 0.4 ** 2, 1.0], rtol=0.25)


@pytest.mark.slow
def test_power_and_null_behaviour():
    """n = 5000 で効果ありなら大半で χ²(1) の臨界値を超え、効果なしなら中央値は臨界値未満"""
    base_formula = ModelFormula(dependent="y", mains=("a", "b"), subject_slopes=False)
    full_formula = ModelFormula(dependent="y", mains=("a", "b"), extras=("surprisal",), subject_slopes=False)

    def replicate(seed, effect):
        frame = grouped_frame(np.random.default_rng(seed), n_subjects=50, n_items=100, surprisal_effect=effect)
        assert len(frame) == 5000
        base = fit_design(build_design(base_formula, frame))
        full = fit_design(build_design(full_formula, frame), theta0=base.theta)
        return goodness_of_fit(base, full)

    effects = [replicate(seed, 0.15) for seed in range(50)]
    nulls = [replicate(100 + seed, 0.0) for seed in range(50)]
    reversed_effects = [replicate(200 + seed, -0.15) for seed in range(5)]
    assert np.mean([g.value > CHI2_95_DF1 for g in effects]) >= 0.9
    assert np.median([g.raw_value for g in nulls]) < CHI2_95_DF1
    assert all(g.flagged_negative and g.value < 0 for g in reversed_effects)
