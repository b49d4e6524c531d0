"""Permutation-test mechanics and invariances."""

from __future__ import annotations

import numpy as np
import pytest

from blockedcv.anova import CV_SEEDS, RF_SEEDS, SETTING, ModelSpec, fit_anova
from blockedcv.design import RCV
from blockedcv.errors import AnovaError
from blockedcv.permtest import (
    PermutationPlan,
    block_residuals,
    format_p_value,
    permutation_test,
)
from blockedcv.simcheck import SyntheticModel, simulate_table

from test_anova import bcv_table, hand_2x2x2_table, random_table


def test_block_residual_identity_model_exact():
    # With zero residual, r is constant across blocks for each setting and
    # equals mu + tau_m.
    fit = fit_anova(hand_2x2x2_table())
    r = block_residuals(fit).reshape(2, 2, 2)  # (m, i, j)
    assert np.allclose(r[0], 4.0)
    assert np.allclose(r[1], 5.0)


def test_block_residual_identity_random_tables():
    for seed in range(8):
        t = random_table(seed)
        fit = fit_anova(t)
        r = block_residuals(fit)
        cube = t.cell_cube()
        setting_means = cube.reshape(t.n_settings, -1).mean(axis=1)
        rhs = setting_means[t.setting_index] + fit.residuals
        np.testing.assert_allclose(r, rhs, atol=1e-12)
        assert np.mean(r) == pytest.approx(fit.mu, rel=1e-12)


def test_constant_table_all_p_one():
    t = bcv_table(np.full((3, 2, 2), 0.25), 3, 2, 2)
    fit = fit_anova(t)
    res = permutation_test(fit, PermutationPlan(n_permutations=99, seed=1))
    for tt in res.tests.values():
        assert tt.observed == pytest.approx(0.0, abs=1e-20)
        assert tt.p_value == 1.0


def test_strong_effect_attains_min_p():
    model = SyntheticModel(0.5, (-0.3, 0.0, 0.3), 0.01, 0.01, 0.005, seed=5)
    t = simulate_table(model, "bcv", 3, 3)
    fit = fit_anova(t)
    res = permutation_test(fit, PermutationPlan(terms=(SETTING,), n_permutations=999, seed=2))
    assert res.p_value(SETTING) == pytest.approx(1 / 1000)


def test_p_floor_and_formatting():
    assert format_p_value(1 / 1000, 999) == "<=0.001"
    assert format_p_value(0.5, 999) == "0.5"


def test_same_seed_bit_identical():
    t = random_table(3)
    fit = fit_anova(t)
    plan = PermutationPlan(n_permutations=200, seed=77)
    r1 = permutation_test(fit, plan)
    r2 = permutation_test(fit, plan)
    for k in r1.tests:
        assert r1.tests[k].p_value == r2.tests[k].p_value
        assert r1.tests[k].n_greater_equal == r2.tests[k].n_greater_equal
        assert r1.tests[k].perm_mean == r2.tests[k].perm_mean


def test_sse_and_mse_statistics_agree():
    t = random_table(5)
    fit = fit_anova(t)
    p_sse = permutation_test(fit, PermutationPlan(n_permutations=300, seed=3, statistic="sse"))
    p_mse = permutation_test(fit, PermutationPlan(n_permutations=300, seed=3, statistic="mse"))
    for k in p_sse.tests:
        assert p_sse.tests[k].p_value == p_mse.tests[k].p_value


def test_shift_and_scale_invariance():
    t = random_table(6)
    fit = fit_anova(t)
    base = permutation_test(fit, PermutationPlan(n_permutations=250, seed=4))
    shifted = bcv_table(t.err.reshape(6, 3, 2) + 3.0, 6, 3, 2)
    scaled = bcv_table(t.err.reshape(6, 3, 2) * 4.0, 6, 3, 2)
    for other in (shifted, scaled):
        res = permutation_test(fit_anova(other), PermutationPlan(n_permutations=250, seed=4))
        for k in base.tests:
            assert res.tests[k].p_value == base.tests[k].p_value


def test_rcv_fixed_term_uses_raw_observations():
    model = SyntheticModel(0.4, (-0.05, 0.05), 0.02, 0.02, 0.03, seed=6)
    t = simulate_table(model, RCV, 10)
    fit = fit_anova(t)
    r = block_residuals(fit)
    np.testing.assert_array_equal(r, t.err)
    res = permutation_test(fit, PermutationPlan(n_permutations=199, seed=5))
    assert set(res.tests) == {SETTING}


def test_random_term_residualizes_on_others():
    # Observed statistic for a block term must equal its SSE computed from
    # y minus every other term's effects.
    t = random_table(7, M=4, I=3, J=2)
    fit = fit_anova(t)
    res = permutation_test(fit, PermutationPlan(terms=(CV_SEEDS,), n_permutations=50, seed=6))
    base = t.err - fit.terms[RF_SEEDS].cell_effects - fit.terms[SETTING].cell_effects
    cube = base.reshape(4, 3, 2)
    level_means = cube.mean(axis=(0, 2))
    grand = base.mean()
    expected = float(((level_means - grand) ** 2 * 8).sum())
    assert res.tests[CV_SEEDS].observed == pytest.approx(expected, rel=1e-10)


def test_joint_term_statistic_is_sum():
    t = random_table(8)
    fit = fit_anova(t)
    single = permutation_test(fit, PermutationPlan(terms=(CV_SEEDS, RF_SEEDS), n_permutations=10, seed=7))
    joint = permutation_test(fit, PermutationPlan(terms=((CV_SEEDS, RF_SEEDS),), n_permutations=10, seed=7))
    got = joint.tests[f"{CV_SEEDS}+{RF_SEEDS}"].observed
    assert got == pytest.approx(
        single.tests[CV_SEEDS].observed + single.tests[RF_SEEDS].observed, rel=1e-12
    )


def test_joint_mixing_kinds_rejected():
    t = random_table(9)
    fit = fit_anova(t)
    with pytest.raises(AnovaError, match="mixes"):
        permutation_test(fit, PermutationPlan(terms=((CV_SEEDS, SETTING),), n_permutations=10, seed=8))


def test_plan_validation():
    with pytest.raises(AnovaError):
        PermutationPlan(n_permutations=0)
    with pytest.raises(AnovaError):
        PermutationPlan(statistic="f")
