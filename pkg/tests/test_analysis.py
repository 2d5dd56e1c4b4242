from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from avloc.analysis import (
    anova_oneway_between,
    bias_decomposition,
    bias_table_csv,
    compare_human_model,
    er_bars_svg,
    er_table_csv,
    error_rates,
    f_sf,
    paired_t,
    pooled_error_rate,
    rm_anova,
    rm_anova_two_way,
    subject_error_rates,
    summary_text,
    t_sf_two_sided,
    ventriloquism_bias,
)
from avloc.model import BehavioralRecord
from avloc.trials import Condition, TrialSpec, enumerate_trials

SYL = ("ha", "wa", "ba")


def rec(trial, response, subject="s00", strategy="auditory", source="oracle"):
    return BehavioralRecord(subject_id=subject, trial=trial, response=response,
                            source=source, strategy=strategy)


def make_trial(cond, audio=0, lips=None, arm=None, trial_id=0, session=1):
    return TrialSpec(trial_id, cond, audio, lips_pos=lips, arm_pos=arm,
                     syllables=SYL, session=session)


# --- error rates -----------------------------------------------------------------

def test_error_rates_all_correct():
    records = [rec(t, t.audio_pos) for t in enumerate_trials(seed=0)]
    for group_by in ("category", "condition", "session"):
        rates = error_rates(records, group_by)
        assert rates and all(v == 0.0 for v in rates.values())


def test_error_rates_category_excludes_lva_and_folds_baseline():
    trials = enumerate_trials(seed=0)
    records = [rec(t, (t.audio_pos + 1) % 4) for t in trials]
    rates = error_rates(records, "category")
    assert set(rates) == {"congruent", "central", "lateral", "one_gap", "two_gap"}
    assert all(v == 1.0 for v in rates.values())


def test_error_rates_rejects_unknown_group():
    with pytest.raises(ValueError):
        error_rates([], "syllable")


def test_pooled_equals_weighted_group_mean():
    rng = np.random.default_rng(0)
    trials = enumerate_trials(seed=1)
    records = [rec(t, int(rng.integers(4))) for t in trials]
    rates = error_rates(records, "condition")
    counts = {}
    for t in trials:
        counts[t.condition.value] = counts.get(t.condition.value, 0) + 1
    weighted = sum(rates[c] * counts[c] for c in rates) / sum(counts.values())
    assert pooled_error_rate(records) == pytest.approx(weighted, abs=1e-12)


def test_oracle_dataset_category_and_strategy_rates(oracle_dataset):
    rates = error_rates(oracle_dataset.records, "category")
    assert rates["congruent"] == pytest.approx(0.07, abs=0.03)
    assert rates["central"] == pytest.approx(0.64, abs=0.03)
    assert rates["one_gap"] == pytest.approx(0.59, abs=0.03)
    assert rates["lateral"] == pytest.approx(0.59, abs=0.03)
    assert rates["two_gap"] == pytest.approx(0.56, abs=0.03)
    strat = error_rates(oracle_dataset.records, "strategy")
    assert strat["auditory"] == pytest.approx(0.20, abs=0.03)
    assert strat["visual"] == pytest.approx(0.54, abs=0.03)
    assert strat["mixed"] == pytest.approx(0.43, abs=0.03)


# --- ventriloquism bias ------------------------------------------------------------

def test_bias_zero_when_always_audio():
    records = [rec(t, t.audio_pos) for t in enumerate_trials(seed=0)]
    bias = ventriloquism_bias(records)
    assert all(v == 0.0 for v in bias.values())


def test_bias_one_when_lips_followed():
    trials = [t for t in enumerate_trials(seed=0)
              if t.condition is Condition.LIPS]
    records = [rec(t, t.lips_pos) for t in trials]
    bias = ventriloquism_bias(records)
    assert bias["lips"] == 1.0


def test_bias_ordering_on_oracle_set(oracle_dataset):
    bias = ventriloquism_bias(oracle_dataset.records)
    assert bias["lips_arm"] >= bias["lips"]
    assert bias["lips"] > bias["lips_vs_arm_lips"]
    assert bias["lips_vs_arm_lips"] > bias["arm"]


def test_bias_decomposition_sums_to_one(oracle_dataset):
    decomp = bias_decomposition(oracle_dataset.records)
    for cond, parts in decomp.items():
        total = parts["toward_visual"] + parts["audio_correct"] + parts["other_error"]
        assert total == pytest.approx(1.0, abs=1e-9)


# --- rm ANOVA -----------------------------------------------------------------------

def test_rm_anova_identical_columns():
    r = rm_anova([[1.0, 1.0], [5.0, 5.0], [2.0, 2.0]])
    assert r.F == 0.0
    assert r.p == 1.0


def test_rm_anova_hand_computed_degenerate_fixture():
    # Rational arithmetic: grand mean 5/2; column means 2 and 3 give
    # SS_treatment = 3*((1/2)^2 + (1/2)^2) = 3/2; subject means 3/2, 5/2, 7/2
    # give SS_subject = 2*(1+0+1) = 4; SS_total = 11/2, so the residual is 0.
    grand = Fraction(1 + 2 + 2 + 3 + 3 + 4, 6)
    assert grand == Fraction(5, 2)
    ss_treat = 3 * ((Fraction(2) - grand) ** 2 + (Fraction(3) - grand) ** 2)
    assert ss_treat == Fraction(3, 2)
    r = rm_anova([[1.0, 2.0], [2.0, 3.0], [3.0, 4.0]])
    assert r.degenerate
    assert r.p < 1e-300


def test_rm_anova_matches_scipy_reference():
    # Independent oracle: classic one-way RM ANOVA via scipy's F survival
    # function on hand-assembled sums of squares.
    rng = np.random.default_rng(7)
    m = rng.normal(size=(12, 4))
    r = rm_anova(m)
    n, k = m.shape
    grand = m.mean()
    ss_treat = n * ((m.mean(axis=0) - grand) ** 2).sum()
    ss_sub = k * ((m.mean(axis=1) - grand) ** 2).sum()
    ss_res = ((m - grand) ** 2).sum() - ss_treat - ss_sub
    f_ref = (ss_treat / (k - 1)) / (ss_res / ((n - 1) * (k - 1)))
    assert r.F == pytest.approx(f_ref, rel=1e-10)
    assert r.p == pytest.approx(scipy.stats.f.sf(f_ref, k - 1, (n - 1) * (k - 1)),
                                rel=1e-9)
    assert 0.0 <= r.eta_squared <= 1.0


def test_rm_anova_row_order_invariant():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(10, 3))
    a = rm_anova(m)
    b = rm_anova(m[::-1])
    assert a.F == pytest.approx(b.F, rel=1e-12)
    assert a.p == pytest.approx(b.p, rel=1e-12)


def test_rm_anova_null_false_positive_rate():
    rng = np.random.default_rng(123)
    hits = 0
    n_runs = 1000
    for _ in range(n_runs):
        m = rng.normal(size=(20, 5))
        if rm_anova(m).p < 0.05:
            hits += 1
    assert 0.03 <= hits / n_runs <= 0.07


def test_rm_anova_rejects_bad_input():
    with pytest.raises(ValueError):
        rm_anova([[1.0, 2.0]])
    with pytest.raises(ValueError):
        rm_anova([[1.0, np.nan], [2.0, 3.0]])


def test_rm_anova_two_way_factors():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(10, 1, 1))
    effect_a = np.array([0.0, 1.0, 2.0])[None, :, None]
    data = base + effect_a + rng.normal(scale=0.3, size=(10, 3, 4))
    res = rm_anova_two_way(data)
    assert res["a"].p < 0.001
    assert res["b"].p > 0.001
    assert res["a"].df_effect == 2
    assert res["b"].df_effect == 3


# --- F / t survival functions ---------------------------------------------------------

def test_f_sf_matches_scipy():
    for F, d1, d2 in [(0.5, 2, 10), (1.3, 1, 64), (4.0, 4, 60), (37.08, 4, 128)]:
        assert f_sf(F, d1, d2) == pytest.approx(scipy.stats.f.sf(F, d1, d2),
                                                rel=1e-10)


def test_f_sf_matches_monte_carlo():
    # Independent oracle: empirical survival from 1e6 simulated F variates.
    rng = np.random.default_rng(42)
    for F0, d1, d2 in [(1.0, 2, 10), (2.5, 4, 64), (0.7, 1, 32)]:
        num = rng.chisquare(d1, size=1_000_000) / d1
        den = rng.chisquare(d2, size=1_000_000) / d2
        mc = float(np.mean(num / den > F0))
        assert abs(f_sf(F0, d1, d2) - mc) < 0.005


def test_t_sf_matches_scipy():
    for t, df in [(0.5, 4), (2.1, 10), (4.2426, 4)]:
        assert t_sf_two_sided(t, df) == pytest.approx(
            2 * scipy.stats.t.sf(t, df), rel=1e-10)


# --- paired t ----------------------------------------------------------------------

def test_paired_t_equal_vectors():
    r = paired_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.t == 0.0
    assert r.p == 1.0
    assert r.degenerate


def test_paired_t_textbook_fixture():
    # d = [1,2,3,4,5]: mean 3, sd sqrt(2.5) = 1.5811..., t = 3/(sd/sqrt(5)).
    a = [1.0, 2.0, 3.0, 4.0, 5.0]
    b = [0.0, 0.0, 0.0, 0.0, 0.0]
    r = paired_t(a, b)
    expected_t = 3.0 / (np.sqrt(2.5) / np.sqrt(5.0))
    assert expected_t == pytest.approx(4.242640687, abs=1e-9)
    assert r.t == pytest.approx(expected_t, rel=1e-12)
    assert r.df == 4
    assert r.p == pytest.approx(2 * scipy.stats.t.sf(expected_t, 4), rel=1e-9)


def test_paired_t_antisymmetry():
    rng = np.random.default_rng(9)
    a = rng.normal(size=12)
    b = rng.normal(size=12)
    r1 = paired_t(a, b)
    r2 = paired_t(b, a)
    assert r1.t == pytest.approx(-r2.t, rel=1e-12)
    assert r1.p == pytest.approx(r2.p, rel=1e-12)


def test_paired_t_constant_nonzero_difference_flagged():
    r = paired_t([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    assert r.degenerate
    assert r.p < 1e-300


# --- human vs model -----------------------------------------------------------------

def test_compare_identical_sets():
    trials = enumerate_trials(seed=0)[:50]
    human = [rec(t, t.audio_pos, subject=f"s{i}") for i in range(4) for t in trials]
    model = [rec(t, t.audio_pos, subject=f"m{i}", source="model")
             for i in range(4) for t in trials]
    r = compare_human_model(human, model)
    assert r.F == 0.0
    assert r.p == 1.0


def test_compare_mismatched_counts():
    trials = enumerate_trials(seed=0)[:10]
    human = [rec(t, 0, subject="a") for t in trials]
    model = [rec(t, 0, subject=f"m{i}") for i in range(2) for t in trials]
    with pytest.raises(ValueError):
        compare_human_model(human, model)


def test_compare_eta_squared_bounds():
    rng = np.random.default_rng(31)
    trials = enumerate_trials(seed=0)[:40]
    human = [rec(t, int(rng.integers(4)), subject=f"s{i}")
             for i in range(6) for t in trials]
    model = [rec(t, int(rng.integers(4)), subject=f"m{i}", source="model")
             for i in range(6) for t in trials]
    r = compare_human_model(human, model)
    assert 0.0 <= r.eta_squared <= 1.0
    assert r.df_effect == 1 and r.df_error == 10


# --- reports -----------------------------------------------------------------------

def test_report_outputs(oracle_dataset):
    records = oracle_dataset.records
    csv = er_table_csv(records, "category")
    assert csv.startswith("category,error_rate\n")
    assert len(csv.splitlines()) == 6
    bias_csv = bias_table_csv(records)
    assert "lips_vs_arm_lips" in bias_csv
    text = summary_text(records)
    assert "avatar distance (rm)" in text
    assert "strategy (between)" in text
    svg = er_bars_svg(error_rates(records, "category"))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    # determinism for byte-identical reports
    assert summary_text(records) == text
    assert er_bars_svg(error_rates(records, "category")) == svg


def test_subject_error_rates_grouping(oracle_dataset):
    per = subject_error_rates(oracle_dataset.records, group_by="category")
    assert len(per) == 33
    sample = next(iter(per.values()))
    assert set(sample) <= {"congruent", "central", "lateral", "one_gap", "two_gap"}
