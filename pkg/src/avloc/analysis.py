"""Behavioural statistics: error rates, ventriloquism bias, ANOVA, t-tests.

Sums of squares are computed directly; p-values come from the F and Student-t
survival functions evaluated through the regularized incomplete beta function.
Repeated-measures ANOVA is one-way (plus an additive two-factor variant); no
sphericity corrections are applied.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import betainc

from .trials import Condition, DistanceCategory

GROUP_KEYS = ("category", "condition", "strategy", "session")

BIAS_LABELS = ("lips", "arm", "lips_arm", "lips_vs_arm_lips", "lips_vs_arm_arm")


@dataclass
class AnovaResult:
    F: float
    p: float
    eta_squared: float
    df_effect: int
    df_error: int
    degenerate: bool = False


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


def f_sf(F: float, df1: int, df2: int) -> float:
    """Survival function of the F distribution via the incomplete beta."""
    if F <= 0:
        return 1.0
    x = df2 / (df2 + df1 * F)
    return float(betainc(df2 / 2.0, df1 / 2.0, x))


def t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided Student-t p-value via the incomplete beta."""
    if t == 0:
        return 1.0
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


# --- error rates ----------------------------------------------------------------

def _group_of(record, group_by: str):
    if group_by == "category":
        cat = record.trial.category()
        return cat.value if cat is not None else None
    if group_by == "condition":
        return record.trial.condition.value
    if group_by == "strategy":
        return record.strategy
    if group_by == "session":
        return record.trial.session
    raise ValueError(f"unknown grouping: {group_by}")


def error_rates(records: Iterable, group_by: str) -> dict:
    """Fraction of responses off the true audio position, per group.

    Groups with no records are omitted. Category grouping folds baseline
    trials into congruent and skips lips-vs-arm trials (two audio-visual
    pairs, no unique pair distance); records without a strategy are skipped
    under strategy grouping.
    """
    if group_by not in GROUP_KEYS:
        raise ValueError(f"unknown grouping: {group_by}")
    tally = collections.defaultdict(lambda: [0, 0])
    for r in records:
        group = _group_of(r, group_by)
        if group is None:
            continue
        tally[group][0] += int(r.response != r.trial.audio_pos)
        tally[group][1] += 1
    return {g: e / n for g, (e, n) in sorted(tally.items(), key=lambda kv: str(kv[0]))}


def pooled_error_rate(records: Iterable) -> float:
    records = list(records)
    if not records:
        raise ValueError("empty response set")
    return float(np.mean([r.response != r.trial.audio_pos for r in records]))


def subject_error_rates(records: Iterable, group_by: Optional[str] = None) -> dict:
    """Per-subject ER, optionally split per group: subject -> ER or
    subject -> {group: ER}."""
    per = collections.defaultdict(list)
    for r in records:
        if group_by is None:
            per[r.subject_id].append((None, r))
        else:
            g = _group_of(r, group_by)
            if g is not None:
                per[r.subject_id].append((g, r))
    out = {}
    for subject, pairs in sorted(per.items()):
        if group_by is None:
            out[subject] = float(np.mean([p[1].response != p[1].trial.audio_pos
                                          for p in pairs]))
        else:
            groups = collections.defaultdict(list)
            for g, r in pairs:
                groups[g].append(r.response != r.trial.audio_pos)
            out[subject] = {g: float(np.mean(v)) for g, v in groups.items()}
    return out


def ventriloquism_bias(records: Iterable) -> dict:
    """Per visual-cue condition, the fraction of incongruent trials whose
    response lands exactly on the visual cue; lips-vs-arm reports the pulls
    toward lips and arm separately."""
    tally = {label: [0, 0] for label in BIAS_LABELS}
    for r in records:
        t = r.trial
        if t.condition in (Condition.LIPS, Condition.ARM, Condition.LIPS_ARM):
            vis = t.lips_pos if t.lips_pos is not None else t.arm_pos
            if vis != t.audio_pos:
                tally[t.condition.value][0] += int(r.response == vis)
                tally[t.condition.value][1] += 1
        elif t.condition is Condition.LIPS_VS_ARM:
            if t.lips_pos != t.audio_pos:
                tally["lips_vs_arm_lips"][0] += int(r.response == t.lips_pos)
                tally["lips_vs_arm_lips"][1] += 1
            if t.arm_pos != t.audio_pos:
                tally["lips_vs_arm_arm"][0] += int(r.response == t.arm_pos)
                tally["lips_vs_arm_arm"][1] += 1
    return {k: v[0] / v[1] for k, v in tally.items() if v[1]}


def bias_decomposition(records: Iterable) -> dict:
    """Per condition: proportions (toward visual cue, audio-correct, other
    errors); the three sum to 1 for single-cue conditions."""
    out = {}
    groups = collections.defaultdict(list)
    for r in records:
        t = r.trial
        if t.condition in (Condition.LIPS, Condition.ARM, Condition.LIPS_ARM):
            vis = t.lips_pos if t.lips_pos is not None else t.arm_pos
            if vis != t.audio_pos:
                groups[t.condition.value].append((r.response == vis,
                                                  r.response == t.audio_pos))
    for cond, rows in groups.items():
        arr = np.array(rows, dtype=float)
        toward = arr[:, 0].mean()
        correct = arr[:, 1].mean()
        out[cond] = {"toward_visual": toward, "audio_correct": correct,
                     "other_error": 1.0 - toward - correct}
    return out


# --- repeated measures ANOVA ------------------------------------------------------

def rm_anova(matrix: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way repeated-measures ANOVA on a subjects x levels matrix.

    Variance partitions into subject, treatment, and residual; F is
    MS_treatment / MS_residual and eta squared is partial
    (SS_treatment / (SS_treatment + SS_residual)).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError(f"need at least 2 subjects x 2 levels, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("missing cells are not supported")
    n, k = m.shape
    grand = m.mean()
    ss_subject = k * ((m.mean(axis=1) - grand) ** 2).sum()
    ss_treat = n * ((m.mean(axis=0) - grand) ** 2).sum()
    ss_total = ((m - grand) ** 2).sum()
    ss_resid = ss_total - ss_subject - ss_treat
    ss_resid = max(ss_resid, 0.0)
    df_effect = k - 1
    df_error = (n - 1) * (k - 1)

    if ss_treat <= 1e-300:
        return AnovaResult(F=0.0, p=1.0, eta_squared=0.0,
                           df_effect=df_effect, df_error=df_error)
    if ss_resid <= 1e-12 * ss_treat:
        # Zero residual variance: the statistic diverges; flag it.
        return AnovaResult(F=float("inf"), p=float(np.finfo(float).tiny),
                           eta_squared=1.0, df_effect=df_effect,
                           df_error=df_error, degenerate=True)
    ms_treat = ss_treat / df_effect
    ms_resid = ss_resid / df_error
    F = ms_treat / ms_resid
    return AnovaResult(
        F=float(F),
        p=f_sf(F, df_effect, df_error),
        eta_squared=float(ss_treat / (ss_treat + ss_resid)),
        df_effect=df_effect,
        df_error=df_error,
    )


def rm_anova_two_way(data: Sequence) -> dict:
    """Additive two-factor repeated-measures ANOVA (no interaction term).

    ``data`` is subjects x levelsA x levelsB; returns AnovaResults for
    factors "a" and "b" tested against the pooled residual.
    """
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 3:
        raise ValueError(f"need subjects x A x B, got shape {m.shape}")
    n, a, b = m.shape
    if n < 2 or a < 2 or b < 2:
        raise ValueError(f"need at least 2 levels per factor, got {m.shape}")
    grand = m.mean()
    ss_subject = a * b * ((m.mean(axis=(1, 2)) - grand) ** 2).sum()
    ss_a = n * b * ((m.mean(axis=(0, 2)) - grand) ** 2).sum()
    ss_b = n * a * ((m.mean(axis=(0, 1)) - grand) ** 2).sum()
    ss_total = ((m - grand) ** 2).sum()
    ss_resid = max(ss_total - ss_subject - ss_a - ss_b, 0.0)
    df_a, df_b = a - 1, b - 1
    df_resid = n * a * b - 1 - (n - 1) - df_a - df_b

    def result(ss, df):
        if ss <= 1e-300:
            return AnovaResult(F=0.0, p=1.0, eta_squared=0.0,
                               df_effect=df, df_error=df_resid)
        if ss_resid <= 1e-12 * ss:
            return AnovaResult(F=float("inf"), p=float(np.finfo(float).tiny),
                               eta_squared=1.0, df_effect=df, df_error=df_resid,
                               degenerate=True)
        F = (ss / df) / (ss_resid / df_resid)
        return AnovaResult(F=float(F), p=f_sf(F, df, df_resid),
                           eta_squared=float(ss / (ss + ss_resid)),
                           df_effect=df, df_error=df_resid)

    return {"a": result(ss_a, df_a), "b": result(ss_b, df_b)}


def anova_oneway_between(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way between-groups ANOVA over lists of per-subject values."""
    arrays = [np.asarray(g, dtype=np.float64) for g in groups if len(g)]
    if len(arrays) < 2:
        raise ValueError("need at least two groups")
    all_vals = np.concatenate(arrays)
    grand = all_vals.mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in arrays)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in arrays)
    df_effect = len(arrays) - 1
    df_error = len(all_vals) - len(arrays)
    if ss_between <= 1e-300:
        return AnovaResult(F=0.0, p=1.0, eta_squared=0.0,
                           df_effect=df_effect, df_error=df_error)
    if ss_within <= 1e-12 * ss_between or df_error == 0:
        return AnovaResult(F=float("inf"), p=float(np.finfo(float).tiny),
                           eta_squared=1.0, df_effect=df_effect,
                           df_error=df_error, degenerate=True)
    F = (ss_between / df_effect) / (ss_within / df_error)
    return AnovaResult(F=float(F), p=f_sf(F, df_effect, df_error),
                       eta_squared=float(ss_between / (ss_between + ss_within)),
                       df_effect=df_effect, df_error=df_error)


def paired_t(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-subject values."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length vectors of at least 2 values")
    d = x - y
    n = len(d)
    sd = d.std(ddof=1)
    if sd == 0.0:
        if d.mean() == 0.0:
            return TTestResult(t=0.0, p=1.0, df=n - 1, degenerate=True)
        return TTestResult(t=float("inf") if d.mean() > 0 else float("-inf"),
                           p=float(np.finfo(float).tiny), df=n - 1,
                           degenerate=True)
    t = d.mean() / (sd / np.sqrt(n))
    return TTestResult(t=float(t), p=t_sf_two_sided(t, n - 1), df=n - 1)


def compare_human_model(human: Iterable, model: Iterable) -> AnovaResult:
    """ANOVA on per-subject ER with the response source as the factor."""
    h = subject_error_rates(human)
    m = subject_error_rates(model)
    if len(h) != len(m):
        raise ValueError(f"subject count mismatch: {len(h)} vs {len(m)}")
    return anova_oneway_between([list(h.values()), list(m.values())])


# --- report emission ----------------------------------------------------------------

def er_table_csv(records: Iterable, group_by: str) -> str:
    rates = error_rates(list(records), group_by)
    lines = [f"{group_by},error_rate"]
    lines.extend(f"{g},{v:.6f}" for g, v in rates.items())
    return "\n".join(lines) + "\n"


def bias_table_csv(records: Iterable) -> str:
    bias = ventriloquism_bias(list(records))
    lines = ["condition,toward_visual"]
    lines.extend(f"{k},{v:.6f}" for k, v in bias.items())
    return "\n".join(lines) + "\n"


def _fmt_anova(name: str, r: AnovaResult) -> str:
    p = "<0.001" if r.p < 0.001 else f"={r.p:.3f}"
    note = " [degenerate]" if r.degenerate else ""
    return (f"{name}: F({r.df_effect},{r.df_error})={r.F:.2f}, p{p}, "
            f"eta2={r.eta_squared:.2f}{note}")


def summary_text(records: list, model_records: Optional[list] = None) -> str:
    """Plain-text report over a response set (and optionally a model set)."""
    lines = ["== error rates =="]
    for group_by in GROUP_KEYS:
        rates = error_rates(records, group_by)
        if rates:
            pretty = ", ".join(f"{g}={v:.3f}" for g, v in rates.items())
            lines.append(f"by {group_by}: {pretty}")
    lines.append(f"pooled: {pooled_error_rate(records):.3f}")

    lines.append("== ventriloquism bias ==")
    for k, v in ventriloquism_bias(records).items():
        lines.append(f"{k}: {v:.3f}")

    per_cat = subject_error_rates(records, group_by="category")
    cats = [c.value for c in DistanceCategory]
    rows = [[row[c] for c in cats] for row in per_cat.values()
            if all(c in row for c in cats)]
    if len(rows) >= 2:
        lines.append("== effects ==")
        lines.append(_fmt_anova("avatar distance (rm)", rm_anova(rows)))

    subject_strategy = {}
    for r in records:
        if r.strategy and r.subject_id not in subject_strategy:
            subject_strategy[r.subject_id] = r.strategy
    strategies = collections.defaultdict(list)
    for subject, er in subject_error_rates(records).items():
        if subject in subject_strategy:
            strategies[subject_strategy[subject]].append(er)
    if len(strategies) >= 2:
        lines.append(_fmt_anova("strategy (between)",
                                anova_oneway_between(list(strategies.values()))))

    if model_records:
        lines.append("== human/oracle vs model ==")
        model_subjects = {r.subject_id for r in model_records}
        matched = [r for r in records if r.subject_id in model_subjects]
        lines.append(_fmt_anova("source", compare_human_model(matched, model_records)))
        mb = ventriloquism_bias(model_records)
        for k, v in mb.items():
            lines.append(f"model {k}: {v:.3f}")
    return "\n".join(lines) + "\n"


def er_bars_svg(rates: dict, title: str = "error rate") -> str:
    """Minimal deterministic SVG bar chart of a group -> rate table."""
    items = list(rates.items())
    width, height, pad = 480, 240, 36
    bar_w = (width - 2 * pad) / max(1, len(items))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{pad}" y="18" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
    ]
    for i, (label, value) in enumerate(items):
        h = (height - 2 * pad) * float(value)
        x = pad + i * bar_w
        y = height - pad - h
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.8:.1f}" '
                     f'height="{h:.1f}" fill="steelblue"/>')
        parts.append(f'<text x="{x:.1f}" y="{height - pad + 14}" '
                     f'font-size="10">{label}</text>')
        parts.append(f'<text x="{x:.1f}" y="{y - 4:.1f}" font-size="10">'
                     f'{float(value):.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
