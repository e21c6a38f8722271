"""Performance, responsiveness, learning, and fairness measures.

All aggregate operations consume ``PredictionRecord`` collections and treat
the participant as the unit of analysis: pooled (record-level) numbers are
reported alongside participant-level means with 95% confidence intervals.
Grid-valued comparisons are done on integer tenths, so equality and
distance never hinge on float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.stats

from .core import GridPrediction, PredictionRecord

__all__ = [
    "MetricsError",
    "MetricSummary",
    "ScoreReport",
    "ResponsivenessReport",
    "FairnessReport",
    "LearningReport",
    "linear_score",
    "quadratic_score",
    "log_score",
    "auc_score",
    "score_report",
    "policy_accuracy",
    "advice_influence",
    "acceptance_rate",
    "advice_frequency",
    "responsiveness_report",
    "grouped_influence",
    "fairness_report",
    "disparity_from_rates",
    "f_score_optimal_threshold",
    "kl_divergence",
    "grid_distribution",
    "learning_report",
    "pearson_correlation",
    "scarcity_correlation",
]

LOG_CLAMP_EPS = 1e-6
KL_EPS = 1e-9
INFLUENCE_RANGE = (-6.0, 5.0)  # observed range; values outside are flagged, not dropped


class MetricsError(ValueError):
    """Raised on domain violations or empty inputs where a value is required."""


# --- scalar proper scores -------------------------------------------------

def _as_prob(y_hat) -> float:
    if isinstance(y_hat, GridPrediction):
        return y_hat.value
    p = float(y_hat)
    if math.isnan(p) or not 0.0 <= p <= 1.0:
        raise MetricsError(f"prediction must lie in [0, 1], got {y_hat!r}")
    return p


def _check_outcome(y) -> int:
    if y not in (0, 1) or isinstance(y, bool):
        raise MetricsError(f"outcome must be 0 or 1, got {y!r}")
    return int(y)


def linear_score(y, y_hat) -> float:
    """``1 - |y - y_hat|``."""
    return 1.0 - abs(_check_outcome(y) - _as_prob(y_hat))


def quadratic_score(y, y_hat) -> float:
    """``1 - (y - y_hat)^2`` — one minus the Brier score of a single prediction."""
    return 1.0 - (_check_outcome(y) - _as_prob(y_hat)) ** 2


def log_score(y, y_hat) -> float:
    """Log of the probability assigned to the realized outcome.

    The probability is clamped to ``[1e-6, 1 - 1e-6]`` first, since grid
    predictions include exact 0 and 1.
    """
    y = _check_outcome(y)
    p = min(max(_as_prob(y_hat), LOG_CLAMP_EPS), 1.0 - LOG_CLAMP_EPS)
    return math.log(p if y == 1 else 1.0 - p)


def auc_score(ys: Sequence[int], y_hats: Sequence[float]) -> Optional[float]:
    """Rank-based AUC with midrank tie handling; None when one class only."""
    ys = np.asarray([_check_outcome(y) for y in ys])
    ps = np.asarray([_as_prob(p) for p in y_hats], dtype=float)
    n_pos = int(ys.sum())
    n_neg = ys.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = scipy.stats.rankdata(ps)
    pos_rank_sum = float(ranks[ys == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# --- participant-level aggregation ----------------------------------------

@dataclass(frozen=True)
class MetricSummary:
    """Pooled mean plus a participant-level mean with its 95% CI."""

    pooled: float
    mean: float
    ci_low: float
    ci_high: float
    n_participants: int

    def to_dict(self) -> dict:
        return {"pooled": self.pooled, "participant_mean": self.mean,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "n_participants": self.n_participants}


_Z_95 = float(scipy.stats.norm.ppf(0.975))


def _mean(values: Sequence[float]) -> float:
    # fsum is correctly rounded, so the result is input-order independent
    return math.fsum(values) / len(values)


def _mean_ci(values: Sequence[float], method: str = "normal",
             seed: int = 0) -> tuple:
    """95% CI for the mean of participant-level values.

    Values are sorted first so the result never depends on participant
    iteration order (reports are permutation-invariant by contract).
    """
    values = sorted(float(v) for v in values)
    n = len(values)
    if n == 0:
        raise MetricsError("cannot summarize zero participant values")
    mean = _mean(values)
    if n == 1:
        return mean, mean, mean
    if method == "normal":
        var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        half = _Z_95 * math.sqrt(var) / math.sqrt(n)
        return mean, mean - half, mean + half
    if method == "bootstrap":
        rng = np.random.default_rng(seed)
        arr = np.asarray(values)
        idx = rng.integers(0, n, size=(2000, n))
        means = arr[idx].mean(axis=1)
        lo, hi = np.percentile(means, [2.5, 97.5])
        return mean, min(float(lo), mean), max(float(hi), mean)
    raise MetricsError(f"unknown CI method {method!r}")


def _by_participant(records: Iterable[PredictionRecord]) -> dict:
    grouped: dict = {}
    for rec in records:
        grouped.setdefault(rec.participant_id, []).append(rec)
    return grouped


def _summary(pooled_values, participant_values, method, seed) -> MetricSummary:
    mean, lo, hi = _mean_ci(participant_values, method, seed)
    return MetricSummary(pooled=_mean(list(pooled_values)), mean=mean,
                         ci_low=lo, ci_high=hi, n_participants=len(participant_values))


@dataclass(frozen=True)
class ScoreReport:
    """Accuracy of final predictions: linear, quadratic, log scores and AUC."""

    n_records: int
    n_participants: int
    linear: MetricSummary
    quadratic: MetricSummary
    log: MetricSummary
    auc: Optional[MetricSummary]

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_participants": self.n_participants,
            "linear": self.linear.to_dict(),
            "quadratic": self.quadratic.to_dict(),
            "log": self.log.to_dict(),
            "auc": None if self.auc is None else self.auc.to_dict(),
        }


def score_report(records: Sequence[PredictionRecord], ci_method: str = "normal",
                 seed: int = 0) -> ScoreReport:
    """Score the final predictions, pooled and per participant."""
    records = list(records)
    if not records:
        raise MetricsError("score_report needs at least one record")
    grouped = _by_participant(records)

    def per_score(fn):
        pooled = [fn(r.y, r.y_hat_final) for r in records]
        means = [_mean([fn(r.y, r.y_hat_final) for r in recs])
                 for recs in grouped.values()]
        return _summary(pooled, means, ci_method, seed)

    pooled_auc = auc_score([r.y for r in records], [r.y_hat_final for r in records])
    auc_summary = None
    if pooled_auc is not None:
        participant_aucs = []
        for recs in grouped.values():
            a = auc_score([r.y for r in recs], [r.y_hat_final for r in recs])
            if a is not None:
                participant_aucs.append(a)
        if participant_aucs:
            mean, lo, hi = _mean_ci(participant_aucs, ci_method, seed)
            auc_summary = MetricSummary(pooled=pooled_auc, mean=mean, ci_low=lo,
                                        ci_high=hi, n_participants=len(participant_aucs))
        else:
            auc_summary = MetricSummary(pooled=pooled_auc, mean=pooled_auc,
                                        ci_low=pooled_auc, ci_high=pooled_auc,
                                        n_participants=0)
    return ScoreReport(
        n_records=len(records),
        n_participants=len(grouped),
        linear=per_score(linear_score),
        quadratic=per_score(quadratic_score),
        log=per_score(log_score),
        auc=auc_summary,
    )


# --- advising-policy quality ----------------------------------------------

def _alg_strictly_better(rec: PredictionRecord) -> bool:
    y10 = rec.y * 10
    return abs(y10 - rec.y_hat_alg_rounded.tenths) < abs(y10 - rec.y_hat_unassisted.tenths)


def policy_accuracy(records: Sequence[PredictionRecord]) -> float:
    """Fraction of records where the advise decision matched whether the
    rounded algorithmic prediction was strictly more accurate than the
    participant's initial prediction."""
    records = list(records)
    if not records:
        raise MetricsError("policy_accuracy needs at least one record")
    hits = sum(1 for r in records if r.z_hat == _alg_strictly_better(r))
    return hits / len(records)


def _influence(rec: PredictionRecord) -> float:
    # exact in tenths; callers exclude the zero-denominator case
    return (rec.y_hat_assisted.tenths - rec.y_hat_unassisted.tenths) / \
        (rec.y_hat_alg_rounded.tenths - rec.y_hat_unassisted.tenths)


def advice_influence(records: Iterable[PredictionRecord]) -> dict:
    """Per-record influence values, keyed by participant.

    Influence is the fractional movement from the initial prediction toward
    the advised value. Only advised records count, and records where the
    advised (rounded) value equals the initial prediction are excluded —
    the movement fraction is undefined there.
    """
    out: dict = {}
    for rec in records:
        if not rec.z_hat:
            continue
        if rec.y_hat_alg_rounded == rec.y_hat_unassisted:
            continue
        out.setdefault(rec.participant_id, []).append(_influence(rec))
    return out


def acceptance_rate(records: Iterable[PredictionRecord]) -> Optional[float]:
    """Exact-adoption frequency among advised, initially-disagreeing records.

    None when no record qualifies.
    """
    qualifying = adopted = 0
    for rec in records:
        if rec.z_hat and rec.y_hat_unassisted != rec.y_hat_alg_rounded:
            qualifying += 1
            if rec.y_hat_assisted == rec.y_hat_alg_rounded:
                adopted += 1
    if qualifying == 0:
        return None
    return adopted / qualifying


def advice_frequency(records: Sequence[PredictionRecord]) -> float:
    records = list(records)
    if not records:
        raise MetricsError("advice_frequency needs at least one record")
    return sum(1 for r in records if r.z_hat) / len(records)


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> Optional[tuple]:
    """Pearson rho with a two-sided t-approximation p-value.

    None when fewer than 3 pairs or either side has zero variance.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise MetricsError(f"length mismatch: {xs.shape} vs {ys.shape}")
    n = xs.size
    if n < 3:
        return None
    if xs.std() == 0.0 or ys.std() == 0.0:
        return None
    rho = float(np.corrcoef(xs, ys)[0, 1])
    if abs(rho) >= 1.0:
        return (math.copysign(1.0, rho), 0.0)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(scipy.stats.t.sf(abs(t), df=n - 2))
    return rho, p


def scarcity_correlation(frequencies: Sequence[float],
                         responsiveness: Sequence[float]) -> Optional[tuple]:
    """Correlation between per-participant advice frequency and responsiveness."""
    return pearson_correlation(frequencies, responsiveness)


@dataclass(frozen=True)
class ResponsivenessReport:
    """How participants reacted to advice: influence, adoption, scarcity."""

    advice_frequency: float
    influence: Optional[MetricSummary]
    influence_out_of_range: int
    acceptance: Optional[float]
    acceptance_by_participant: Optional[MetricSummary]
    scarcity_influence: Optional[tuple]   # (rho, p) over participants
    scarcity_acceptance: Optional[tuple]

    def to_dict(self) -> dict:
        def corr(v):
            return None if v is None else {"rho": v[0], "p_value": v[1]}
        return {
            "advice_frequency": self.advice_frequency,
            "influence": None if self.influence is None else self.influence.to_dict(),
            "influence_out_of_range": self.influence_out_of_range,
            "acceptance": self.acceptance,
            "acceptance_by_participant": (
                None if self.acceptance_by_participant is None
                else self.acceptance_by_participant.to_dict()),
            "scarcity_influence": corr(self.scarcity_influence),
            "scarcity_acceptance": corr(self.scarcity_acceptance),
        }


def responsiveness_report(records: Sequence[PredictionRecord],
                          ci_method: str = "normal", seed: int = 0) -> ResponsivenessReport:
    records = list(records)
    if not records:
        raise MetricsError("responsiveness_report needs at least one record")
    grouped = _by_participant(records)

    influence_by_pid = advice_influence(records)
    influence_summary = None
    out_of_range = 0
    if influence_by_pid:
        all_values = [v for vs in influence_by_pid.values() for v in vs]
        lo, hi = INFLUENCE_RANGE
        out_of_range = sum(1 for v in all_values if not lo <= v <= hi)
        means = [_mean(vs) for vs in influence_by_pid.values()]
        influence_summary = _summary(all_values, means, ci_method, seed)

    accept_pooled = acceptance_rate(records)
    accept_summary = None
    if accept_pooled is not None:
        per_participant = {}
        for pid, recs in grouped.items():
            rate = acceptance_rate(recs)
            if rate is not None:
                per_participant[pid] = rate
        if per_participant:
            mean, lo_, hi_ = _mean_ci(list(per_participant.values()), ci_method, seed)
            accept_summary = MetricSummary(pooled=accept_pooled, mean=mean, ci_low=lo_,
                                           ci_high=hi_,
                                           n_participants=len(per_participant))

    freq_by_pid = {pid: advice_frequency(recs) for pid, recs in grouped.items()}
    infl_pairs = sorted((freq_by_pid[pid], _mean(vs))
                        for pid, vs in influence_by_pid.items())
    scarcity_infl = None
    if len(infl_pairs) >= 3:
        scarcity_infl = scarcity_correlation([a for a, _ in infl_pairs],
                                             [b for _, b in infl_pairs])
    accept_pairs = []
    for pid, recs in grouped.items():
        rate = acceptance_rate(recs)
        if rate is not None:
            accept_pairs.append((freq_by_pid[pid], rate))
    accept_pairs.sort()
    scarcity_accept = None
    if len(accept_pairs) >= 3:
        scarcity_accept = scarcity_correlation([a for a, _ in accept_pairs],
                                               [b for _, b in accept_pairs])

    return ResponsivenessReport(
        advice_frequency=advice_frequency(records),
        influence=influence_summary,
        influence_out_of_range=out_of_range,
        acceptance=accept_pooled,
        acceptance_by_participant=accept_summary,
        scarcity_influence=scarcity_infl,
        scarcity_acceptance=scarcity_accept,
    )


def grouped_influence(records: Iterable[PredictionRecord], cases: dict) -> dict:
    """Mean influence conditioned on defendant race x advice direction.

    ``cases`` maps case_id to DefendantCase. Keys are ``(race, direction)``
    with direction "up" when the advice exceeded the initial prediction.
    """
    buckets: dict = {}
    for rec in records:
        if not rec.z_hat or rec.y_hat_alg_rounded == rec.y_hat_unassisted:
            continue
        case = cases.get(rec.case_id)
        if case is None:
            raise MetricsError(f"record references unknown case {rec.case_id!r}")
        direction = "up" if rec.y_hat_alg_rounded > rec.y_hat_unassisted else "down"
        buckets.setdefault((case.race, direction), []).append(_influence(rec))
    return {key: _mean(vals) for key, vals in sorted(buckets.items())}


# --- fairness ---------------------------------------------------------------

@dataclass(frozen=True)
class FairnessReport:
    """Group error rates of the high-risk classification at a threshold."""

    threshold: float
    fpr_black: Optional[float]
    fpr_white: Optional[float]
    fnr_black: Optional[float]
    fnr_white: Optional[float]
    pr_y1: float
    disparity: Optional[float]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "fpr_black": self.fpr_black,
            "fpr_white": self.fpr_white,
            "fnr_black": self.fnr_black,
            "fnr_white": self.fnr_white,
            "pr_y1": self.pr_y1,
            "disparity": self.disparity,
        }


def disparity_from_rates(fpr_black: float, fpr_white: float, fnr_black: float,
                         fnr_white: float, pr_y1: float) -> float:
    """Prevalence-weighted FPR/FNR gap:
    ``Pr(Y=0)(FPR_b - FPR_w) + Pr(Y=1)(FNR_w - FNR_b)``."""
    return (1.0 - pr_y1) * (fpr_black - fpr_white) + pr_y1 * (fnr_white - fnr_black)


def _group_rates(records, cases, race: str, threshold: float):
    fp = tn = fn = tp = 0
    for rec in records:
        if cases[rec.case_id].race != race:
            continue
        high = rec.y_hat_final.value > threshold
        if rec.y == 0:
            fp, tn = fp + high, tn + (not high)
        else:
            tp, fn = tp + high, fn + (not high)
    fpr = fp / (fp + tn) if fp + tn else None
    fnr = fn / (fn + tp) if fn + tp else None
    return fpr, fnr


def f_score_optimal_threshold(records: Sequence[PredictionRecord]) -> float:
    """Grid threshold maximizing the F-score of the high-risk classification.

    High-risk means final prediction strictly above the threshold. Ties go
    to the lowest threshold.
    """
    records = list(records)
    if not records:
        raise MetricsError("f_score_optimal_threshold needs records")
    best = None
    for tenths in range(11):
        t = tenths / 10.0
        tp = fp = fn = 0
        for rec in records:
            high = rec.y_hat_final.value > t
            if high and rec.y == 1:
                tp += 1
            elif high and rec.y == 0:
                fp += 1
            elif not high and rec.y == 1:
                fn += 1
        denom = 2 * tp + fp + fn
        if denom == 0:
            continue
        f = 2 * tp / denom
        if best is None or f > best[0]:
            best = (f, t)
    if best is None:
        raise MetricsError("F-score undefined at every threshold (no positives anywhere)")
    return best[1]


def fairness_report(records: Sequence[PredictionRecord], cases: dict,
                    threshold: Optional[float] = None) -> FairnessReport:
    """Per-race FPR/FNR and the classification disparity.

    ``cases`` maps case_id to DefendantCase. ``threshold=None`` selects the
    F-score-optimal grid threshold from the records themselves.
    """
    records = list(records)
    if not records:
        raise MetricsError("fairness_report needs at least one record")
    for rec in records:
        if rec.case_id not in cases:
            raise MetricsError(f"record references unknown case {rec.case_id!r}")
    if threshold is None:
        threshold = f_score_optimal_threshold(records)
    elif not 0.0 <= threshold <= 1.0:
        raise MetricsError(f"threshold must lie in [0, 1], got {threshold}")
    fpr_b, fnr_b = _group_rates(records, cases, "black", threshold)
    fpr_w, fnr_w = _group_rates(records, cases, "white", threshold)
    pr_y1 = sum(r.y for r in records) / len(records)
    disparity = None
    if None not in (fpr_b, fpr_w, fnr_b, fnr_w):
        disparity = disparity_from_rates(fpr_b, fpr_w, fnr_b, fnr_w, pr_y1)
    return FairnessReport(threshold=threshold, fpr_black=fpr_b, fpr_white=fpr_w,
                          fnr_black=fnr_b, fnr_white=fnr_w, pr_y1=pr_y1,
                          disparity=disparity)


# --- distribution shift and learning ----------------------------------------

def grid_distribution(values: Iterable[GridPrediction]) -> np.ndarray:
    """Normalized histogram over the 11 grid cells."""
    counts = np.zeros(11)
    total = 0
    for v in values:
        counts[v.tenths] += 1
        total += 1
    if total == 0:
        raise MetricsError("grid_distribution needs at least one value")
    return counts / total


def kl_divergence(p, q) -> float:
    """``sum p ln(p/q)`` over the grid; natural log.

    Cells where p > 0 but q = 0 are handled by flooring q at 1e-9 there
    (documented smoothing); both inputs must sum to 1 within 1e-9.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (11,) or q.shape != (11,):
        raise MetricsError(f"expected 11-cell grid pmfs, got shapes {p.shape}, {q.shape}")
    for name, dist in (("p", p), ("q", q)):
        if (dist < 0).any():
            raise MetricsError(f"{name} has negative mass")
        if abs(float(dist.sum()) - 1.0) > 1e-9:
            raise MetricsError(f"{name} is not normalized (sums to {dist.sum()})")
    mask = p > 0
    q_eff = np.where((q == 0) & mask, KL_EPS, q)
    return float(np.sum(p[mask] * np.log(p[mask] / q_eff[mask])))


@dataclass(frozen=True)
class LearningReport:
    """Did initial predictions get closer to the algorithm's accuracy over time?

    ``period_frequency[t]`` is the share of period-t records whose initial
    prediction was at least as accurate as the rounded algorithmic one.
    """

    period_frequency: dict
    first_half_mean: Optional[float]
    second_half_mean: Optional[float]
    period_correlation: Optional[tuple]   # (rho, p)
    kl_initial_vs_algorithm: float

    def to_dict(self) -> dict:
        corr = self.period_correlation
        return {
            "period_frequency": {str(k): v for k, v in sorted(self.period_frequency.items())},
            "first_half_mean": self.first_half_mean,
            "second_half_mean": self.second_half_mean,
            "period_correlation": None if corr is None else {"rho": corr[0], "p_value": corr[1]},
            "kl_initial_vs_algorithm": self.kl_initial_vs_algorithm,
        }


def learning_report(records: Sequence[PredictionRecord],
                    series_length: Optional[int] = None) -> LearningReport:
    records = list(records)
    if not records:
        raise MetricsError("learning_report needs at least one record")
    by_period: dict = {}
    for rec in records:
        y10 = rec.y * 10
        at_least = abs(y10 - rec.y_hat_unassisted.tenths) \
            <= abs(y10 - rec.y_hat_alg_rounded.tenths)
        by_period.setdefault(rec.period, []).append(at_least)
    freq = {t: sum(v) / len(v) for t, v in by_period.items()}
    length = series_length if series_length is not None else max(freq)
    half = length // 2
    first = [f for t, f in freq.items() if t <= half]
    second = [f for t, f in freq.items() if half < t <= length]
    periods = sorted(freq)
    corr = pearson_correlation(periods, [freq[t] for t in periods]) \
        if len(periods) >= 3 else None
    kl = kl_divergence(grid_distribution(r.y_hat_unassisted for r in records),
                       grid_distribution(r.y_hat_alg_rounded for r in records))
    return LearningReport(
        period_frequency=freq,
        first_half_mean=_mean(first) if first else None,
        second_half_mean=_mean(second) if second else None,
        period_correlation=corr,
        kl_initial_vs_algorithm=kl,
    )
