"""Simulated prediction sessions at desk scale.

The study this package supports puts people in front of a sequence of
defendant profiles; each person predicts a failure-to-appear probability on
an 11-point grid, an advising policy decides whether to reveal the model's
estimate, and the person may revise. This module supplies the missing
ingredient for end-to-end runs without human subjects: a configurable
behavioral stand-in, plus the runner that walks it through a full treatment
arm and scores the resulting records.

The human stand-in is deliberately simple and is **not** a cognitive model.
Its parameters exist so that observed behavioral magnitudes (how often people
anchor on zero, how strongly advice moves them, how that weakens when advice
is frequent, how their own accuracy drifts with feedback) are reachable
settings rather than hard-coded outcomes:

* perception: the person perceives the case's true risk plus Gaussian noise
  (scale ``sigma``), clamped to [0, 1] and grid-rounded;
* zero anchoring: when perceived risk is below ``zero_anchor_cutoff``, the
  answer snaps to exactly 0.0 with probability ``zero_anchor``;
* response to advice: with effective influence
  ``I = clamp(influence_base - scarcity_slope * advice_frequency_so_far, 0, 1)``
  the person adopts the advice outright with probability
  ``acceptance_sharpness * I`` and otherwise moves a fraction ``I`` of the
  way from their initial answer toward the advice (grid-rounded);
* learning: in the period after seeing advice, the perception noise scale
  shrinks by factor ``(1 - learning_rate)`` toward ``sigma_floor``.

Determinism contract: every run is a pure function of the plan. Each
participant owns one RNG stream seeded from the master seed and their id;
the stream is consumed in a documented order — first the case-order draw,
then per period a perception-noise normal, a zero-anchor coin only when the
perceived value is below the cutoff, and an acceptance coin only when advice
is shown. Records are emitted in (participant, period) order, so a parallel
implementation must merge to the same stream.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    DefendantCase,
    GridPrediction,
    PredictionRecord,
    TreatmentKind,
    derive_seed,
    round_to_grid,
)
from .datasets import GeneratorConfig
from .forest import forest_to_dict, predict_proba
from .metrics import (
    FairnessReport,
    LearningReport,
    ResponsivenessReport,
    ScoreReport,
    fairness_report,
    learning_report,
    policy_accuracy,
    responsiveness_report,
    score_report,
)
from .policy import AdviceContext, AdvisingPolicySpec, decide, encode_policy_features
from .risk import RiskModel, predict_risk_batch, risk_model_to_dict

__all__ = [
    "SimulationError",
    "HumanModel",
    "ParticipantHistory",
    "effective_influence",
    "simulate_initial_prediction",
    "simulate_response",
    "ExperimentPlan",
    "TreatmentReport",
    "TreatmentRun",
    "run_treatment",
    "SuiteResult",
    "run_suite",
    "write_treatment_artifacts",
    "write_suite_artifacts",
]


class SimulationError(ValueError):
    pass


# --- the behavioral stand-in ------------------------------------------------

@dataclass(frozen=True)
class HumanModel:
    """Parameters of the simulated predictor. See the module docstring."""

    sigma: float = 0.25
    zero_anchor: float = 0.105
    zero_anchor_cutoff: float = 0.15
    influence_base: float = 1.0
    scarcity_slope: float = 0.7
    acceptance_sharpness: float = 0.95
    learning_rate: float = 0.05
    sigma_floor: float = 0.12
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise SimulationError(f"sigma must be >= 0, got {self.sigma}")
        for name in ("zero_anchor", "influence_base", "acceptance_sharpness",
                     "learning_rate", "zero_anchor_cutoff"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SimulationError(f"{name} must lie in [0, 1], got {v}")
        if self.scarcity_slope < 0:
            raise SimulationError(
                f"scarcity_slope must be >= 0, got {self.scarcity_slope}")
        if self.sigma_floor < 0:
            raise SimulationError(
                f"sigma_floor must be >= 0, got {self.sigma_floor}")

    def new_history(self, rng: Optional[np.random.Generator] = None
                    ) -> "ParticipantHistory":
        if rng is None:
            rng = np.random.default_rng(self.seed)
        return ParticipantHistory(rng=rng, sigma=self.sigma)

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ParticipantHistory:
    """Mutable per-participant state: RNG stream, noise level, advice tally."""

    rng: np.random.Generator
    sigma: float
    periods: int = 0
    advised_periods: int = 0
    advised_last_period: bool = False

    @property
    def advice_frequency(self) -> float:
        """Share of *completed* periods in which advice was shown."""
        return self.advised_periods / self.periods if self.periods else 0.0

    def record_period(self, advised: bool) -> None:
        self.periods += 1
        self.advised_periods += int(advised)
        self.advised_last_period = bool(advised)


def effective_influence(hm: HumanModel, advice_frequency: float) -> float:
    """How far toward the advice the participant moves, in [0, 1]."""
    raw = hm.influence_base - hm.scarcity_slope * advice_frequency
    return min(max(raw, 0.0), 1.0)


def simulate_initial_prediction(hm: HumanModel, case: DefendantCase, period: int,
                                history: ParticipantHistory,
                                latent: Callable[[DefendantCase], float],
                                ) -> GridPrediction:
    """The participant's own answer before any advice.

    ``latent`` maps a case to its true risk probability — the same ground
    truth the synthetic generator used, so perception is noise around
    reality rather than around a second model. Mutates ``history``: applies
    the post-advice noise decay once at the top of the period, and consumes
    RNG draws as documented in the module docstring.
    """
    if period < 1:
        raise SimulationError(f"period must be >= 1, got {period}")
    if history.advised_last_period:
        history.sigma = hm.sigma_floor \
            + (1.0 - hm.learning_rate) * (history.sigma - hm.sigma_floor)
        history.advised_last_period = False
    perceived = float(latent(case)) + history.rng.normal(0.0, history.sigma)
    perceived = min(max(perceived, 0.0), 1.0)
    if perceived < hm.zero_anchor_cutoff:
        if history.rng.random() < hm.zero_anchor:
            return GridPrediction(0)
    return round_to_grid(perceived)


def simulate_response(hm: HumanModel, initial: GridPrediction,
                      advice: GridPrediction, advice_frequency: float,
                      rng: np.random.Generator) -> GridPrediction:
    """The participant's answer after seeing the advice.

    ``advice_frequency`` is the share of this participant's *preceding*
    periods that carried advice; the current period is not counted.
    """
    if not 0.0 <= advice_frequency <= 1.0:
        raise SimulationError(
            f"advice_frequency must lie in [0, 1], got {advice_frequency}")
    influence = effective_influence(hm, advice_frequency)
    if rng.random() < hm.acceptance_sharpness * influence:
        return advice
    blended = initial.value + influence * (advice.value - initial.value)
    return round_to_grid(blended)


# --- the treatment runner ----------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one treatment arm needs, pinned down to the last seed."""

    treatment: TreatmentKind
    policy: AdvisingPolicySpec
    risk: RiskModel
    human: HumanModel
    gen_config: GeneratorConfig
    case_pool: tuple
    n_participants: int = 200
    series_length: int = 50
    master_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "case_pool", tuple(self.case_pool))
        if self.policy.kind is not self.treatment:
            raise SimulationError(
                f"plan treatment {self.treatment.value} does not match "
                f"policy kind {self.policy.kind.value}")
        if self.n_participants < 1:
            raise SimulationError(
                f"n_participants must be >= 1, got {self.n_participants}")
        if not self.case_pool:
            raise SimulationError("case pool is empty")
        if not 1 <= self.series_length <= len(self.case_pool):
            raise SimulationError(
                f"series_length must lie in [1, {len(self.case_pool)}], "
                f"got {self.series_length}")
        ids = [c.id for c in self.case_pool]
        if len(set(ids)) != len(ids):
            raise SimulationError("case pool contains duplicate case ids")


@dataclass(frozen=True)
class TreatmentReport:
    """All per-treatment statistics, computed by the metrics module."""

    treatment: TreatmentKind
    scores: ScoreReport
    responsiveness: ResponsivenessReport
    fairness: FairnessReport
    learning: LearningReport
    policy_accuracy: float

    def to_dict(self) -> dict:
        return {
            "treatment": self.treatment.value,
            "scores": self.scores.to_dict(),
            "responsiveness": self.responsiveness.to_dict(),
            "fairness": self.fairness.to_dict(),
            "learning": self.learning.to_dict(),
            "policy_accuracy": self.policy_accuracy,
        }


@dataclass(frozen=True)
class TreatmentRun:
    plan: ExperimentPlan
    records: tuple
    report: TreatmentReport


def _learned_score_table(spec: AdvisingPolicySpec, pool: Sequence[DefendantCase],
                         alg: np.ndarray) -> np.ndarray:
    """Policy scores for every (pool case, initial grid value) pair.

    The learned policy's features depend only on the case, the algorithic
    estimate (fixed per case), and the participant's initial answer (one of
    11 grid values), so all scores a run can ever need fit in one batched
    forest evaluation. Batch and single-row forest predictions are
    bit-identical, which makes this an exact replacement for per-record
    ``decide`` calls; a test pins that equivalence.
    """
    fc = spec.feature_config
    rows = np.empty((len(pool) * 11, fc.n_features), dtype=np.float64)
    i = 0
    for case, a in zip(pool, alg):
        for tenths in range(11):
            ctx = AdviceContext.build(case, float(a), GridPrediction(tenths),
                                      period=1, participant_id="table")
            rows[i] = encode_policy_features(ctx, fc)
            i += 1
    scores = predict_proba(spec.model, rows)
    return np.asarray(scores, dtype=np.float64).reshape(len(pool), 11)


def build_treatment_report(treatment: TreatmentKind,
                           records: Sequence[PredictionRecord],
                           case_pool: Sequence[DefendantCase],
                           series_length: Optional[int] = None,
                           ci_method: str = "normal",
                           ci_seed: int = 0) -> TreatmentReport:
    cases = {c.id: c for c in case_pool}
    return TreatmentReport(
        treatment=treatment,
        scores=score_report(records, ci_method, ci_seed),
        responsiveness=responsiveness_report(records, ci_method, ci_seed),
        fairness=fairness_report(records, cases),
        learning=learning_report(records, series_length),
        policy_accuracy=policy_accuracy(records),
    )


def run_treatment(plan: ExperimentPlan, ci_method: str = "normal") -> TreatmentRun:
    """Walk every simulated participant through one treatment arm."""
    pool = plan.case_pool
    alg = predict_risk_batch(plan.risk, pool)
    alg_rounded = [round_to_grid(float(a)) for a in alg]
    latent_by_id = {c.id: plan.gen_config.latent_risk(c) for c in pool}
    latent = lambda c: latent_by_id[c.id]  # noqa: E731

    score_table = None
    if plan.treatment is TreatmentKind.LEARNED:
        score_table = _learned_score_table(plan.policy, pool, alg)

    records = []
    for p in range(plan.n_participants):
        pid = f"sim:{p:04d}"
        rng = np.random.default_rng(derive_seed(plan.master_seed, "participant", pid))
        order = rng.choice(len(pool), size=plan.series_length, replace=False)
        history = plan.human.new_history(rng)
        for t in range(1, plan.series_length + 1):
            pos = int(order[t - 1])
            case = pool[pos]
            initial = simulate_initial_prediction(plan.human, case, t, history, latent)
            a = float(alg[pos])
            if score_table is not None:
                advised = bool(score_table[pos, initial.tenths]
                               >= plan.policy.threshold)
            else:
                ctx = AdviceContext.build(
                    case, a, initial, t, pid,
                    include_outcome=plan.treatment is TreatmentKind.OMNISCIENT)
                advised = decide(plan.policy, ctx)
            assisted = None
            if advised:
                assisted = simulate_response(plan.human, initial, alg_rounded[pos],
                                             history.advice_frequency, history.rng)
            records.append(PredictionRecord(
                case_id=case.id,
                participant_id=pid,
                period=t,
                y=case.outcome,
                y_hat_unassisted=initial,
                y_hat_alg=a,
                y_hat_alg_rounded=alg_rounded[pos],
                z_hat=advised,
                y_hat_assisted=assisted,
                y_hat_final=assisted if advised else initial,
            ))
            history.record_period(advised)

    report = build_treatment_report(plan.treatment, records, pool,
                                    plan.series_length, ci_method,
                                    ci_seed=plan.master_seed)
    return TreatmentRun(plan=plan, records=tuple(records), report=report)


# --- suite comparison --------------------------------------------------------

@dataclass(frozen=True)
class SuiteResult:
    """One run per treatment over shared ingredients, plus their ranking."""

    runs: Mapping[TreatmentKind, TreatmentRun]
    ordering: tuple

    def report(self, kind: TreatmentKind) -> TreatmentReport:
        return self.runs[kind].report

    def to_dict(self) -> dict:
        return {
            "ordering_by_mean_quadratic": [k.value for k in self.ordering],
            "treatments": {k.value: run.report.to_dict()
                           for k, run in self.runs.items()},
        }


def run_suite(plans: Sequence[ExperimentPlan], ci_method: str = "normal"
              ) -> SuiteResult:
    """Run several treatment arms that share their ingredients and rank them.

    All plans must use the same case pool, risk model, generator config and
    human-model parameters, so that the treatments differ only in the
    advising policy (and seeds, if the caller varies them).
    """
    plans = list(plans)
    if not plans:
        raise SimulationError("run_suite needs at least one plan")
    base = plans[0]
    seen = set()
    for plan in plans:
        if plan.treatment in seen:
            raise SimulationError(f"duplicate treatment {plan.treatment.value}")
        seen.add(plan.treatment)
        if plan.case_pool != base.case_pool:
            raise SimulationError("plans must share one case pool")
        if plan.risk is not base.risk:
            raise SimulationError("plans must share one risk model")
        if plan.human != base.human:
            raise SimulationError("plans must share one human model")
        if plan.gen_config != base.gen_config:
            raise SimulationError("plans must share one generator config")
    runs = {plan.treatment: run_treatment(plan, ci_method) for plan in plans}
    ordering = tuple(sorted(
        runs, key=lambda k: runs[k].report.scores.quadratic.mean, reverse=True))
    return SuiteResult(runs=runs, ordering=ordering)


# --- artifacts ----------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _records_jsonl(records: Sequence[PredictionRecord]) -> str:
    return "".join(_canonical_json(r.to_json_dict()) + "\n" for r in records)


def _policy_descriptor(spec: AdvisingPolicySpec) -> dict:
    return {
        "kind": spec.kind.value,
        "threshold": spec.threshold,
        "advise_prob": spec.advise_prob,
        "seed": spec.seed,
        "include_gap": spec.feature_config.include_gap,
        "model_sha256": None if spec.model is None
        else _sha256_text(_canonical_json(forest_to_dict(spec.model))),
    }


def run_manifest(run: TreatmentRun) -> dict:
    """Everything needed to reproduce or verify the run. No timestamps:
    re-running the same plan must produce byte-identical artifacts."""
    plan = run.plan
    records_text = _records_jsonl(run.records)
    report_text = _canonical_json(run.report.to_dict())
    pool_payload = [dataclasses.asdict(c) for c in plan.case_pool]
    return {
        "format": "advisekit-run/1",
        "treatment": plan.treatment.value,
        "master_seed": plan.master_seed,
        "n_participants": plan.n_participants,
        "series_length": plan.series_length,
        "n_cases": len(plan.case_pool),
        "human_model": plan.human.to_json_dict(),
        "policy": _policy_descriptor(plan.policy),
        "generator_config": plan.gen_config.to_json_dict(),
        "risk_model_sha256": _sha256_text(
            _canonical_json(risk_model_to_dict(plan.risk))),
        "case_pool_sha256": _sha256_text(_canonical_json(pool_payload)),
        "records_sha256": _sha256_text(records_text),
        "report_sha256": _sha256_text(report_text),
    }


def write_treatment_artifacts(run: TreatmentRun, out_dir) -> dict:
    """Write records.jsonl, report.json and manifest.json; returns path map."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "records": os.path.join(out_dir, "records.jsonl"),
        "report": os.path.join(out_dir, "report.json"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    with open(paths["records"], "w", encoding="utf-8") as fh:
        fh.write(_records_jsonl(run.records))
    with open(paths["report"], "w", encoding="utf-8") as fh:
        fh.write(_canonical_json(run.report.to_dict()))
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write(json.dumps(run_manifest(run), sort_keys=True, indent=2))
    return paths


def write_suite_artifacts(result: SuiteResult, out_dir) -> dict:
    """One subdirectory per treatment plus a cross-treatment summary."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for kind, run in result.runs.items():
        sub = os.path.join(out_dir, kind.value.lower().replace(" ", "-"))
        paths[kind.value] = write_treatment_artifacts(run, sub)
    summary_path = os.path.join(out_dir, "suite.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(result.to_dict(), sort_keys=True, indent=2))
    paths["suite"] = summary_path
    return paths
