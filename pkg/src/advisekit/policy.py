"""Advising policies: when to show the algorithmic risk assessment.

Five policy kinds share one ``decide`` entry point. The learned policy is a
forest classifier over race/gender-free case features plus the algorithm's
prediction, the human's initial prediction, and their absolute gap; its
threshold is calibrated so the advise frequency matches the training-label
base rate. Contexts carry only a protected-attribute-free slice of the case
(:class:`CaseFacts`), and the ground-truth outcome may be attached only on
the omniscient path — other kinds reject contexts that carry it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DefendantCase, GridPrediction, TreatmentKind, derive_seed, round_to_grid
from .datasets import PredictionDataset
from .forest import ForestConfig, ForestModel, classify, fit_forest, forest_from_dict, \
    forest_to_dict, predict_proba
from .risk import RiskFeatureSpec, RiskModel, encode_risk_features, predict_risk_batch

__all__ = [
    "PolicyError",
    "CaseFacts",
    "AdviceContext",
    "PolicyFeatureConfig",
    "AdvisingPolicySpec",
    "PolicyTrainingSet",
    "encode_policy_features",
    "build_policy_training_set",
    "train_learned_policy",
    "calibrate_threshold",
    "threshold_matching_rate",
    "decide",
    "save_policy",
    "load_policy",
]


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class CaseFacts:
    """The policy-visible slice of a defendant case: no race, gender, or outcome."""

    age: int
    offense_type: str
    prior_arrests: int
    prior_convictions: int
    prior_fta: bool

    @classmethod
    def from_case(cls, case: DefendantCase) -> "CaseFacts":
        return cls(age=case.age, offense_type=case.offense_type,
                   prior_arrests=case.prior_arrests,
                   prior_convictions=case.prior_convictions,
                   prior_fta=case.prior_fta)


@dataclass(frozen=True)
class AdviceContext:
    """Everything a policy may look at when deciding whether to advise.

    ``outcome_oracle`` exists for the omniscient policy alone; attach it
    only on that path — every other policy kind rejects a context carrying it.
    """

    facts: CaseFacts
    y_hat_alg: float
    y_hat_alg_rounded: GridPrediction
    y_hat_unassisted: GridPrediction
    period: int
    participant_id: str
    outcome_oracle: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.y_hat_alg <= 1.0:
            raise PolicyError(f"y_hat_alg must lie in [0, 1], got {self.y_hat_alg}")
        if round_to_grid(self.y_hat_alg) != self.y_hat_alg_rounded:
            raise PolicyError("y_hat_alg_rounded does not round from y_hat_alg")
        if self.period < 1:
            raise PolicyError(f"period must be >= 1, got {self.period}")
        if self.outcome_oracle not in (None, 0, 1):
            raise PolicyError(f"outcome_oracle must be 0/1/None, got {self.outcome_oracle!r}")

    @classmethod
    def build(cls, case: DefendantCase, y_hat_alg: float,
              y_hat_unassisted: GridPrediction, period: int, participant_id: str,
              include_outcome: bool = False) -> "AdviceContext":
        if not 0.0 <= y_hat_alg <= 1.0:
            raise PolicyError(
                f"algorithm prediction must lie in [0, 1], got {y_hat_alg!r}")
        return cls(
            facts=CaseFacts.from_case(case),
            y_hat_alg=float(y_hat_alg),
            y_hat_alg_rounded=round_to_grid(y_hat_alg),
            y_hat_unassisted=y_hat_unassisted,
            period=period,
            participant_id=participant_id,
            outcome_oracle=case.outcome if include_outcome else None,
        )


@dataclass(frozen=True)
class PolicyFeatureConfig:
    """Feature layout for the learned policy; the gap term can be ablated."""

    feature_spec: RiskFeatureSpec = field(default_factory=RiskFeatureSpec)
    include_gap: bool = True

    @property
    def n_features(self) -> int:
        return self.feature_spec.n_features + (3 if self.include_gap else 2)


def encode_policy_features(ctx: AdviceContext,
                           config: PolicyFeatureConfig = PolicyFeatureConfig()) -> np.ndarray:
    """Case features plus (algorithm prediction, human prediction[, |gap|])."""
    case_vec = encode_risk_features(ctx.facts, config.feature_spec)
    human = ctx.y_hat_unassisted.value
    tail = [ctx.y_hat_alg, human]
    if config.include_gap:
        tail.append(abs(ctx.y_hat_alg - human))
    return np.concatenate([case_vec, tail])


@dataclass(frozen=True)
class PolicyTrainingSet:
    """Rows of (policy features, advise label); label 1 iff the algorithm's
    prediction was strictly more accurate than the human's."""

    X: np.ndarray
    labels: np.ndarray
    feature_config: PolicyFeatureConfig

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.labels.shape != (self.X.shape[0],):
            raise PolicyError(f"inconsistent shapes: X {self.X.shape}, "
                              f"labels {self.labels.shape}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def base_rate(self) -> float:
        return float(self.labels.mean())


def build_policy_training_set(ds: PredictionDataset, risk: RiskModel,
                              feature_config: PolicyFeatureConfig | None = None,
                              label_on_rounded: bool = False) -> PolicyTrainingSet:
    """One training row per human prediction in the dataset.

    The label compares the algorithm's raw prediction against the human's —
    strictly, so ties label 0. ``label_on_rounded`` switches the comparison
    to the display-rounded value instead.
    """
    if not ds.predictions:
        raise PolicyError("dataset has no predictions to learn from")
    feature_config = feature_config or PolicyFeatureConfig()
    cases = ds.case_index()
    alg_by_case = dict(zip(
        (c.id for c in ds.cases),
        predict_risk_batch(risk, ds.cases),
    ))
    rows = []
    labels = np.empty(len(ds.predictions), dtype=np.int64)
    for i, pred in enumerate(ds.predictions):
        case = cases[pred.case_id]
        alg = float(alg_by_case[pred.case_id])
        ctx = AdviceContext.build(case, alg, pred.value, period=1,
                                  participant_id=pred.participant_id)
        rows.append(encode_policy_features(ctx, feature_config))
        if label_on_rounded:
            y10 = case.outcome * 10
            better = abs(y10 - ctx.y_hat_alg_rounded.tenths) \
                < abs(y10 - pred.value.tenths)
        else:
            better = abs(case.outcome - alg) < abs(case.outcome - pred.value.value)
        labels[i] = 1 if better else 0
    return PolicyTrainingSet(X=np.stack(rows), labels=labels,
                             feature_config=feature_config)


def train_learned_policy(ts: PolicyTrainingSet,
                         config: ForestConfig | None = None) -> ForestModel:
    return fit_forest(ts.X, ts.labels, config or ForestConfig())


def threshold_matching_rate(scores: Sequence[float], target: float) -> float:
    """Smallest observed score whose tail frequency is nearest the target.

    advise-frequency(t) is the fraction of scores >= t; the scan runs over
    the distinct observed scores only.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise PolicyError("cannot calibrate on an empty score set")
    if not 0.0 <= target <= 1.0:
        raise PolicyError(f"target rate must lie in [0, 1], got {target}")
    ordered = np.sort(scores)
    n = scores.size
    best = None
    for t in np.unique(ordered):
        tail = n - np.searchsorted(ordered, t, side="left")
        diff = abs(tail / n - target)
        if best is None or diff < best[0]:
            best = (diff, float(t))
    return best[1]


def calibrate_threshold(model: ForestModel, ts: PolicyTrainingSet) -> float:
    """Threshold whose advise frequency on the training set best matches the
    label base rate."""
    scores = predict_proba(model, ts.X)
    return threshold_matching_rate(scores, ts.base_rate)


@dataclass(frozen=True)
class AdvisingPolicySpec:
    """One of the five advising policies, with its parameters."""

    kind: TreatmentKind
    model: Optional[ForestModel] = None
    threshold: float = 0.42
    advise_prob: float = 0.30
    seed: int = 0
    feature_config: PolicyFeatureConfig = field(default_factory=PolicyFeatureConfig)

    def __post_init__(self) -> None:
        if not isinstance(self.kind, TreatmentKind):
            raise PolicyError(f"kind must be a TreatmentKind, got {self.kind!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise PolicyError(f"threshold must lie in [0, 1], got {self.threshold}")
        if not 0.0 <= self.advise_prob <= 1.0:
            raise PolicyError(f"advise_prob must lie in [0, 1], got {self.advise_prob}")
        if self.kind is TreatmentKind.LEARNED and self.model is None:
            raise PolicyError("Learned policy needs a trained model")


def _random_coin(spec: AdvisingPolicySpec, ctx: AdviceContext) -> bool:
    # Participant-scoped and replayable: the coin is a pure function of
    # (policy seed, participant, period), not of call order.
    rng = np.random.default_rng(
        derive_seed(spec.seed, "advice-coin", ctx.participant_id, ctx.period))
    return bool(rng.random() < spec.advise_prob)


def decide(spec: AdvisingPolicySpec, ctx: AdviceContext) -> bool:
    """Should the participant be shown the algorithmic prediction?"""
    if spec.kind is not TreatmentKind.OMNISCIENT and ctx.outcome_oracle is not None:
        raise PolicyError(f"{spec.kind.value} context must not carry the outcome oracle")
    if spec.kind is TreatmentKind.NO_ADVICE:
        return False
    if spec.kind is TreatmentKind.UPDATE:
        return True
    if spec.kind is TreatmentKind.OMNISCIENT:
        if ctx.outcome_oracle is None:
            raise PolicyError("Omniscient policy needs outcome_oracle in the context")
        y10 = ctx.outcome_oracle * 10
        return abs(y10 - ctx.y_hat_alg_rounded.tenths) \
            < abs(y10 - ctx.y_hat_unassisted.tenths)
    if spec.kind is TreatmentKind.RANDOM:
        if ctx.y_hat_alg_rounded == ctx.y_hat_unassisted:
            return False
        return _random_coin(spec, ctx)
    # Learned
    x = encode_policy_features(ctx, spec.feature_config)
    return bool(classify(spec.model, x, spec.threshold))


def save_policy(spec: AdvisingPolicySpec, path) -> None:
    payload = {
        "format": "advisekit-policy/1",
        "kind": spec.kind.value,
        "threshold": spec.threshold,
        "advise_prob": spec.advise_prob,
        "seed": spec.seed,
        "feature_config": {
            "offense_types": list(spec.feature_config.feature_spec.offense_types),
            "include_gap": spec.feature_config.include_gap,
        },
        "forest": None if spec.model is None else forest_to_dict(spec.model),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_policy(path) -> AdvisingPolicySpec:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != "advisekit-policy/1":
        raise PolicyError(f"unrecognized policy format {d.get('format')!r}")
    fc = d["feature_config"]
    return AdvisingPolicySpec(
        kind=TreatmentKind.parse(d["kind"]),
        model=None if d["forest"] is None else forest_from_dict(d["forest"]),
        threshold=float(d["threshold"]),
        advise_prob=float(d["advise_prob"]),
        seed=int(d["seed"]),
        feature_config=PolicyFeatureConfig(
            feature_spec=RiskFeatureSpec(tuple(fc["offense_types"])),
            include_gap=bool(fc["include_gap"]),
        ),
    )
