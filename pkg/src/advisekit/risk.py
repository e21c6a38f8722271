"""The risk-assessment model: a Brier-minimizing probabilistic classifier.

Race and gender are excluded from the feature encoding itself, so no
downstream consumer can leak them into a prediction. The learner is the
in-repo forest in probability-averaging mode; with the default leaf size
(>= 50 samples) predictions never reach exactly 0 or 1 on mixed data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import DEFAULT_OFFENSE_TYPES, DefendantCase, derive_seed
from .forest import (
    ForestConfig,
    ForestModel,
    forest_from_dict,
    forest_to_dict,
    predict_proba,
    fit_forest,
)
from .metrics import quadratic_score

__all__ = [
    "RiskError",
    "RiskFeatureSpec",
    "RiskModelConfig",
    "RiskModel",
    "encode_risk_features",
    "encode_risk_matrix",
    "train_risk_model",
    "predict_risk",
    "predict_risk_batch",
    "save_risk_model",
    "load_risk_model",
]


class RiskError(ValueError):
    pass


@dataclass(frozen=True)
class RiskFeatureSpec:
    """Feature layout: [age, arrests, convictions, fta] + one-hot offense."""

    offense_types: tuple = DEFAULT_OFFENSE_TYPES

    def __post_init__(self) -> None:
        if not self.offense_types:
            raise RiskError("offense_types must not be empty")
        if len(set(self.offense_types)) != len(self.offense_types):
            raise RiskError("offense_types contains duplicates")

    @property
    def n_features(self) -> int:
        return 4 + len(self.offense_types)


def encode_risk_features(case, spec: RiskFeatureSpec = RiskFeatureSpec()) -> np.ndarray:
    """Encode the non-protected case fields as a feature vector.

    Accepts anything exposing age, offense_type, prior_arrests,
    prior_convictions, and prior_fta — race and gender are never read.
    """
    try:
        offense_idx = spec.offense_types.index(case.offense_type)
    except ValueError:
        raise RiskError(
            f"unknown offense category {case.offense_type!r}; "
            f"expected one of {spec.offense_types}"
        ) from None
    vec = np.zeros(spec.n_features)
    vec[0] = case.age
    vec[1] = case.prior_arrests
    vec[2] = case.prior_convictions
    vec[3] = 1.0 if case.prior_fta else 0.0
    vec[4 + offense_idx] = 1.0
    return vec


def encode_risk_matrix(cases: Sequence, spec: RiskFeatureSpec = RiskFeatureSpec()) -> np.ndarray:
    if not cases:
        raise RiskError("no cases to encode")
    return np.stack([encode_risk_features(c, spec) for c in cases])


@dataclass(frozen=True)
class RiskModelConfig:
    forest: ForestConfig = field(default_factory=ForestConfig)
    feature_spec: RiskFeatureSpec = field(default_factory=RiskFeatureSpec)
    holdout_fraction: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.holdout_fraction <= 0.5:
            raise RiskError(
                f"holdout_fraction must lie in [0, 0.5], got {self.holdout_fraction}"
            )


@dataclass
class RiskModel:
    """A trained risk model plus the metadata needed to reload it bit-exactly."""

    forest: ForestModel
    feature_spec: RiskFeatureSpec
    seed: int
    holdout_brier: Optional[float]   # 1 - mean quadratic score on the holdout

    def predict(self, case) -> float:
        return predict_risk(self, case)


def train_risk_model(cases: Sequence[DefendantCase], config: RiskModelConfig | None = None,
                     seed: int = 0) -> RiskModel:
    """Fit the risk model; reports held-out Brier loss when a holdout is kept.

    The model is trained on the non-holdout split only, so the reported loss
    is honest for the model actually returned.
    """
    config = config or RiskModelConfig()
    cases = list(cases)
    if len(cases) < 2:
        raise RiskError(f"need at least 2 cases, got {len(cases)}")
    outcomes = {c.outcome for c in cases}
    if len(outcomes) < 2:
        raise RiskError("training cases contain a single outcome class")
    X = encode_risk_matrix(cases, config.feature_spec)
    y = np.array([c.outcome for c in cases], dtype=np.int64)

    n_holdout = int(round(config.holdout_fraction * len(cases)))
    if n_holdout > 0:
        perm = np.random.default_rng(derive_seed(seed, "risk-holdout")).permutation(len(cases))
        holdout_idx, train_idx = perm[:n_holdout], perm[n_holdout:]
    else:
        holdout_idx, train_idx = np.array([], dtype=int), np.arange(len(cases))

    forest_config = replace(config.forest, seed=derive_seed(seed, "risk-forest"))
    forest = fit_forest(X[train_idx], y[train_idx], forest_config)

    brier = None
    if n_holdout > 0:
        preds = predict_proba(forest, X[holdout_idx])
        scores = [quadratic_score(int(y[i]), float(p))
                  for i, p in zip(holdout_idx, preds)]
        brier = 1.0 - sum(scores) / len(scores)
    return RiskModel(forest=forest, feature_spec=config.feature_spec, seed=seed,
                     holdout_brier=brier)


def predict_risk(model: RiskModel, case) -> float:
    """Predicted violation probability for one case."""
    return predict_proba(model.forest, encode_risk_features(case, model.feature_spec))


def predict_risk_batch(model: RiskModel, cases: Sequence) -> np.ndarray:
    return predict_proba(model.forest, encode_risk_matrix(cases, model.feature_spec))


def risk_model_to_dict(model: RiskModel) -> dict:
    return {
        "format": "advisekit-risk/1",
        "feature_spec": {"offense_types": list(model.feature_spec.offense_types)},
        "seed": model.seed,
        "holdout_brier": model.holdout_brier,
        "forest": forest_to_dict(model.forest),
    }


def risk_model_from_dict(d: dict) -> RiskModel:
    if d.get("format") != "advisekit-risk/1":
        raise RiskError(f"unrecognized risk model format {d.get('format')!r}")
    return RiskModel(
        forest=forest_from_dict(d["forest"]),
        feature_spec=RiskFeatureSpec(tuple(d["feature_spec"]["offense_types"])),
        seed=int(d["seed"]),
        holdout_brier=d["holdout_brier"],
    )


def save_risk_model(model: RiskModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(risk_model_to_dict(model), fh)


def load_risk_model(path) -> RiskModel:
    with open(path, encoding="utf-8") as fh:
        return risk_model_from_dict(json.load(fh))
