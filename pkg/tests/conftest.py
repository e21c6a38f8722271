"""Shared fixtures: a small synthetic world reused across test modules.

Session-scoped so the forest training cost is paid once.
"""

import numpy as np
import pytest

from advisekit.core import GridPrediction, round_to_grid
from advisekit.datasets import GeneratorConfig, HumanPrediction, PredictionDataset, \
    generate_synthetic
from advisekit.forest import ForestConfig
from advisekit.policy import AdvisingPolicySpec, PolicyFeatureConfig, TreatmentKind, \
    build_policy_training_set, calibrate_threshold, train_learned_policy
from advisekit.risk import RiskModelConfig, train_risk_model


@pytest.fixture(scope="session")
def gen_config():
    return GeneratorConfig(n_cases=400, seed=11)


@pytest.fixture(scope="session")
def case_pool(gen_config):
    return generate_synthetic(gen_config).cases


@pytest.fixture(scope="session")
def small_risk_model(case_pool):
    config = RiskModelConfig(
        forest=ForestConfig(n_estimators=40, min_samples_split=40,
                            min_samples_leaf=20, max_features=4),
        holdout_fraction=0.2,
    )
    return train_risk_model(case_pool, config, seed=5)


def synthesize_unassisted(cases, latent_risk, per_case=5, sigma=0.25, seed=17):
    """Noisy-perception human predictions: latent risk + noise, grid-rounded."""
    rng = np.random.default_rng(seed)
    predictions = []
    for case in cases:
        latent = latent_risk(case)
        noisy = np.clip(latent + rng.normal(0.0, sigma, size=per_case), 0.0, 1.0)
        for j, p in enumerate(noisy):
            predictions.append(HumanPrediction(
                case_id=case.id,
                participant_id=f"h:{j:03d}",
                value=round_to_grid(float(p)),
            ))
    return predictions


@pytest.fixture(scope="session")
def human_dataset(case_pool, gen_config):
    predictions = synthesize_unassisted(case_pool, gen_config.latent_risk)
    return PredictionDataset(cases=case_pool, predictions=tuple(predictions))


@pytest.fixture(scope="session")
def small_training_set(human_dataset, small_risk_model):
    return build_policy_training_set(human_dataset, small_risk_model)


@pytest.fixture(scope="session")
def small_learned_policy(small_training_set):
    model = train_learned_policy(
        small_training_set,
        ForestConfig(n_estimators=60, min_samples_split=40, min_samples_leaf=20,
                     max_features=4, seed=23),
    )
    threshold = calibrate_threshold(model, small_training_set)
    return AdvisingPolicySpec(kind=TreatmentKind.LEARNED, model=model,
                              threshold=threshold, seed=23)


@pytest.fixture(scope="session")
def make_plan(case_pool, small_risk_model, small_learned_policy, gen_config):
    """Factory for small experiment plans sharing the session's trained world."""
    from advisekit.simulation import ExperimentPlan, HumanModel

    def build(kind, n_participants=30, series_length=20, master_seed=101,
              human=None, policy=None):
        if policy is None:
            if kind is TreatmentKind.LEARNED:
                policy = small_learned_policy
            else:
                policy = AdvisingPolicySpec(kind=kind, seed=7)
        return ExperimentPlan(
            treatment=kind,
            policy=policy,
            risk=small_risk_model,
            human=human if human is not None else HumanModel(),
            gen_config=gen_config,
            case_pool=case_pool,
            n_participants=n_participants,
            series_length=series_length,
            master_seed=master_seed,
        )

    return build
