import json
import hashlib

import numpy as np
import pytest

from advisekit.core import GridPrediction, PredictionRecord, TreatmentKind
from advisekit.metrics import grid_distribution, quadratic_score
from advisekit.policy import AdviceContext, AdvisingPolicySpec, decide
from advisekit.simulation import (
    ExperimentPlan,
    HumanModel,
    SimulationError,
    effective_influence,
    run_suite,
    run_treatment,
    run_manifest,
    simulate_initial_prediction,
    simulate_response,
    write_suite_artifacts,
    write_treatment_artifacts,
)


def fresh_history(hm, seed=0):
    return hm.new_history(np.random.default_rng(seed))


def any_case(case_pool):
    return case_pool[0]


class TestHumanModelValidation:
    def test_defaults_are_valid(self):
        HumanModel()

    @pytest.mark.parametrize("kwargs", [
        {"sigma": -0.1},
        {"zero_anchor": 1.5},
        {"influence_base": -0.2},
        {"scarcity_slope": -1.0},
        {"acceptance_sharpness": 2.0},
        {"learning_rate": -0.5},
        {"sigma_floor": -0.01},
        {"zero_anchor_cutoff": 1.2},
    ])
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(SimulationError):
            HumanModel(**kwargs)


class TestInitialPrediction:
    def test_noiseless_discretization(self, case_pool):
        hm = HumanModel(sigma=0.0, zero_anchor=0.0)
        history = fresh_history(hm)
        for period in range(1, 6):
            out = simulate_initial_prediction(hm, any_case(case_pool), 1,
                                              history, lambda c: 0.42)
            assert out == GridPrediction(4)

    def test_anchor_rule_fires_below_cutoff(self, case_pool):
        hm = HumanModel(sigma=0.0, zero_anchor=1.0)
        history = fresh_history(hm)
        out = simulate_initial_prediction(hm, any_case(case_pool), 1,
                                          history, lambda c: 0.1)
        assert out == GridPrediction(0)

    def test_anchor_rule_never_fires_at_or_above_cutoff(self, case_pool):
        hm = HumanModel(sigma=0.0, zero_anchor=1.0)
        history = fresh_history(hm)
        out = simulate_initial_prediction(hm, any_case(case_pool), 1,
                                          history, lambda c: 0.15)
        assert out == GridPrediction(2)

    def test_zero_frequency_matches_anchor_probability(self, case_pool):
        # noiseless perception at 0.1, so the anchor coin is the only
        # randomness and rounding alone would never produce 0
        z0 = 0.105
        n = 10_000
        hm = HumanModel(sigma=0.0, zero_anchor=z0)
        history = fresh_history(hm, seed=5)
        zeros = sum(
            simulate_initial_prediction(hm, any_case(case_pool), 1, history,
                                        lambda c: 0.1) == GridPrediction(0)
            for _ in range(n)
        )
        sigma = (z0 * (1 - z0) / n) ** 0.5
        assert abs(zeros / n - z0) <= 3 * sigma

    def test_output_stays_on_grid_under_heavy_noise(self, case_pool):
        hm = HumanModel(sigma=2.0, zero_anchor=0.0)
        history = fresh_history(hm, seed=9)
        for _ in range(200):
            out = simulate_initial_prediction(hm, any_case(case_pool), 1,
                                              history, lambda c: 0.9)
            assert 0 <= out.tenths <= 10

    def test_noise_decays_only_after_an_advised_period(self, case_pool):
        hm = HumanModel(sigma=0.3, learning_rate=0.5, sigma_floor=0.1)
        history = fresh_history(hm)
        assert history.sigma == 0.3

        history.record_period(advised=False)
        simulate_initial_prediction(hm, any_case(case_pool), 2, history,
                                    lambda c: 0.5)
        assert history.sigma == 0.3

        history.record_period(advised=True)
        simulate_initial_prediction(hm, any_case(case_pool), 3, history,
                                    lambda c: 0.5)
        assert history.sigma == pytest.approx(0.1 + 0.5 * (0.3 - 0.1))

        # decay applies once per period, not once per advice shown
        history.record_period(advised=False)
        simulate_initial_prediction(hm, any_case(case_pool), 4, history,
                                    lambda c: 0.5)
        assert history.sigma == pytest.approx(0.2)

    def test_rejects_nonpositive_period(self, case_pool):
        hm = HumanModel()
        with pytest.raises(SimulationError):
            simulate_initial_prediction(hm, any_case(case_pool), 0,
                                        fresh_history(hm), lambda c: 0.5)


class TestResponse:
    def test_full_influence_always_adopts(self):
        hm = HumanModel(influence_base=1.0, scarcity_slope=0.0)
        rng = np.random.default_rng(3)
        for _ in range(50):
            out = simulate_response(hm, GridPrediction(2), GridPrediction(8),
                                    0.5, rng)
            assert out == GridPrediction(8)

    def test_zero_influence_and_acceptance_keeps_initial(self):
        hm = HumanModel(influence_base=0.0, acceptance_sharpness=0.0)
        rng = np.random.default_rng(3)
        for _ in range(50):
            out = simulate_response(hm, GridPrediction(2), GridPrediction(8),
                                    0.0, rng)
            assert out == GridPrediction(2)

    def test_partial_influence_blend(self):
        # 0.2 + 0.81 * (0.6 - 0.2) = 0.524, lands on 0.5
        hm = HumanModel(influence_base=0.81, scarcity_slope=0.0,
                        acceptance_sharpness=0.0)
        out = simulate_response(hm, GridPrediction(2), GridPrediction(6),
                                0.0, np.random.default_rng(0))
        assert out == GridPrediction(5)

    def test_scarcity_weakens_influence(self):
        hm = HumanModel(influence_base=1.0, scarcity_slope=0.7,
                        acceptance_sharpness=0.0)
        assert effective_influence(hm, 0.0) == 1.0
        assert effective_influence(hm, 1.0) == pytest.approx(0.3)
        # blend with I=0.3: 0.2 + 0.3*(0.8-0.2) = 0.38 -> 0.4
        out = simulate_response(hm, GridPrediction(2), GridPrediction(8),
                                1.0, np.random.default_rng(0))
        assert out == GridPrediction(4)

    def test_influence_is_clamped(self):
        hm = HumanModel(influence_base=0.2, scarcity_slope=0.7)
        assert effective_influence(hm, 1.0) == 0.0

    def test_rejects_bad_frequency(self):
        with pytest.raises(SimulationError):
            simulate_response(HumanModel(), GridPrediction(2), GridPrediction(8),
                              1.5, np.random.default_rng(0))


class TestPlanValidation:
    def test_policy_kind_must_match_treatment(self, make_plan):
        with pytest.raises(SimulationError, match="match"):
            make_plan(TreatmentKind.UPDATE,
                      policy=AdvisingPolicySpec(kind=TreatmentKind.NO_ADVICE))

    def test_series_cannot_exceed_pool(self, make_plan, case_pool):
        with pytest.raises(SimulationError, match="series_length"):
            make_plan(TreatmentKind.NO_ADVICE, series_length=len(case_pool) + 1)

    def test_needs_participants(self, make_plan):
        with pytest.raises(SimulationError, match="n_participants"):
            make_plan(TreatmentKind.NO_ADVICE, n_participants=0)

    def test_duplicate_case_ids_rejected(self, make_plan, case_pool,
                                         small_risk_model, gen_config):
        with pytest.raises(SimulationError, match="duplicate"):
            ExperimentPlan(
                treatment=TreatmentKind.NO_ADVICE,
                policy=AdvisingPolicySpec(kind=TreatmentKind.NO_ADVICE),
                risk=small_risk_model,
                human=HumanModel(),
                gen_config=gen_config,
                case_pool=case_pool[:3] + case_pool[:1],
                n_participants=2,
                series_length=2,
            )


class TestRunTreatment:
    def test_no_advice_arm(self, make_plan):
        run = run_treatment(make_plan(TreatmentKind.NO_ADVICE))
        assert len(run.records) == 30 * 20
        assert all(not r.z_hat for r in run.records)
        assert all(r.y_hat_final == r.y_hat_unassisted for r in run.records)
        finals = grid_distribution(r.y_hat_final for r in run.records)
        initials = grid_distribution(r.y_hat_unassisted for r in run.records)
        assert np.array_equal(finals, initials)

    def test_update_arm_always_advises(self, make_plan):
        run = run_treatment(make_plan(TreatmentKind.UPDATE))
        assert all(r.z_hat for r in run.records)
        assert run.report.responsiveness.advice_frequency == 1.0

    def test_omniscient_policy_accuracy_is_exactly_one(self, make_plan):
        run = run_treatment(make_plan(TreatmentKind.OMNISCIENT))
        assert run.report.policy_accuracy == 1.0

    def test_omniscient_with_full_adoption_takes_the_better_answer(self, make_plan):
        human = HumanModel(influence_base=1.0, scarcity_slope=0.0,
                           acceptance_sharpness=1.0)
        run = run_treatment(make_plan(TreatmentKind.OMNISCIENT, human=human))
        for rec in run.records:
            y10 = rec.y * 10
            err_final = abs(y10 - rec.y_hat_final.tenths)
            err_best = min(abs(y10 - rec.y_hat_unassisted.tenths),
                           abs(y10 - rec.y_hat_alg_rounded.tenths))
            assert err_final == err_best
        # equivalent statement in score space, recomputed by brute force
        mean_q = np.mean([quadratic_score(r.y, r.y_hat_final) for r in run.records])
        mean_best = np.mean([
            max(quadratic_score(r.y, r.y_hat_unassisted),
                quadratic_score(r.y, r.y_hat_alg_rounded))
            for r in run.records
        ])
        assert mean_q == pytest.approx(mean_best)

    def test_random_arm_skips_agreeing_predictions(self, make_plan):
        run = run_treatment(make_plan(TreatmentKind.RANDOM))
        agreeing = [r for r in run.records
                    if r.y_hat_alg_rounded == r.y_hat_unassisted]
        assert agreeing, "expected some records where human and model agree"
        assert all(not r.z_hat for r in agreeing)

    def test_learned_arm_matches_per_record_decisions(self, make_plan,
                                                      small_learned_policy,
                                                      case_pool):
        run = run_treatment(make_plan(TreatmentKind.LEARNED, n_participants=10,
                                      series_length=10))
        cases = {c.id: c for c in case_pool}
        for rec in run.records:
            ctx = AdviceContext.build(cases[rec.case_id], rec.y_hat_alg,
                                      rec.y_hat_unassisted, rec.period,
                                      rec.participant_id)
            assert decide(small_learned_policy, ctx) == rec.z_hat

    def test_each_participant_sees_distinct_cases(self, make_plan):
        run = run_treatment(make_plan(TreatmentKind.NO_ADVICE))
        by_pid = {}
        for rec in run.records:
            by_pid.setdefault(rec.participant_id, []).append(rec.case_id)
        assert len(by_pid) == 30
        for seen in by_pid.values():
            assert len(seen) == 20
            assert len(set(seen)) == 20

    def test_records_are_ordered_by_participant_then_period(self, make_plan):
        run = run_treatment(make_plan(TreatmentKind.UPDATE, n_participants=4,
                                      series_length=6))
        keys = [(r.participant_id, r.period) for r in run.records]
        assert keys == sorted(keys)

    def test_identical_plans_reproduce_identical_records(self, make_plan):
        a = run_treatment(make_plan(TreatmentKind.LEARNED, n_participants=6,
                                    series_length=8, master_seed=77))
        b = run_treatment(make_plan(TreatmentKind.LEARNED, n_participants=6,
                                    series_length=8, master_seed=77))
        assert a.records == b.records

    def test_seed_changes_the_records(self, make_plan):
        a = run_treatment(make_plan(TreatmentKind.NO_ADVICE, master_seed=1))
        b = run_treatment(make_plan(TreatmentKind.NO_ADVICE, master_seed=2))
        assert a.records != b.records


@pytest.fixture(scope="module")
def suite(make_plan):
    plans = [make_plan(kind, n_participants=40, series_length=25, master_seed=29)
             for kind in TreatmentKind]
    return run_suite(plans)


@pytest.fixture(scope="module")
def small_run(make_plan):
    return run_treatment(make_plan(TreatmentKind.LEARNED, n_participants=5,
                                   series_length=6, master_seed=13))


class TestRunSuite:
    def test_all_treatments_reported(self, suite):
        assert set(suite.runs) == set(TreatmentKind)
        assert sorted(k.value for k in suite.ordering) == \
            sorted(k.value for k in TreatmentKind)

    def test_oracle_policy_scores_best(self, suite):
        omni = suite.report(TreatmentKind.OMNISCIENT).scores.quadratic.mean
        for kind in TreatmentKind:
            if kind is not TreatmentKind.OMNISCIENT:
                assert omni >= suite.report(kind).scores.quadratic.mean

    def test_constant_advice_beats_no_advice(self, suite):
        update = suite.report(TreatmentKind.UPDATE).scores.quadratic.mean
        none = suite.report(TreatmentKind.NO_ADVICE).scores.quadratic.mean
        assert update >= none

    def test_ordering_is_sorted_by_reported_mean(self, suite):
        means = [suite.report(k).scores.quadratic.mean for k in suite.ordering]
        assert means == sorted(means, reverse=True)

    def test_mismatched_pools_rejected(self, make_plan, case_pool,
                                       small_risk_model, gen_config):
        good = make_plan(TreatmentKind.NO_ADVICE)
        other = ExperimentPlan(
            treatment=TreatmentKind.UPDATE,
            policy=AdvisingPolicySpec(kind=TreatmentKind.UPDATE),
            risk=small_risk_model,
            human=HumanModel(),
            gen_config=gen_config,
            case_pool=case_pool[:100],
            n_participants=30,
            series_length=20,
        )
        with pytest.raises(SimulationError, match="pool"):
            run_suite([good, other])

    def test_duplicate_treatments_rejected(self, make_plan):
        with pytest.raises(SimulationError, match="duplicate"):
            run_suite([make_plan(TreatmentKind.UPDATE),
                       make_plan(TreatmentKind.UPDATE, master_seed=5)])

    def test_empty_suite_rejected(self):
        with pytest.raises(SimulationError):
            run_suite([])


class TestArtifacts:
    def test_written_files_verify_against_manifest(self, small_run, tmp_path):
        paths = write_treatment_artifacts(small_run, tmp_path / "arm")
        manifest = json.loads(open(paths["manifest"]).read())
        records_bytes = open(paths["records"], "rb").read()
        report_bytes = open(paths["report"], "rb").read()
        assert manifest["records_sha256"] == \
            hashlib.sha256(records_bytes).hexdigest()
        assert manifest["report_sha256"] == \
            hashlib.sha256(report_bytes).hexdigest()
        assert manifest["treatment"] == "Learned"
        assert manifest["n_participants"] == 5

    def test_records_round_trip_through_jsonl(self, small_run, tmp_path):
        paths = write_treatment_artifacts(small_run, tmp_path / "arm")
        lines = open(paths["records"]).read().splitlines()
        parsed = [PredictionRecord.from_json_dict(json.loads(l)) for l in lines]
        assert tuple(parsed) == small_run.records

    def test_rerun_produces_byte_identical_artifacts(self, make_plan, tmp_path):
        plan = make_plan(TreatmentKind.RANDOM, n_participants=5,
                         series_length=6, master_seed=99)
        p1 = write_treatment_artifacts(run_treatment(plan), tmp_path / "a")
        p2 = write_treatment_artifacts(run_treatment(plan), tmp_path / "b")
        for key in ("records", "report", "manifest"):
            assert open(p1[key], "rb").read() == open(p2[key], "rb").read()

    def test_manifest_has_no_clock_dependence(self, small_run):
        m1 = run_manifest(small_run)
        m2 = run_manifest(small_run)
        assert m1 == m2
        text = json.dumps(m1).lower()
        for word in ("time", "date", "stamp"):
            assert word not in text

    def test_suite_artifacts_layout(self, make_plan, tmp_path):
        plans = [make_plan(k, n_participants=4, series_length=5, master_seed=3)
                 for k in (TreatmentKind.NO_ADVICE, TreatmentKind.UPDATE)]
        result = run_suite(plans)
        paths = write_suite_artifacts(result, tmp_path / "suite")
        summary = json.loads(open(paths["suite"]).read())
        assert set(summary["treatments"]) == {"NoAdvice", "Update"}
        assert len(summary["ordering_by_mean_quadratic"]) == 2
        for kind in ("NoAdvice", "Update"):
            assert json.loads(open(paths[kind]["manifest"]).read())["treatment"] \
                == kind
