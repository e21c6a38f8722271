"""End-to-end tests for the command line.

The pipeline fixture drives every subcommand in-process through ``main()``
exactly as a user would from a shell, with no direct library calls in
between, so these tests prove the whole chain composes: synthesize data,
augment it, train both models, calibrate, simulate, evaluate, serve.
"""

import contextlib
import io
import json
import hashlib
import os
from pathlib import Path

import pytest

from advisekit.cli import main
from advisekit.datasets import load_cases_csv, load_predictions_csv


def run_cli(*argv):
    """Invoke main() capturing (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


def parse_paths(stdout):
    """The 'name: value' lines every subcommand prints."""
    pairs = {}
    for line in stdout.splitlines():
        if ": " in line:
            key, _, value = line.partition(": ")
            pairs[key] = value
    return pairs


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full chain once; return every artifact path."""
    root = tmp_path_factory.mktemp("pipeline")
    arts = {"root": root}

    code, out, err = run_cli(
        "gen-data", "--n", "60", "--seed", "3", "--predictions-per-case", "2",
        "--out-dir", str(root / "data"))
    assert code == 0, err
    gen = parse_paths(out)
    arts.update(cases=gen["cases"], predictions=gen["predictions"],
                gen_config=gen["gen_config"], gen_manifest=gen["manifest"])

    code, out, err = run_cli(
        "augment", "--cases", arts["cases"], "--predictions",
        arts["predictions"], "--seed", "4", "--out-dir", str(root / "aug"))
    assert code == 0, err
    aug = parse_paths(out)
    arts.update(aug_cases=aug["cases"], aug_predictions=aug["predictions"],
                aug_manifest=aug["manifest"])

    code, out, err = run_cli(
        "train-risk", "--cases", arts["aug_cases"], "--trees", "25",
        "--min-split", "40", "--min-leaf", "20", "--seed", "5",
        "--out-dir", str(root / "models"))
    assert code == 0, err
    risk = parse_paths(out)
    arts.update(risk_model=risk["risk_model"], risk_manifest=risk["manifest"],
                holdout_brier=float(risk["holdout_brier"]))

    code, out, err = run_cli(
        "train-policy", "--cases", arts["aug_cases"], "--predictions",
        arts["aug_predictions"], "--risk", arts["risk_model"],
        "--trees", "30", "--min-split", "40", "--min-leaf", "20",
        "--seed", "6", "--out-dir", str(root / "models"))
    assert code == 0, err
    pol = parse_paths(out)
    arts.update(policy=pol["policy"], policy_manifest=pol["manifest"])

    code, out, err = run_cli(
        "calibrate", "--policy", arts["policy"], "--cases", arts["aug_cases"],
        "--predictions", arts["aug_predictions"], "--risk", arts["risk_model"],
        "--out-dir", str(root / "models"))
    assert code == 0, err
    cal = parse_paths(out)
    arts.update(calibrated=cal["policy"], calibrate_manifest=cal["manifest"])

    code, out, err = run_cli(
        "simulate", "--treatment", "Omniscient", "--cases", arts["cases"],
        "--gen-config", arts["gen_config"], "--risk", arts["risk_model"],
        "--participants", "8", "--series", "6", "--seed", "7",
        "--out-dir", str(root / "sim-omni"))
    assert code == 0, err
    arts["omni_records"] = str(root / "sim-omni" / "omniscient" / "records.jsonl")
    arts["sim_manifest"] = parse_paths(out)["manifest"]

    code, out, err = run_cli(
        "evaluate", arts["omni_records"], "--cases", arts["cases"],
        "--series-length", "6", "--out-dir", str(root / "eval"))
    assert code == 0, err
    arts["evaluation"] = parse_paths(out)["report"]
    return arts


class TestExitCodes:
    def test_help_exits_zero(self):
        code, out, _ = run_cli("--help")
        assert code == 0
        assert "gen-data" in out

    def test_unknown_command_exits_two(self):
        code, _, _ = run_cli("frobnicate")
        assert code == 2

    def test_missing_input_file_exits_two(self, tmp_path):
        code, _, err = run_cli("train-risk", "--cases",
                               str(tmp_path / "nope.csv"))
        assert code == 2
        assert err.startswith("error:")

    def test_bad_value_exits_two(self, tmp_path):
        code, _, err = run_cli("gen-data", "--n", "0",
                               "--out-dir", str(tmp_path))
        assert code == 2
        assert "n_cases" in err

    def test_learned_without_policy_exits_two(self, pipeline, tmp_path):
        code, _, err = run_cli(
            "simulate", "--treatment", "Learned", "--cases",
            pipeline["cases"], "--gen-config", pipeline["gen_config"],
            "--risk", pipeline["risk_model"], "--participants", "2",
            "--series", "3", "--out-dir", str(tmp_path))
        assert code == 2
        assert "--policy" in err


class TestGenData:
    def test_reruns_are_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            code, _, err = run_cli("gen-data", "--n", "40", "--seed", "11",
                                   "--out-dir", str(tmp_path / sub))
            assert code == 0, err
        names_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        names_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert names_a == names_b
        for name in names_a:
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_output(self, tmp_path):
        hashes = []
        for seed in ("1", "2"):
            code, out, _ = run_cli("gen-data", "--n", "40", "--seed", seed,
                                   "--out-dir", str(tmp_path / seed))
            assert code == 0
            hashes.append(sha256_file(parse_paths(out)["cases"]))
        assert hashes[0] != hashes[1]

    def test_out_flags_honored_verbatim(self, tmp_path):
        code, out, _ = run_cli(
            "gen-data", "--n", "30", "--out-dir", str(tmp_path),
            "--out-cases", str(tmp_path / "my-cases.csv"),
            "--out-predictions", str(tmp_path / "my-preds.csv"),
            "--out-config", str(tmp_path / "my-config.json"))
        assert code == 0
        assert (tmp_path / "my-cases.csv").exists()
        assert (tmp_path / "my-preds.csv").exists()
        assert (tmp_path / "my-config.json").exists()

    def test_zero_predictions_per_case_skips_file(self, tmp_path):
        code, out, _ = run_cli("gen-data", "--n", "30",
                               "--predictions-per-case", "0",
                               "--out-dir", str(tmp_path))
        assert code == 0
        assert "predictions" not in parse_paths(out)

    def test_hash_suffix_matches_content(self, pipeline):
        path = Path(pipeline["cases"])
        suffix = path.stem.rsplit("-", 1)[1]
        assert suffix == sha256_file(path)[:8]


class TestManifests:
    def test_format_tag_and_sections(self, pipeline):
        m = load_manifest(pipeline["gen_manifest"])
        assert m["format"] == "advisekit-manifest/1"
        assert m["command"] == "gen-data"
        assert m["arguments"]["n"] == 60
        assert m["arguments"]["seed"] == 3
        assert set(m["outputs"]) == {"cases", "predictions", "gen_config"}

    def test_output_hashes_are_correct(self, pipeline):
        m = load_manifest(pipeline["gen_manifest"])
        out_dir = Path(pipeline["gen_manifest"]).parent
        for entry in m["outputs"].values():
            assert sha256_file(out_dir / entry["path"]) == entry["sha256"]

    def test_input_hashes_are_correct(self, pipeline):
        m = load_manifest(pipeline["calibrate_manifest"])
        assert set(m["inputs"]) == {"policy", "cases", "predictions",
                                    "risk_model"}
        assert m["inputs"]["risk_model"]["sha256"] == \
            sha256_file(pipeline["risk_model"])

    def test_no_timestamps(self, pipeline):
        for key in ("gen_manifest", "risk_manifest", "calibrate_manifest",
                    "sim_manifest"):
            text = Path(pipeline[key]).read_text().lower()
            for word in ("timestamp", '"time"', '"date"', "created_at"):
                assert word not in text


class TestAugment:
    def test_counts_match_written_files(self, pipeline):
        m = load_manifest(pipeline["aug_manifest"])
        cases = load_cases_csv(pipeline["aug_cases"])
        preds = load_predictions_csv(pipeline["aug_predictions"], cases)
        assert m["results"]["cases_after"] == len(cases)
        assert m["results"]["predictions_after"] == len(preds)
        assert m["results"]["cases_after"] > m["results"]["cases_before"]
        assert m["results"]["predictions_after"] > \
            m["results"]["predictions_before"]

    def test_flags_can_disable_each_step(self, pipeline, tmp_path):
        code, out, _ = run_cli(
            "augment", "--cases", pipeline["cases"], "--predictions",
            pipeline["predictions"], "--no-age-variants", "--no-sampled",
            "--out-dir", str(tmp_path))
        assert code == 0
        m = load_manifest(parse_paths(out)["manifest"])
        assert m["results"]["cases_after"] == m["results"]["cases_before"]
        assert m["results"]["predictions_after"] == \
            m["results"]["predictions_before"]


class TestTraining:
    def test_risk_model_reports_holdout_loss(self, pipeline):
        assert 0.0 < pipeline["holdout_brier"] < 1.0
        m = load_manifest(pipeline["risk_manifest"])
        assert m["results"]["holdout_brier"] == pipeline["holdout_brier"]

    def test_policy_manifest_records_base_rate(self, pipeline):
        m = load_manifest(pipeline["policy_manifest"])
        assert 0.0 < m["results"]["base_rate"] < 1.0
        assert m["arguments"]["threshold"] == 0.42

    def test_calibrate_updates_threshold(self, pipeline):
        m = load_manifest(pipeline["calibrate_manifest"])
        r = m["results"]
        assert r["threshold_before"] == 0.42
        assert 0.0 <= r["threshold_after"] <= 1.0
        assert abs(r["advise_frequency"] - r["base_rate"]) <= 0.05

    def test_calibrated_policy_loads(self, pipeline):
        from advisekit.core import TreatmentKind
        from advisekit.policy import load_policy
        spec = load_policy(pipeline["calibrated"])
        assert spec.kind is TreatmentKind.LEARNED
        m = load_manifest(pipeline["calibrate_manifest"])
        assert spec.threshold == m["results"]["threshold_after"]


class TestSimulateEvaluate:
    def test_omniscient_evaluates_to_perfect_policy_accuracy(self, pipeline):
        report = load_manifest(pipeline["evaluation"])
        assert report["policy_accuracy"] == 1.0

    def test_evaluation_has_full_report_set(self, pipeline):
        report = load_manifest(pipeline["evaluation"])
        assert set(report) == {"n_records", "scores", "responsiveness",
                               "fairness", "learning", "policy_accuracy"}
        assert report["n_records"] == 8 * 6
        assert report["scores"]["quadratic"]["participant_mean"] > 0.5

    def test_suite_writes_all_five_arms(self, pipeline, tmp_path):
        code, out, err = run_cli(
            "simulate", "--treatment", "all", "--cases", pipeline["cases"],
            "--gen-config", pipeline["gen_config"], "--risk",
            pipeline["risk_model"], "--policy", pipeline["calibrated"],
            "--participants", "6", "--series", "5", "--seed", "9",
            "--out-dir", str(tmp_path))
        assert code == 0, err
        for sub in ("learned", "random", "omniscient", "noadvice", "update"):
            assert (tmp_path / sub / "records.jsonl").exists()
            assert (tmp_path / sub / "report.json").exists()
        suite = load_manifest(tmp_path / "suite.json")
        assert len(suite["ordering_by_mean_quadratic"]) == 5
        m = load_manifest(parse_paths(out)["manifest"])
        assert set(m["results"]["ordering_by_mean_quadratic"]) == \
            {"Learned", "Random", "Omniscient", "NoAdvice", "Update"}

    def test_evaluate_accepts_series_length_inference(self, pipeline,
                                                      tmp_path):
        code, out, _ = run_cli("evaluate", pipeline["omni_records"],
                               "--cases", pipeline["cases"],
                               "--out-dir", str(tmp_path))
        assert code == 0
        report = load_manifest(parse_paths(out)["report"])
        assert report["policy_accuracy"] == 1.0


class TestServe:
    @pytest.fixture()
    def config_path(self, pipeline, tmp_path):
        cfg = {
            "case_pool": pipeline["cases"],
            "risk_model": pipeline["risk_model"],
            "learned_policy": pipeline["calibrated"],
            "data_dir": str(tmp_path / "svc"),
            "master_seed": 13,
            "series_length": 5,
        }
        path = tmp_path / "service.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_dry_run_prints_status(self, config_path):
        code, out, err = run_cli("serve", "--config", config_path,
                                 "--dry-run")
        assert code == 0, err
        status = json.loads(out)
        assert status["cases"] == 60
        assert status["series_length"] == 5
        assert status["sessions"] == 0
        assert status["port"] == 8000

    def test_flag_overrides_beat_env(self, config_path, monkeypatch):
        monkeypatch.setenv("ADVISEKIT_PORT", "7777")
        code, out, _ = run_cli("serve", "--config", config_path, "--dry-run")
        assert json.loads(out)["port"] == 7777
        code, out, _ = run_cli("serve", "--config", config_path, "--dry-run",
                               "--port", "8888")
        assert json.loads(out)["port"] == 8888

    def test_data_dir_override(self, config_path, tmp_path, monkeypatch):
        alt = tmp_path / "alt-data"
        code, out, _ = run_cli("serve", "--config", config_path, "--dry-run",
                               "--data-dir", str(alt))
        assert code == 0
        assert json.loads(out)["data_dir"] == str(alt)
        assert alt.exists()

    def test_missing_config_exits_two(self, tmp_path):
        code, _, err = run_cli("serve", "--config",
                               str(tmp_path / "none.json"), "--dry-run")
        assert code == 2
