"""Operator command line tying the pipeline together.

Subcommands cover the whole workflow with no manual steps in between:

    gen-data      synthesize a case pool, unassisted predictions, and the
                  generator config that pins the ground-truth risk function
    augment       expand a dataset (age variants, sampled predictions)
    train-risk    fit the risk forest on a case pool
    train-policy  fit the advising forest on (case, prediction) pairs
    calibrate     re-fit the advising threshold to the training base rate
    simulate      run one treatment arm or the full five-arm suite
    evaluate      score a records file with the full report set
    serve         start the HTTP session server

Conventions: every flag has a default; ``--seed`` appears wherever
randomness exists; artifacts written without an explicit ``--out`` get a
content-hash suffix so stale files are never silently confused; every
invocation that writes artifacts also writes a manifest with the sha256 of
each input and output. Exit code is 0 on success and 2 on any validation
error (bad flag values, missing or malformed files).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .core import TreatmentKind, derive_seed, round_to_grid
from .datasets import (
    GeneratorConfig,
    HumanPrediction,
    PredictionDataset,
    augment_age_variants,
    augment_sampled_predictions,
    generate_synthetic,
    load_cases_csv,
    load_predictions_csv,
    load_records_jsonl,
    save_cases_csv,
    save_predictions_csv,
)
from .forest import ForestConfig
from .metrics import (
    fairness_report,
    learning_report,
    policy_accuracy,
    responsiveness_report,
    score_report,
)
from .policy import (
    AdvisingPolicySpec,
    build_policy_training_set,
    calibrate_threshold,
    load_policy,
    save_policy,
    train_learned_policy,
)
from .risk import RiskModelConfig, load_risk_model, save_risk_model, train_risk_model
from .simulation import (
    ExperimentPlan,
    HumanModel,
    run_suite,
    run_treatment,
    write_suite_artifacts,
    write_treatment_artifacts,
)

_HUMAN_DEFAULTS = HumanModel()
_FOREST_DEFAULTS = ForestConfig()


# --- artifact plumbing --------------------------------------------------------

def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_artifact(write_fn, out_dir: Path, stem: str, suffix: str,
                    explicit=None) -> Path:
    """Write via ``write_fn(path)``; hash-suffix the name unless --out given."""
    if explicit is not None:
        path = Path(explicit)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_fn(path)
        return path
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / f".tmp-{stem}{suffix}"
    write_fn(tmp)
    final = out_dir / f"{stem}-{_sha256_file(tmp)[:8]}{suffix}"
    tmp.replace(final)
    return final


def _write_json(payload) -> callable:
    def write(path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return write


def _file_entry(path) -> dict:
    return {"path": Path(path).name, "sha256": _sha256_file(path)}


def _emit_manifest(command: str, arguments: dict, inputs: dict, outputs: dict,
                   out_dir: Path, results=None) -> Path:
    manifest = {
        "format": "advisekit-manifest/1",
        "command": command,
        "arguments": {k: v for k, v in sorted(arguments.items())},
        "inputs": {name: _file_entry(p) for name, p in sorted(inputs.items())},
        "outputs": {name: _file_entry(p) for name, p in sorted(outputs.items())},
    }
    if results is not None:
        manifest["results"] = results
    return _write_artifact(_write_json(manifest), out_dir,
                           f"{command}-manifest", ".json")


def _flag_dict(args, names) -> dict:
    return {name: getattr(args, name.replace("-", "_")) for name in names}


# --- gen-data -------------------------------------------------------------------

def _synthesize_unassisted(ds: PredictionDataset, config: GeneratorConfig,
                           per_case: int, sigma: float, seed: int) -> tuple:
    """Noisy one-shot predictions around the generator's own risk function."""
    rng = np.random.default_rng(derive_seed(seed, "unassisted"))
    predictions = []
    for case in ds.cases:
        latent = config.latent_risk(case)
        noisy = np.clip(latent + rng.normal(0.0, sigma, size=per_case), 0.0, 1.0)
        for j, p in enumerate(noisy):
            predictions.append(HumanPrediction(
                case_id=case.id, participant_id=f"h:{j:03d}",
                value=round_to_grid(float(p))))
    return tuple(predictions)


def cmd_gen_data(args) -> int:
    config = GeneratorConfig(n_cases=args.n, base_violation_rate=args.base_rate,
                             seed=args.seed)
    ds = generate_synthetic(config)
    predictions = _synthesize_unassisted(ds, config, args.predictions_per_case,
                                         args.sigma, args.seed)
    out_dir = Path(args.out_dir)
    cases_path = _write_artifact(lambda p: save_cases_csv(ds.cases, p),
                                 out_dir, "cases", ".csv", args.out_cases)
    config_path = _write_artifact(
        _write_json(config.to_json_dict()),
        Path(cases_path).parent, "gen-config", ".json", args.out_config)
    outputs = {"cases": cases_path, "gen_config": config_path}
    if predictions:
        outputs["predictions"] = _write_artifact(
            lambda p: save_predictions_csv(predictions, p),
            out_dir, "predictions", ".csv", args.out_predictions)
    manifest = _emit_manifest(
        "gen-data",
        _flag_dict(args, ["n", "seed", "base-rate", "predictions-per-case",
                          "sigma"]),
        inputs={}, outputs=outputs, out_dir=out_dir,
        results={"n_cases": len(ds.cases), "n_predictions": len(predictions)})
    for name, path in {**outputs, "manifest": manifest}.items():
        print(f"{name}: {path}")
    return 0


# --- augment ---------------------------------------------------------------------

def cmd_augment(args) -> int:
    cases = load_cases_csv(args.cases)
    predictions = load_predictions_csv(args.predictions, cases)
    ds = PredictionDataset(cases=cases, predictions=predictions)
    before = (len(ds.cases), len(ds.predictions))
    if args.age_variants:
        ds = augment_age_variants(ds)
    if args.sampled:
        ds = augment_sampled_predictions(ds, smoothing=args.alpha,
                                         seed=args.seed)
    out_dir = Path(args.out_dir)
    cases_path = _write_artifact(lambda p: save_cases_csv(ds.cases, p),
                                 out_dir, "cases-augmented", ".csv",
                                 args.out_cases)
    preds_path = _write_artifact(
        lambda p: save_predictions_csv(ds.predictions, p),
        out_dir, "predictions-augmented", ".csv", args.out_predictions)
    manifest = _emit_manifest(
        "augment",
        _flag_dict(args, ["age-variants", "sampled", "alpha", "seed"]),
        inputs={"cases": args.cases, "predictions": args.predictions},
        outputs={"cases": cases_path, "predictions": preds_path},
        out_dir=out_dir,
        results={"cases_before": before[0], "cases_after": len(ds.cases),
                 "predictions_before": before[1],
                 "predictions_after": len(ds.predictions)})
    print(f"cases: {cases_path}")
    print(f"predictions: {preds_path}")
    print(f"manifest: {manifest}")
    return 0


# --- training --------------------------------------------------------------------

def _forest_config(args) -> ForestConfig:
    return ForestConfig(
        n_estimators=args.trees,
        min_samples_split=args.min_split,
        min_samples_leaf=args.min_leaf,
        max_features=args.max_features,
        max_depth=args.max_depth,
    )


def cmd_train_risk(args) -> int:
    cases = load_cases_csv(args.cases)
    config = RiskModelConfig(forest=_forest_config(args),
                             holdout_fraction=args.holdout)
    model = train_risk_model(cases, config, seed=args.seed)
    out_dir = Path(args.out_dir)
    path = _write_artifact(lambda p: save_risk_model(model, p),
                           out_dir, "risk-model", ".json", args.out)
    manifest = _emit_manifest(
        "train-risk",
        _flag_dict(args, ["trees", "min-split", "min-leaf", "max-features",
                          "max-depth", "holdout", "seed"]),
        inputs={"cases": args.cases}, outputs={"risk_model": path},
        out_dir=out_dir,
        results={"holdout_brier": model.holdout_brier, "n_cases": len(cases)})
    print(f"risk_model: {path}")
    print(f"holdout_brier: {model.holdout_brier}")
    print(f"manifest: {manifest}")
    return 0


def _load_training_set(args, risk):
    cases = load_cases_csv(args.cases)
    predictions = load_predictions_csv(args.predictions, cases)
    ds = PredictionDataset(cases=cases, predictions=predictions)
    return build_policy_training_set(ds, risk,
                                     label_on_rounded=args.label_on_rounded)


def cmd_train_policy(args) -> int:
    risk = load_risk_model(args.risk)
    ts = _load_training_set(args, risk)
    forest_config = dataclasses.replace(_forest_config(args), seed=args.seed)
    model = train_learned_policy(ts, forest_config)
    spec = AdvisingPolicySpec(kind=TreatmentKind.LEARNED, model=model,
                              threshold=args.threshold, seed=args.seed,
                              feature_config=ts.feature_config)
    out_dir = Path(args.out_dir)
    path = _write_artifact(lambda p: save_policy(spec, p), out_dir,
                           "policy", ".json", args.out)
    manifest = _emit_manifest(
        "train-policy",
        _flag_dict(args, ["trees", "min-split", "min-leaf", "max-features",
                          "max-depth", "seed", "threshold", "label-on-rounded"]),
        inputs={"cases": args.cases, "predictions": args.predictions,
                "risk_model": args.risk},
        outputs={"policy": path}, out_dir=out_dir,
        results={"n_rows": len(ts.labels), "base_rate": ts.base_rate})
    print(f"policy: {path}")
    print(f"base_rate: {ts.base_rate}")
    print(f"manifest: {manifest}")
    return 0


def cmd_calibrate(args) -> int:
    spec = load_policy(args.policy)
    if spec.model is None:
        raise ValueError("calibrate needs a policy file with a trained model")
    risk = load_risk_model(args.risk)
    ts = _load_training_set(args, risk)
    threshold = calibrate_threshold(spec.model, ts)
    from .forest import predict_proba
    achieved = float(np.mean(predict_proba(spec.model, ts.X) >= threshold))
    updated = dataclasses.replace(spec, threshold=threshold)
    out_dir = Path(args.out_dir)
    path = _write_artifact(lambda p: save_policy(updated, p), out_dir,
                           "policy-calibrated", ".json", args.out)
    manifest = _emit_manifest(
        "calibrate", _flag_dict(args, ["label-on-rounded"]),
        inputs={"policy": args.policy, "cases": args.cases,
                "predictions": args.predictions, "risk_model": args.risk},
        outputs={"policy": path}, out_dir=out_dir,
        results={"threshold_before": spec.threshold,
                 "threshold_after": threshold,
                 "base_rate": ts.base_rate,
                 "advise_frequency": achieved})
    print(f"policy: {path}")
    print(f"threshold: {threshold}")
    print(f"advise_frequency: {achieved} (base rate {ts.base_rate})")
    print(f"manifest: {manifest}")
    return 0


# --- simulate ---------------------------------------------------------------------

def _human_model(args) -> HumanModel:
    return HumanModel(
        sigma=args.sigma,
        zero_anchor=args.zero_anchor,
        influence_base=args.influence_base,
        scarcity_slope=args.scarcity_slope,
        acceptance_sharpness=args.acceptance_sharpness,
        learning_rate=args.learning_rate,
        sigma_floor=args.sigma_floor,
    )


def _policy_for(kind: TreatmentKind, args) -> AdvisingPolicySpec:
    if kind is TreatmentKind.LEARNED:
        if args.policy is None:
            raise ValueError("the Learned treatment needs --policy")
        spec = load_policy(args.policy)
        if spec.kind is not TreatmentKind.LEARNED:
            raise ValueError(f"--policy file holds a {spec.kind.value} policy")
        return spec
    if kind is TreatmentKind.RANDOM:
        return AdvisingPolicySpec(kind=kind, advise_prob=args.advise_prob,
                                  seed=derive_seed(args.seed, "policy", "Random"))
    return AdvisingPolicySpec(kind=kind)


def cmd_simulate(args) -> int:
    cases = load_cases_csv(args.cases)
    with open(args.gen_config, encoding="utf-8") as fh:
        gen_config = GeneratorConfig.from_json_dict(json.load(fh))
    risk = load_risk_model(args.risk)
    human = _human_model(args)
    if args.treatment == "all":
        kinds = list(TreatmentKind)
    else:
        kinds = [TreatmentKind.parse(args.treatment)]
    plans = [ExperimentPlan(
        treatment=kind,
        policy=_policy_for(kind, args),
        risk=risk,
        human=human,
        gen_config=gen_config,
        case_pool=cases,
        n_participants=args.participants,
        series_length=args.series,
        master_seed=args.seed,
    ) for kind in kinds]

    out_dir = Path(args.out_dir)
    inputs = {"cases": args.cases, "gen_config": args.gen_config,
              "risk_model": args.risk}
    if args.policy is not None:
        inputs["policy"] = args.policy
    outputs = {}
    results = {}
    if len(plans) == 1:
        run = run_treatment(plans[0], ci_method=args.ci)
        paths = write_treatment_artifacts(run, out_dir / plans[0].treatment.value.lower())
        outputs.update({f"{plans[0].treatment.value}/{k}": v
                        for k, v in paths.items()})
        reports = {plans[0].treatment: run.report}
    else:
        result = run_suite(plans, ci_method=args.ci)
        paths = write_suite_artifacts(result, out_dir)
        for name, sub in paths.items():
            if isinstance(sub, dict):
                outputs.update({f"{name}/{k}": v for k, v in sub.items()})
            else:
                outputs[name] = sub
        reports = {kind: result.runs[kind].report for kind in result.runs}
        results["ordering_by_mean_quadratic"] = [k.value for k in result.ordering]
    for kind, report in reports.items():
        results[kind.value] = {
            "mean_quadratic": report.scores.quadratic.mean,
            "advice_frequency": report.responsiveness.advice_frequency,
            "policy_accuracy": report.policy_accuracy,
        }
        print(f"{kind.value}: mean quadratic "
              f"{report.scores.quadratic.mean:.4f}, advice frequency "
              f"{report.responsiveness.advice_frequency:.3f}, policy accuracy "
              f"{report.policy_accuracy:.3f}")
    manifest = _emit_manifest(
        "simulate",
        _flag_dict(args, ["treatment", "participants", "series", "seed",
                          "advise-prob", "ci", "sigma", "zero-anchor",
                          "influence-base", "scarcity-slope",
                          "acceptance-sharpness", "learning-rate",
                          "sigma-floor"]),
        inputs=inputs, outputs=outputs, out_dir=out_dir, results=results)
    print(f"manifest: {manifest}")
    return 0


# --- evaluate ---------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    records = load_records_jsonl(args.records)
    cases = {c.id: c for c in load_cases_csv(args.cases)}
    report = {
        "n_records": len(records),
        "scores": score_report(records, args.ci, args.seed).to_dict(),
        "responsiveness": responsiveness_report(records, args.ci,
                                                args.seed).to_dict(),
        "fairness": fairness_report(records, cases).to_dict(),
        "learning": learning_report(records, args.series_length).to_dict(),
        "policy_accuracy": policy_accuracy(records),
    }
    out_dir = Path(args.out_dir)
    path = _write_artifact(_write_json(report), out_dir, "evaluation", ".json",
                           args.out)
    manifest = _emit_manifest(
        "evaluate", _flag_dict(args, ["ci", "seed"]),
        inputs={"records": args.records, "cases": args.cases},
        outputs={"report": path}, out_dir=out_dir,
        results={"n_records": len(records),
                 "policy_accuracy": report["policy_accuracy"]})
    print(f"report: {path}")
    print(f"mean_quadratic: {report['scores']['quadratic']['participant_mean']}")
    print(f"policy_accuracy: {report['policy_accuracy']}")
    print(f"manifest: {manifest}")
    return 0


# --- serve -----------------------------------------------------------------------

def cmd_serve(args) -> int:
    from .service import create_app, load_service_config, store_from_config
    cfg = load_service_config(args.config)
    if args.port is not None:
        cfg = dataclasses.replace(cfg, port=args.port)
    if args.data_dir is not None:
        cfg = dataclasses.replace(cfg, data_dir=args.data_dir)
    store = store_from_config(cfg)
    app = create_app(store)
    status = {"sessions": store.n_sessions, "cases": len(store.pool),
              "series_length": store.series_length,
              "data_dir": store.data_dir, "port": cfg.port}
    if args.dry_run:
        print(json.dumps(status, sort_keys=True))
        return 0
    import uvicorn
    print(json.dumps(status, sort_keys=True))
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advisekit",
        description="Risk-prediction advising pipeline: data, models, "
                    "policies, simulation, serving.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_out(p, multi=False):
        p.add_argument("--out-dir", default=".",
                       help="directory for artifacts (default: current)")

    gen = sub.add_parser("gen-data", help="synthesize a case pool and "
                                          "unassisted predictions")
    gen.add_argument("--n", type=int, default=1000,
                     help="number of cases (default 1000)")
    gen.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    gen.add_argument("--base-rate", type=float, default=0.298,
                     help="population violation rate (default 0.298)")
    gen.add_argument("--predictions-per-case", type=int, default=5,
                     help="unassisted predictions per case (default 5; 0 skips)")
    gen.add_argument("--sigma", type=float, default=0.25,
                     help="perception noise of the synthetic predictors "
                          "(default 0.25)")
    add_out(gen)
    gen.add_argument("--out-cases", default=None,
                     help="cases CSV path (default: hash-named in --out-dir)")
    gen.add_argument("--out-predictions", default=None,
                     help="predictions CSV path (default: hash-named)")
    gen.add_argument("--out-config", default=None,
                     help="generator config JSON path (default: hash-named "
                          "next to the cases file)")
    gen.set_defaults(func=cmd_gen_data)

    aug = sub.add_parser("augment", help="expand a dataset with age variants "
                                         "and sampled predictions")
    aug.add_argument("--cases", required=True, help="cases CSV")
    aug.add_argument("--predictions", required=True, help="predictions CSV")
    aug.add_argument("--age-variants", action=argparse.BooleanOptionalAction,
                     default=True, help="add +/-1,2,3-year adult age variants "
                                        "(default on)")
    aug.add_argument("--sampled", action=argparse.BooleanOptionalAction,
                     default=True,
                     help="double predictions by sampling each case's "
                          "smoothed histogram (default on)")
    aug.add_argument("--alpha", type=float, default=0.5,
                     help="additive smoothing for sampling (default 0.5)")
    aug.add_argument("--seed", type=int, default=0, help="sampling seed "
                                                         "(default 0)")
    add_out(aug)
    aug.add_argument("--out-cases", default=None)
    aug.add_argument("--out-predictions", default=None)
    aug.set_defaults(func=cmd_augment)

    def add_forest_flags(p):
        p.add_argument("--trees", type=int, default=_FOREST_DEFAULTS.n_estimators,
                       help=f"forest size (default {_FOREST_DEFAULTS.n_estimators})")
        p.add_argument("--min-split", type=int,
                       default=_FOREST_DEFAULTS.min_samples_split,
                       help="smallest node eligible for splitting "
                            f"(default {_FOREST_DEFAULTS.min_samples_split})")
        p.add_argument("--min-leaf", type=int,
                       default=_FOREST_DEFAULTS.min_samples_leaf,
                       help="smallest allowed leaf "
                            f"(default {_FOREST_DEFAULTS.min_samples_leaf})")
        p.add_argument("--max-features", type=int,
                       default=_FOREST_DEFAULTS.max_features,
                       help="features tried per split "
                            f"(default {_FOREST_DEFAULTS.max_features})")
        p.add_argument("--max-depth", type=int, default=None,
                       help="depth cap (default: unbounded)")
        p.add_argument("--seed", type=int, default=0, help="training seed "
                                                           "(default 0)")

    risk = sub.add_parser("train-risk", help="fit the risk forest")
    risk.add_argument("--cases", required=True, help="cases CSV")
    add_forest_flags(risk)
    risk.add_argument("--holdout", type=float, default=0.2,
                      help="holdout fraction for the accuracy estimate "
                           "(default 0.2)")
    add_out(risk)
    risk.add_argument("--out", default=None, help="model path (default: "
                                                  "hash-named)")
    risk.set_defaults(func=cmd_train_risk)

    pol = sub.add_parser("train-policy", help="fit the advising forest")
    pol.add_argument("--cases", required=True)
    pol.add_argument("--predictions", required=True)
    pol.add_argument("--risk", required=True, help="risk model JSON")
    add_forest_flags(pol)
    pol.add_argument("--threshold", type=float, default=0.42,
                     help="initial advising threshold (default 0.42; "
                          "run calibrate to fit it)")
    pol.add_argument("--label-on-rounded", action="store_true",
                     help="compare errors on grid-rounded estimates when "
                          "labeling (default: raw estimates)")
    add_out(pol)
    pol.add_argument("--out", default=None)
    pol.set_defaults(func=cmd_train_policy)

    cal = sub.add_parser("calibrate", help="match the advising frequency to "
                                           "the training base rate")
    cal.add_argument("--policy", required=True)
    cal.add_argument("--cases", required=True)
    cal.add_argument("--predictions", required=True)
    cal.add_argument("--risk", required=True)
    cal.add_argument("--label-on-rounded", action="store_true")
    add_out(cal)
    cal.add_argument("--out", default=None)
    cal.set_defaults(func=cmd_calibrate)

    sim = sub.add_parser("simulate", help="run treatment arms with simulated "
                                          "participants")
    sim.add_argument("--treatment", default="all",
                     help="Learned, Random, Omniscient, NoAdvice, Update, "
                          "or all (default all)")
    sim.add_argument("--cases", required=True)
    sim.add_argument("--gen-config", required=True,
                     help="generator config JSON from gen-data (ground-truth "
                          "risk for perception)")
    sim.add_argument("--risk", required=True)
    sim.add_argument("--policy", default=None,
                     help="learned policy JSON (required for Learned/all)")
    sim.add_argument("--participants", type=int, default=200,
                     help="participants per arm (default 200)")
    sim.add_argument("--series", type=int, default=50,
                     help="cases per participant (default 50)")
    sim.add_argument("--seed", type=int, default=0, help="master seed "
                                                         "(default 0)")
    sim.add_argument("--advise-prob", type=float, default=0.30,
                     help="coin weight of the Random policy (default 0.30)")
    sim.add_argument("--ci", choices=("normal", "bootstrap"), default="normal",
                     help="confidence-interval method (default normal)")
    sim.add_argument("--sigma", type=float, default=_HUMAN_DEFAULTS.sigma,
                     help=f"perception noise (default {_HUMAN_DEFAULTS.sigma})")
    sim.add_argument("--zero-anchor", type=float,
                     default=_HUMAN_DEFAULTS.zero_anchor,
                     help="probability of answering 0 on low perceived risk "
                          f"(default {_HUMAN_DEFAULTS.zero_anchor})")
    sim.add_argument("--influence-base", type=float,
                     default=_HUMAN_DEFAULTS.influence_base,
                     help="advice influence at zero advice frequency "
                          f"(default {_HUMAN_DEFAULTS.influence_base})")
    sim.add_argument("--scarcity-slope", type=float,
                     default=_HUMAN_DEFAULTS.scarcity_slope,
                     help="influence lost per unit advice frequency "
                          f"(default {_HUMAN_DEFAULTS.scarcity_slope})")
    sim.add_argument("--acceptance-sharpness", type=float,
                     default=_HUMAN_DEFAULTS.acceptance_sharpness,
                     help="exact-adoption probability per unit influence "
                          f"(default {_HUMAN_DEFAULTS.acceptance_sharpness})")
    sim.add_argument("--learning-rate", type=float,
                     default=_HUMAN_DEFAULTS.learning_rate,
                     help="per-period noise shrinkage after advice "
                          f"(default {_HUMAN_DEFAULTS.learning_rate})")
    sim.add_argument("--sigma-floor", type=float,
                     default=_HUMAN_DEFAULTS.sigma_floor,
                     help="noise level perception converges toward "
                          f"(default {_HUMAN_DEFAULTS.sigma_floor})")
    sim.add_argument("--out-dir", default="./sim-out",
                     help="artifact directory (default ./sim-out)")
    sim.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("evaluate", help="score a records file")
    ev.add_argument("records", help="records JSONL (simulation or service "
                                    "export)")
    ev.add_argument("--cases", required=True, help="cases CSV the records "
                                                   "reference")
    ev.add_argument("--series-length", type=int, default=None,
                    help="series length for the learning report halves "
                         "(default: inferred)")
    ev.add_argument("--ci", choices=("normal", "bootstrap"), default="normal",
                    help="confidence-interval method (default normal)")
    ev.add_argument("--seed", type=int, default=0,
                    help="bootstrap resampling seed (default 0)")
    add_out(ev)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_evaluate)

    srv = sub.add_parser("serve", help="start the HTTP session server")
    srv.add_argument("--config", required=True, help="service config JSON")
    srv.add_argument("--port", type=int, default=None,
                     help="override the configured port")
    srv.add_argument("--data-dir", default=None,
                     help="override the configured data directory")
    srv.add_argument("--dry-run", action="store_true",
                     help="load everything, print status, and exit without "
                          "binding a port")
    srv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
