"""Dataset ingestion, synthesis, and training-set augmentation.

Three tabular surfaces, all plain text:

* ``cases.csv`` — one defendant per row (columns: id, age, gender, race,
  offense_type, prior_arrests, prior_convictions, prior_fta, outcome);
* ``predictions.csv`` — one human prediction per row (case_id,
  participant_id, prediction_tenths in 0..10);
* ``records.jsonl`` — one completed interaction record per line.

Loaders validate eagerly and report the offending file line. The synthetic
generator draws feature marginals and a latent risk that is monotone in
prior arrests and prior FTA, with its intercept calibrated so the expected
violation rate matches the configured base rate.
"""

from __future__ import annotations

import csv
import functools
import json
import math
import re
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .core import (
    ADULT_AGE,
    DEFAULT_OFFENSE_TYPES,
    GENDERS,
    RACES,
    DefendantCase,
    DomainError,
    GridPrediction,
    PredictionRecord,
    derive_seed,
)

__all__ = [
    "DatasetError",
    "HumanPrediction",
    "PredictionDataset",
    "GeneratorConfig",
    "generate_synthetic",
    "augment_age_variants",
    "augment_sampled_predictions",
    "parent_case_id",
    "load_dataset",
    "load_cases_csv",
    "load_predictions_csv",
    "load_records_jsonl",
    "save_cases_csv",
    "save_predictions_csv",
    "save_records_jsonl",
]


class DatasetError(ValueError):
    """Schema or referential-integrity failure, with the file line when known."""


@dataclass(frozen=True)
class HumanPrediction:
    """One unassisted human prediction for one case."""

    case_id: str
    participant_id: str
    value: GridPrediction

    def __post_init__(self) -> None:
        if not self.case_id or not self.participant_id:
            raise DomainError("prediction needs non-empty case_id and participant_id")
        if not isinstance(self.value, GridPrediction):
            raise DomainError("prediction value must be a GridPrediction")


@dataclass(frozen=True)
class PredictionDataset:
    """An immutable bundle of cases plus the human predictions made on them."""

    cases: tuple
    predictions: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "cases", tuple(self.cases))
        object.__setattr__(self, "predictions", tuple(self.predictions))
        ids = set()
        for case in self.cases:
            if not isinstance(case, DefendantCase):
                raise DatasetError(f"not a case: {case!r}")
            if case.id in ids:
                raise DatasetError(f"duplicate case id {case.id!r}")
            ids.add(case.id)
        for pred in self.predictions:
            if not isinstance(pred, HumanPrediction):
                raise DatasetError(f"not a prediction: {pred!r}")
            if pred.case_id not in ids:
                raise DatasetError(
                    f"prediction by {pred.participant_id!r} references unknown case "
                    f"{pred.case_id!r}"
                )

    def case_index(self) -> dict:
        return {case.id: case for case in self.cases}

    def predictions_by_case(self) -> dict:
        grouped: dict = {case.id: [] for case in self.cases}
        for pred in self.predictions:
            grouped[pred.case_id].append(pred)
        return grouped


# --- CSV / JSONL ingestion ----------------------------------------------

_CASE_COLUMNS = ("id", "age", "gender", "race", "offense_type",
                 "prior_arrests", "prior_convictions", "prior_fta", "outcome")
_PREDICTION_COLUMNS = ("case_id", "participant_id", "prediction_tenths")

_BOOL_TEXT = {"0": False, "1": True, "false": False, "true": True}


def _check_header(header, expected, path) -> None:
    if header is None:
        raise DatasetError(f"{path}: file is empty, expected header {','.join(expected)}")
    if tuple(header) != tuple(expected):
        missing = set(expected) - set(header)
        if missing:
            raise DatasetError(f"{path}: missing column(s) {sorted(missing)} in header")
        raise DatasetError(
            f"{path}: header {header!r} does not match expected columns {list(expected)}"
        )


def _parse_int(text: str, what: str, line: int):
    try:
        return int(text)
    except ValueError:
        raise DatasetError(f"line {line}: {what} must be an integer, got {text!r}") from None


def load_cases_csv(path) -> tuple:
    """Parse and validate a cases CSV; returns a tuple of DefendantCase."""
    cases = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, _CASE_COLUMNS, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_CASE_COLUMNS):
                raise DatasetError(
                    f"line {line}: expected {len(_CASE_COLUMNS)} fields, got {len(row)}"
                )
            rec = dict(zip(_CASE_COLUMNS, row))
            fta_text = rec["prior_fta"].strip().lower()
            if fta_text not in _BOOL_TEXT:
                raise DatasetError(f"line {line}: prior_fta must be 0/1/true/false, "
                                   f"got {rec['prior_fta']!r}")
            try:
                cases.append(DefendantCase(
                    id=rec["id"],
                    age=_parse_int(rec["age"], "age", line),
                    gender=rec["gender"],
                    race=rec["race"],
                    offense_type=rec["offense_type"],
                    prior_arrests=_parse_int(rec["prior_arrests"], "prior_arrests", line),
                    prior_convictions=_parse_int(rec["prior_convictions"],
                                                 "prior_convictions", line),
                    prior_fta=_BOOL_TEXT[fta_text],
                    outcome=_parse_int(rec["outcome"], "outcome", line),
                ))
            except DomainError as exc:
                raise DatasetError(f"line {line}: {exc}") from exc
    return tuple(cases)


def load_predictions_csv(path, cases: Iterable[DefendantCase]) -> tuple:
    """Parse a predictions CSV, checking every row against the known cases."""
    known = {case.id for case in cases}
    predictions = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, _PREDICTION_COLUMNS, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_PREDICTION_COLUMNS):
                raise DatasetError(
                    f"line {line}: expected {len(_PREDICTION_COLUMNS)} fields, got {len(row)}"
                )
            case_id, participant_id, tenths_text = row
            if case_id not in known:
                raise DatasetError(f"line {line}: unknown case_id {case_id!r}")
            try:
                tenths = int(tenths_text)
                value = GridPrediction(tenths)
            except (ValueError, DomainError):
                raise DatasetError(
                    f"line {line}: off-grid prediction {tenths_text!r} "
                    f"(prediction_tenths must be an integer in 0..10)"
                ) from None
            try:
                predictions.append(HumanPrediction(case_id, participant_id, value))
            except DomainError as exc:
                raise DatasetError(f"line {line}: {exc}") from exc
    return tuple(predictions)


def load_records_jsonl(path) -> list:
    """Parse a records JSONL file into PredictionRecord objects."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                payload = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line}: invalid JSON: {exc}") from exc
            try:
                records.append(PredictionRecord.from_json_dict(payload))
            except DomainError as exc:
                raise DatasetError(f"line {line}: {exc}") from exc
    return records


def load_dataset(path, format: str, base: Optional[PredictionDataset] = None) -> PredictionDataset:
    """Load one of the three dataset surfaces into a PredictionDataset.

    ``predictions-csv`` and ``records-jsonl`` need ``base`` to supply the
    cases their rows must reference. Records contribute their unassisted
    predictions; the full records are available via :func:`load_records_jsonl`.
    """
    if format == "cases-csv":
        return PredictionDataset(cases=load_cases_csv(path), predictions=())
    if format == "predictions-csv":
        if base is None:
            raise DatasetError("predictions-csv needs a base dataset providing the cases")
        return PredictionDataset(
            cases=base.cases,
            predictions=base.predictions + load_predictions_csv(path, base.cases),
        )
    if format == "records-jsonl":
        if base is None:
            raise DatasetError("records-jsonl needs a base dataset providing the cases")
        known = {case.id for case in base.cases}
        preds = []
        for i, rec in enumerate(load_records_jsonl(path), start=1):
            if rec.case_id not in known:
                raise DatasetError(f"line {i}: record references unknown case {rec.case_id!r}")
            preds.append(HumanPrediction(rec.case_id, rec.participant_id,
                                         rec.y_hat_unassisted))
        return PredictionDataset(cases=base.cases, predictions=base.predictions + tuple(preds))
    raise DatasetError(f"unknown dataset format {format!r}")


def save_cases_csv(cases: Iterable[DefendantCase], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CASE_COLUMNS)
        for case in cases:
            writer.writerow([
                case.id, case.age, case.gender, case.race, case.offense_type,
                case.prior_arrests, case.prior_convictions,
                int(case.prior_fta), case.outcome,
            ])


def save_predictions_csv(predictions: Iterable[HumanPrediction], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PREDICTION_COLUMNS)
        for pred in predictions:
            writer.writerow([pred.case_id, pred.participant_id, pred.value.tenths])


def save_records_jsonl(records: Iterable[PredictionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), separators=(",", ":")) + "\n")


# --- synthetic generation -----------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class GeneratorConfig:
    """Marginals and latent-risk parameters for the synthetic case generator.

    The latent risk is a logistic score over the non-protected features,
    increasing in prior arrests and prior FTA. Its intercept is solved
    internally so the population violation rate equals
    ``base_violation_rate`` — independent of ``seed`` and ``n_cases``, so
    every dataset drawn from the same parameter set shares one ground-truth
    risk function.
    """

    n_cases: int
    base_violation_rate: float = 0.298
    seed: int = 0
    age_max: int = 70
    age_decay: float = 0.93          # P(age a+1) / P(age a), geometric tail
    male_share: float = 0.8
    black_share: float = 0.5
    offense_types: tuple = DEFAULT_OFFENSE_TYPES
    offense_shares: tuple = (0.25, 0.35, 0.30, 0.10)
    arrest_decay: float = 0.78       # geometric tail for prior arrests
    max_arrests: int = 30
    conviction_rate: float = 0.45    # per prior arrest
    fta_base: float = -1.2           # logistic intercept for prior FTA
    fta_per_arrest: float = 0.25
    weight_age: float = -0.015
    weight_arrests: float = 0.11
    weight_convictions: float = 0.07
    weight_fta: float = 0.9
    offense_weights: tuple = (0.35, 0.0, 0.1, -0.15)

    def __post_init__(self) -> None:
        if self.n_cases < 1:
            raise DatasetError(f"n_cases must be >= 1, got {self.n_cases}")
        if not 0.0 < self.base_violation_rate < 1.0:
            raise DatasetError(
                f"base_violation_rate must lie strictly in (0, 1), "
                f"got {self.base_violation_rate}"
            )
        if self.age_max < ADULT_AGE:
            raise DatasetError(f"age_max must be >= {ADULT_AGE}")
        for name in ("age_decay", "arrest_decay"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DatasetError(f"{name} must lie in (0, 1], got {v}")
        for name in ("male_share", "black_share", "conviction_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DatasetError(f"{name} must lie in [0, 1], got {v}")
        if len(self.offense_types) == 0:
            raise DatasetError("offense_types must not be empty")
        if len(self.offense_shares) != len(self.offense_types):
            raise DatasetError("offense_shares must match offense_types in length")
        if len(self.offense_weights) != len(self.offense_types):
            raise DatasetError("offense_weights must match offense_types in length")
        if any(s < 0 for s in self.offense_shares):
            raise DatasetError("offense shares must be non-negative")
        total = float(sum(self.offense_shares))
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise DatasetError(f"offense shares must sum to 1, got {total}")
        if self.max_arrests < 0:
            raise DatasetError("max_arrests must be >= 0")

    # -- latent risk ------------------------------------------------------

    def _raw_score(self, age, arrests, convictions, fta, offense_idx) -> np.ndarray:
        offense_w = np.asarray(self.offense_weights, dtype=float)
        return (
            self.weight_age * (np.asarray(age) - ADULT_AGE)
            + self.weight_arrests * np.asarray(arrests)
            + self.weight_convictions * np.asarray(convictions)
            + self.weight_fta * np.asarray(fta, dtype=float)
            + offense_w[np.asarray(offense_idx)]
        )

    def latent_risk(self, case: DefendantCase) -> float:
        """Ground-truth violation probability for one case."""
        try:
            offense_idx = self.offense_types.index(case.offense_type)
        except ValueError:
            raise DatasetError(
                f"case {case.id}: offense_type {case.offense_type!r} not in generator's "
                f"offense set {self.offense_types}"
            ) from None
        score = self._raw_score(case.age, case.prior_arrests, case.prior_convictions,
                                case.prior_fta, offense_idx)
        return float(_sigmoid(score + _calibrated_intercept(self)))

    def to_json_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "base_violation_rate": self.base_violation_rate,
            "seed": self.seed,
            "age_max": self.age_max,
            "age_decay": self.age_decay,
            "male_share": self.male_share,
            "black_share": self.black_share,
            "offense_types": list(self.offense_types),
            "offense_shares": list(self.offense_shares),
            "arrest_decay": self.arrest_decay,
            "max_arrests": self.max_arrests,
            "conviction_rate": self.conviction_rate,
            "fta_base": self.fta_base,
            "fta_per_arrest": self.fta_per_arrest,
            "weight_age": self.weight_age,
            "weight_arrests": self.weight_arrests,
            "weight_convictions": self.weight_convictions,
            "weight_fta": self.weight_fta,
            "offense_weights": list(self.offense_weights),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GeneratorConfig":
        kwargs = dict(d)
        for name in ("offense_types", "offense_shares", "offense_weights"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise DatasetError(f"bad generator config: {exc}") from exc


def _truncated_geometric_probs(decay: float, size: int) -> np.ndarray:
    if decay == 1.0:
        return np.full(size, 1.0 / size)
    p = decay ** np.arange(size, dtype=float)
    return p / p.sum()


def _draw_features(config: GeneratorConfig, rng: np.random.Generator, n: int) -> dict:
    age_span = config.age_max - ADULT_AGE + 1
    ages = ADULT_AGE + rng.choice(
        age_span, size=n, p=_truncated_geometric_probs(config.age_decay, age_span))
    genders = np.where(rng.random(n) < config.male_share, 0, 1)  # 0 = male
    races = np.where(rng.random(n) < config.black_share, 0, 1)   # 0 = black
    offenses = rng.choice(len(config.offense_types), size=n,
                          p=np.asarray(config.offense_shares, dtype=float))
    arrests = rng.choice(
        config.max_arrests + 1, size=n,
        p=_truncated_geometric_probs(config.arrest_decay, config.max_arrests + 1))
    convictions = rng.binomial(arrests, config.conviction_rate)
    fta_prob = _sigmoid(config.fta_base + config.fta_per_arrest * arrests)
    ftas = rng.random(n) < fta_prob
    return {"age": ages, "gender": genders, "race": races, "offense": offenses,
            "arrests": arrests, "convictions": convictions, "fta": ftas}


# The intercept calibration draws its reference population from a fixed
# internal seed, NOT the dataset seed: the latent risk function must be a
# property of the parameter set alone.
_CALIBRATION_SEED = 0x6C6174656E74  # "latent"
_CALIBRATION_DRAWS = 200_000


@functools.lru_cache(maxsize=32)
def _calibrated_intercept(config: GeneratorConfig) -> float:
    rng = np.random.default_rng(_CALIBRATION_SEED)
    f = _draw_features(config, rng, _CALIBRATION_DRAWS)
    scores = config._raw_score(f["age"], f["arrests"], f["convictions"],
                               f["fta"], f["offense"])
    target = config.base_violation_rate

    def mean_risk(c: float) -> float:
        return float(_sigmoid(scores + c).mean())

    lo, hi = -30.0, 30.0
    for _ in range(100):
        mid = (lo + hi) / 2.0
        if mean_risk(mid) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def generate_synthetic(config: GeneratorConfig) -> PredictionDataset:
    """Draw a cases-only dataset from the configured marginals.

    Outcomes are Bernoulli draws of the calibrated latent risk; the same
    config yields byte-identical datasets.
    """
    n = config.n_cases
    feature_rng = np.random.default_rng(derive_seed(config.seed, "features"))
    outcome_rng = np.random.default_rng(derive_seed(config.seed, "outcomes"))
    f = _draw_features(config, feature_rng, n)
    scores = config._raw_score(f["age"], f["arrests"], f["convictions"],
                               f["fta"], f["offense"])
    risk = _sigmoid(scores + _calibrated_intercept(config))
    outcomes = (outcome_rng.random(n) < risk).astype(int)
    cases = tuple(
        DefendantCase(
            id=f"case:{i:06d}",
            age=int(f["age"][i]),
            gender=GENDERS[f["gender"][i]],
            race=RACES[f["race"][i]],
            offense_type=config.offense_types[f["offense"][i]],
            prior_arrests=int(f["arrests"][i]),
            prior_convictions=int(f["convictions"][i]),
            prior_fta=bool(f["fta"][i]),
            outcome=int(outcomes[i]),
        )
        for i in range(n)
    )
    return PredictionDataset(cases=cases, predictions=())


# --- augmentation --------------------------------------------------------

_AGE_DELTAS = (-3, -2, -1, 1, 2, 3)
_VARIANT_SEP = "#a"
_SYNTH_ID = re.compile(r"^synth:(\d+)$")


def parent_case_id(case_id: str) -> str:
    """The original case id behind an age-variant id (identity otherwise)."""
    return case_id.rsplit(_VARIANT_SEP, 1)[0]


def augment_age_variants(ds: PredictionDataset) -> PredictionDataset:
    """Expand every case into up to six age-shifted copies (±1, ±2, ±3 years).

    Variants whose shifted age would fall below the adult threshold are
    dropped. Every variant inherits all predictions of its original,
    unchanged; the originals are kept.
    """
    if not ds.cases or not ds.predictions:
        raise DatasetError("age augmentation needs at least one case with one prediction")
    by_case = ds.predictions_by_case()
    cases = list(ds.cases)
    predictions = list(ds.predictions)
    for case in ds.cases:
        for delta in _AGE_DELTAS:
            age = case.age + delta
            if age < ADULT_AGE:
                continue
            variant_id = f"{case.id}{_VARIANT_SEP}{delta:+d}"
            cases.append(replace(case, id=variant_id, age=age))
            predictions.extend(
                replace(pred, case_id=variant_id) for pred in by_case[case.id]
            )
    return PredictionDataset(cases=tuple(cases), predictions=tuple(predictions))


def _next_synth_index(predictions) -> int:
    start = 0
    for pred in predictions:
        m = _SYNTH_ID.match(pred.participant_id)
        if m:
            start = max(start, int(m.group(1)) + 1)
    return start


def smoothed_grid_pmf(tenths_counts: np.ndarray, smoothing: float) -> np.ndarray:
    """Additive-smoothed distribution over the 11 grid cells."""
    counts = np.asarray(tenths_counts, dtype=float)
    total = counts.sum() + 11.0 * smoothing
    return (counts + smoothing) / total


def augment_sampled_predictions(ds: PredictionDataset, smoothing: float = 0.5,
                                seed: int = 0) -> PredictionDataset:
    """Double the prediction count by sampling each case's smoothed histogram.

    For every existing prediction, one new prediction is drawn from the
    additively-smoothed (parameter ``smoothing``) empirical distribution of
    its case and appended under a fresh ``synth:`` participant id. Cases and
    original predictions pass through untouched.
    """
    if smoothing < 0:
        raise DatasetError(f"smoothing must be >= 0, got {smoothing}")
    by_case = ds.predictions_by_case()
    empty = [cid for cid, preds in by_case.items() if not preds]
    if empty or not ds.cases:
        raise DatasetError(
            "sampled augmentation needs every case to carry at least one prediction; "
            f"missing for: {', '.join(empty[:5]) if empty else '(no cases)'}"
        )
    rng = np.random.default_rng(derive_seed(seed, "sampled-predictions"))
    synth = _next_synth_index(ds.predictions)
    new_predictions = []
    for case in ds.cases:
        preds = by_case[case.id]
        counts = np.zeros(11)
        for pred in preds:
            counts[pred.value.tenths] += 1
        pmf = smoothed_grid_pmf(counts, smoothing)
        draws = rng.choice(11, size=len(preds), p=pmf)
        for t in draws:
            new_predictions.append(HumanPrediction(
                case_id=case.id,
                participant_id=f"synth:{synth:06d}",
                value=GridPrediction(int(t)),
            ))
            synth += 1
    return PredictionDataset(cases=ds.cases,
                             predictions=ds.predictions + tuple(new_predictions))
