"""Shared domain types: grid predictions, defendant cases, interaction records.

Everything downstream (datasets, policies, metrics, the service) speaks in
these types. Probabilities that a participant can enter are constrained to
an 11-point grid {0.0, 0.1, ..., 1.0} and are stored as integer tenths so
that equality, distance, and histogram math stay exact.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from decimal import Decimal, ROUND_FLOOR
from enum import Enum
from typing import Optional

import numpy as np

GRID_TENTHS = tuple(range(11))

GENDERS = ("male", "female")
RACES = ("black", "white")
DEFAULT_OFFENSE_TYPES = ("violent", "property", "drug", "public-order")

ADULT_AGE = 18


class DomainError(ValueError):
    """Raised when a core type is constructed from out-of-contract values."""


@dataclass(frozen=True, order=True)
class GridPrediction:
    """A probability restricted to the 11-point display grid.

    Stored as an integer number of tenths (0..10) so distances between grid
    values are exact integers and never accumulate float error.
    """

    tenths: int

    def __post_init__(self) -> None:
        if isinstance(self.tenths, bool) or not isinstance(self.tenths, int):
            raise DomainError(f"grid tenths must be an int, got {self.tenths!r}")
        if not 0 <= self.tenths <= 10:
            raise DomainError(f"grid tenths must be in 0..10, got {self.tenths}")

    @property
    def value(self) -> float:
        """The probability as a float (exact for every grid point)."""
        return self.tenths / 10.0

    @property
    def percent(self) -> int:
        return self.tenths * 10

    def __str__(self) -> str:
        return f"{self.percent}%"


def round_to_grid(p: float) -> GridPrediction:
    """Round a probability to the nearest grid value; exact midpoints round up.

    The input is read through its shortest decimal representation, so a
    literal like 0.15 sits exactly on the midpoint and rounds up to 0.2
    even though the nearest binary double is fractionally below it.
    """
    if isinstance(p, GridPrediction):
        return p
    try:
        fp = float(p)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"not a probability: {p!r}") from exc
    if math.isnan(fp) or not 0.0 <= fp <= 1.0:
        raise DomainError(f"probability must lie in [0, 1], got {p!r}")
    scaled = Decimal(str(p)) * 10 + Decimal("0.5")
    return GridPrediction(int(scaled.to_integral_value(rounding=ROUND_FLOOR)))


@dataclass(frozen=True)
class DefendantCase:
    """One defendant: demographics, criminal history, and the binary outcome.

    ``outcome`` is 1 when the defendant failed to appear or was re-arrested
    before trial, 0 otherwise.
    """

    id: str
    age: int
    gender: str
    race: str
    offense_type: str
    prior_arrests: int
    prior_convictions: int
    prior_fta: bool
    outcome: int

    def __post_init__(self) -> None:
        if not self.id or not isinstance(self.id, str):
            raise DomainError(f"case id must be a non-empty string, got {self.id!r}")
        if isinstance(self.age, bool) or not isinstance(self.age, int):
            raise DomainError(f"case {self.id}: age must be an int, got {self.age!r}")
        if self.age < ADULT_AGE:
            raise DomainError(f"case {self.id}: age must be >= {ADULT_AGE}, got {self.age}")
        if self.gender not in GENDERS:
            raise DomainError(f"case {self.id}: unknown gender {self.gender!r}")
        if self.race not in RACES:
            raise DomainError(f"case {self.id}: unknown race {self.race!r}")
        if not self.offense_type or not isinstance(self.offense_type, str):
            raise DomainError(f"case {self.id}: offense_type must be a non-empty string")
        for name in ("prior_arrests", "prior_convictions"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise DomainError(f"case {self.id}: {name} must be a non-negative int, got {v!r}")
        if self.prior_convictions > self.prior_arrests:
            raise DomainError(
                f"case {self.id}: prior_convictions ({self.prior_convictions}) "
                f"exceeds prior_arrests ({self.prior_arrests})"
            )
        if not isinstance(self.prior_fta, bool):
            raise DomainError(f"case {self.id}: prior_fta must be a bool, got {self.prior_fta!r}")
        if self.outcome not in (0, 1) or isinstance(self.outcome, bool):
            raise DomainError(f"case {self.id}: outcome must be 0 or 1, got {self.outcome!r}")


class TreatmentKind(str, Enum):
    """The five advising arms a participant can be assigned to."""

    LEARNED = "Learned"
    RANDOM = "Random"
    OMNISCIENT = "Omniscient"
    NO_ADVICE = "NoAdvice"
    UPDATE = "Update"

    @classmethod
    def parse(cls, text: str) -> "TreatmentKind":
        norm = text.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        for kind in cls:
            if kind.value.lower() == norm:
                return kind
        raise DomainError(f"unknown treatment {text!r}; expected one of "
                          + ", ".join(k.value for k in cls))


@dataclass(frozen=True)
class PredictionRecord:
    """One completed participant-case interaction.

    Grid-valued fields are :class:`GridPrediction`; ``y_hat_alg`` is the raw
    model probability before display rounding. ``y_hat_assisted`` is present
    exactly when advice was shown (``z_hat`` true), and the final prediction
    must match whichever of assisted/unassisted applies — the record stores
    both stages plus the resolved value so downstream metrics never have to
    re-derive the branch.
    """

    case_id: str
    participant_id: str
    period: int
    y: int
    y_hat_unassisted: GridPrediction
    y_hat_alg: float
    y_hat_alg_rounded: GridPrediction
    z_hat: bool
    y_hat_assisted: Optional[GridPrediction]
    y_hat_final: GridPrediction

    def __post_init__(self) -> None:
        if not self.case_id or not self.participant_id:
            raise DomainError("record needs non-empty case_id and participant_id")
        if isinstance(self.period, bool) or not isinstance(self.period, int) or self.period < 1:
            raise DomainError(f"period must be a positive int, got {self.period!r}")
        if self.y not in (0, 1) or isinstance(self.y, bool):
            raise DomainError(f"outcome y must be 0 or 1, got {self.y!r}")
        if not isinstance(self.y_hat_alg, float) or not 0.0 <= self.y_hat_alg <= 1.0:
            raise DomainError(f"y_hat_alg must be a float in [0, 1], got {self.y_hat_alg!r}")
        for name in ("y_hat_unassisted", "y_hat_alg_rounded", "y_hat_final"):
            if not isinstance(getattr(self, name), GridPrediction):
                raise DomainError(f"{name} must be a GridPrediction")
        if round_to_grid(self.y_hat_alg) != self.y_hat_alg_rounded:
            raise DomainError(
                f"y_hat_alg_rounded={self.y_hat_alg_rounded.tenths} does not round from "
                f"y_hat_alg={self.y_hat_alg}"
            )
        if not isinstance(self.z_hat, bool):
            raise DomainError(f"z_hat must be a bool, got {self.z_hat!r}")
        if self.z_hat:
            if not isinstance(self.y_hat_assisted, GridPrediction):
                raise DomainError("advised record must carry y_hat_assisted")
            if self.y_hat_final != self.y_hat_assisted:
                raise DomainError("advised record must have y_hat_final == y_hat_assisted")
        else:
            if self.y_hat_assisted is not None:
                raise DomainError("unadvised record must not carry y_hat_assisted")
            if self.y_hat_final != self.y_hat_unassisted:
                raise DomainError("unadvised record must have y_hat_final == y_hat_unassisted")

    def to_json_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "participant_id": self.participant_id,
            "period": self.period,
            "y": self.y,
            "y_hat_unassisted": self.y_hat_unassisted.tenths,
            "y_hat_alg": self.y_hat_alg,
            "y_hat_alg_rounded": self.y_hat_alg_rounded.tenths,
            "z_hat": self.z_hat,
            "y_hat_assisted": None if self.y_hat_assisted is None else self.y_hat_assisted.tenths,
            "y_hat_final": self.y_hat_final.tenths,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PredictionRecord":
        try:
            assisted = d["y_hat_assisted"]
            return cls(
                case_id=d["case_id"],
                participant_id=d["participant_id"],
                period=d["period"],
                y=d["y"],
                y_hat_unassisted=GridPrediction(d["y_hat_unassisted"]),
                y_hat_alg=float(d["y_hat_alg"]),
                y_hat_alg_rounded=GridPrediction(d["y_hat_alg_rounded"]),
                z_hat=d["z_hat"],
                y_hat_assisted=None if assisted is None else GridPrediction(assisted),
                y_hat_final=GridPrediction(d["y_hat_final"]),
            )
        except KeyError as exc:
            raise DomainError(f"record is missing field {exc.args[0]!r}") from exc


_SEED_MASK = (1 << 64) - 1


def derive_seed(master: int, *path: object) -> int:
    """Derive a stable 64-bit child seed for a labeled random stream.

    Children are keyed hashes of the path labels, so distinct paths give
    independent streams and the same (master, path) always gives the same
    seed — across runs, platforms, and process boundaries.
    """
    if not path:
        raise DomainError("derive_seed needs at least one path label")
    key = (master & _SEED_MASK).to_bytes(8, "little")
    label = "/".join(str(part) for part in path)
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8, key=key)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class RngSeed:
    """A 64-bit seed plus the derivation path that produced it."""

    seed: int
    path: tuple = ()

    def child(self, *labels: object) -> "RngSeed":
        return RngSeed(derive_seed(self.seed, *labels), self.path + tuple(str(l) for l in labels))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed & _SEED_MASK)
