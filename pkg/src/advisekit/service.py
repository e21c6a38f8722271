"""HTTP session server for live prediction rounds.

Exposes the interaction protocol under ``/v1``: a client opens a session,
repeatedly fetches a case description, submits an initial grid prediction,
may receive advice (then must submit a final prediction), and finishes with
a score/bonus summary. Records are schema-identical to the simulation
runner's output, so the same metrics pipeline consumes both.

State is event-sourced: every session appends to its own JSONL log under the
data directory, with an ``index.jsonl`` recording creation order. Restarting
the server replays the logs and reconstructs identical state; nothing else
is persisted.

Information hiding: the raw model estimate never appears in any
session-facing response. Clients see only the grid-rounded advice value, and
only in periods where the advising policy fired. (The operator-facing
``/v1/export`` stream does include the raw estimates — it is the analysis
surface, not the participant surface.)

Determinism: treatment assignment, case-series sampling, and the Random
policy's coin are all pure functions of the server master seed and the
session id; session ids themselves are derived from the master seed and a
creation counter, so a fresh data directory replays byte-identically.
"""

from __future__ import annotations

import dataclasses
import json
import os
import threading
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Iterator, Optional, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .core import (
    DefendantCase,
    DomainError,
    GridPrediction,
    PredictionRecord,
    TreatmentKind,
    derive_seed,
    round_to_grid,
)
from .datasets import load_cases_csv
from .policy import AdviceContext, AdvisingPolicySpec, decide, load_policy
from .risk import RiskModel, load_risk_model, predict_risk_batch

__all__ = [
    "ServiceError",
    "BonusConfig",
    "ServiceConfig",
    "load_service_config",
    "render_vignette",
    "advice_message",
    "bonus_from_records",
    "money",
    "Session",
    "SessionStore",
    "make_default_policies",
    "store_from_config",
    "create_app",
]


class ServiceError(ValueError):
    pass


PHASE_AWAITING_INITIAL = "awaiting_initial"
PHASE_AWAITING_FINAL = "awaiting_final"
PHASE_DONE = "done"

QUESTION_TEXT = ("How likely is this defendant to fail to appear in court "
                 "for trial or get arrested before trial?")

# Shown by the selective assistants (Learned, Omniscient), which fire only
# when they judge the current prediction improvable.
_MSG_SELECTIVE = ("Your algorithmic assistant identifies that your current "
                  "prediction is likely to have high error, and advises you "
                  "to improve the prediction to {percent}%.")

# Plain risk display, used where advice carries no claim about the
# participant's own error (Random and the always-on Update treatment).
_MSG_PLAIN = ("Your algorithmic assistant predicts that this person is "
              "{percent}% likely to fail to appear in court for trial or "
              "get arrested before trial.")


def _times(n: int) -> str:
    return "1 time" if n == 1 else f"{n} times"


def render_vignette(case: DefendantCase, period: int) -> str:
    """One-paragraph case description, in the fixed sentence pattern
    participants see. Race and gender are shown to the human on purpose;
    only the models are blinded to them."""
    pronoun = "He" if case.gender == "male" else "She"
    fta = ("has previously failed to appear" if case.prior_fta
           else "has never failed to appear")
    return (
        f"Defendant #{period} is a {case.age} year old {case.race} {case.gender}. "
        f"{pronoun} was arrested for a {case.offense_type} crime. "
        f"The defendant has previously been arrested {_times(case.prior_arrests)}. "
        f"The defendant has previously been released before trial, and {fta}. "
        f"{pronoun} has previously been convicted {_times(case.prior_convictions)}."
    )


def advice_message(treatment: TreatmentKind, advice: GridPrediction) -> str:
    template = (_MSG_SELECTIVE
                if treatment in (TreatmentKind.LEARNED, TreatmentKind.OMNISCIENT)
                else _MSG_PLAIN)
    return template.format(percent=advice.percent)


# --- payment -----------------------------------------------------------------

@dataclass(frozen=True)
class BonusConfig:
    """Base payment plus an accuracy bonus, normalized so a perfect series
    earns exactly ``max_bonus``."""

    base_payment: float = 2.0
    max_bonus: float = 3.0
    series_length: int = 50

    def __post_init__(self) -> None:
        if self.base_payment < 0 or self.max_bonus < 0:
            raise ServiceError("payment amounts must be >= 0")
        if self.series_length < 1:
            raise ServiceError("series_length must be >= 1")


def bonus_from_records(records: Sequence[PredictionRecord],
                       config: BonusConfig) -> tuple:
    """(bonus, total) as exact fractions.

    Per-record reward is the quadratic score 1 - (y - final)^2; the bonus is
    ``max_bonus * sum(rewards) / series_length``. Grid values are exact
    tenths, so the whole computation stays rational and a perfect series
    yields exactly max_bonus.
    """
    total_score = Fraction(0)
    for rec in records:
        err = Fraction(rec.y) - Fraction(rec.y_hat_final.tenths, 10)
        total_score += 1 - err * err
    bonus = Fraction(str(config.max_bonus)) * total_score / config.series_length
    return bonus, Fraction(str(config.base_payment)) + bonus


def money(amount: Fraction) -> str:
    cents = (Decimal(amount.numerator) / Decimal(amount.denominator)
             ).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{cents:.2f}"


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class ServiceConfig:
    """Server configuration, loadable from one JSON file.

    ``ADVISEKIT_PORT`` and ``ADVISEKIT_DATA_DIR`` environment variables
    override the file values so deployments can relocate state without
    editing configs.
    """

    case_pool: str
    risk_model: str
    learned_policy: str
    data_dir: str = "./service-data"
    master_seed: int = 0
    series_length: int = 50
    advise_prob: float = 0.30
    base_payment: float = 2.0
    max_bonus: float = 3.0
    host: str = "127.0.0.1"
    port: int = 8000


def load_service_config(path, env=None) -> ServiceConfig:
    env = os.environ if env is None else env
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    for key in ("case_pool", "risk_model", "learned_policy"):
        if key not in raw:
            raise ServiceError(f"service config is missing {key!r}")
    allowed = {f.name for f in ServiceConfig.__dataclass_fields__.values()}
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ServiceError(f"unknown service config keys: {sorted(unknown)}")
    cfg = ServiceConfig(**raw)
    if "ADVISEKIT_PORT" in env:
        cfg = dataclasses.replace(cfg, port=int(env["ADVISEKIT_PORT"]))
    if "ADVISEKIT_DATA_DIR" in env:
        cfg = dataclasses.replace(cfg, data_dir=env["ADVISEKIT_DATA_DIR"])
    return cfg


def make_default_policies(master_seed: int, learned: AdvisingPolicySpec,
                          advise_prob: float = 0.30) -> dict:
    """All five advising policies as the server uses them."""
    if learned.kind is not TreatmentKind.LEARNED:
        raise ServiceError("learned policy spec must have kind Learned")
    return {
        TreatmentKind.LEARNED: learned,
        TreatmentKind.RANDOM: AdvisingPolicySpec(
            kind=TreatmentKind.RANDOM, advise_prob=advise_prob,
            seed=derive_seed(master_seed, "policy", "Random")),
        TreatmentKind.OMNISCIENT: AdvisingPolicySpec(kind=TreatmentKind.OMNISCIENT),
        TreatmentKind.NO_ADVICE: AdvisingPolicySpec(kind=TreatmentKind.NO_ADVICE),
        TreatmentKind.UPDATE: AdvisingPolicySpec(kind=TreatmentKind.UPDATE),
    }


# --- sessions ------------------------------------------------------------------

@dataclass
class Session:
    id: str
    treatment: TreatmentKind
    series: tuple            # case ids, in presentation order
    phase: str = PHASE_AWAITING_INITIAL
    cursor: int = 0          # completed periods; current period is cursor + 1
    records: list = field(default_factory=list)
    pending: Optional[dict] = None   # set while awaiting the final prediction
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def period(self) -> int:
        return self.cursor + 1

    @property
    def done(self) -> bool:
        return self.phase == PHASE_DONE


class SessionStore:
    """All live sessions plus their event-sourced persistence."""

    def __init__(self, pool: Sequence[DefendantCase], risk: RiskModel,
                 policies: dict, data_dir: str, master_seed: int = 0,
                 series_length: int = 50, bonus: Optional[BonusConfig] = None):
        if series_length > len(pool):
            raise ServiceError(
                f"series_length {series_length} exceeds pool size {len(pool)}")
        ids = [c.id for c in pool]
        if len(set(ids)) != len(ids):
            raise ServiceError("case pool contains duplicate case ids")
        self.pool = tuple(pool)
        self.cases = {c.id: c for c in self.pool}
        self.risk = risk
        self.policies = dict(policies)
        self.data_dir = str(data_dir)
        self.master_seed = master_seed
        self.series_length = series_length
        self.bonus = bonus or BonusConfig(series_length=series_length)
        if self.bonus.series_length != series_length:
            raise ServiceError("bonus config series_length must match the store")
        alg = predict_risk_batch(risk, self.pool)
        self._alg_by_case = {c.id: float(a) for c, a in zip(self.pool, alg)}
        self._sessions: dict = {}
        self._order: list = []
        self._lock = threading.Lock()
        os.makedirs(self.data_dir, exist_ok=True)
        self._replay()

    @property
    def n_sessions(self) -> int:
        with self._lock:
            return len(self._order)

    # -- persistence ------------------------------------------------------

    def _index_path(self) -> str:
        return os.path.join(self.data_dir, "index.jsonl")

    def _log_path(self, session_id: str) -> str:
        return os.path.join(self.data_dir, f"{session_id}.jsonl")

    def _append(self, session_id: str, event: dict) -> None:
        with open(self._log_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self) -> None:
        if not os.path.exists(self._index_path()):
            return
        with open(self._index_path(), encoding="utf-8") as fh:
            entries = [json.loads(line) for line in fh if line.strip()]
        for entry in entries:
            session = self._replay_session(entry["id"])
            self._sessions[session.id] = session
            self._order.append(session.id)

    def _replay_session(self, session_id: str) -> Session:
        with open(self._log_path(session_id), encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        if not events or events[0]["event"] != "created":
            raise ServiceError(f"corrupt event log for session {session_id}")
        head = events[0]
        session = Session(
            id=session_id,
            treatment=TreatmentKind.parse(head["treatment"]),
            series=tuple(head["series"]),
        )
        for event in events[1:]:
            if event["event"] == "initial":
                self._apply_initial(
                    session, GridPrediction(event["value"]),
                    advised=event["advised"], alg=event["alg"],
                    alg_rounded=GridPrediction(event["alg_rounded"]))
            elif event["event"] == "final":
                self._apply_final(session, GridPrediction(event["value"]))
            else:
                raise ServiceError(
                    f"unknown event {event['event']!r} in session {session_id}")
        return session

    # -- pure state transitions (shared by live path and replay) -----------

    def _case_for(self, session: Session) -> DefendantCase:
        return self.cases[session.series[session.cursor]]

    def _advance(self, session: Session) -> None:
        session.cursor += 1
        session.pending = None
        session.phase = (PHASE_DONE if session.cursor >= len(session.series)
                         else PHASE_AWAITING_INITIAL)

    def _apply_initial(self, session: Session, value: GridPrediction,
                       advised: bool, alg: float,
                       alg_rounded: GridPrediction) -> None:
        case = self._case_for(session)
        if advised:
            session.pending = {"initial": value, "alg": alg,
                               "alg_rounded": alg_rounded}
            session.phase = PHASE_AWAITING_FINAL
            return
        session.records.append(PredictionRecord(
            case_id=case.id, participant_id=session.id, period=session.period,
            y=case.outcome, y_hat_unassisted=value, y_hat_alg=alg,
            y_hat_alg_rounded=alg_rounded, z_hat=False, y_hat_assisted=None,
            y_hat_final=value))
        self._advance(session)

    def _apply_final(self, session: Session, value: GridPrediction) -> None:
        case = self._case_for(session)
        pending = session.pending
        session.records.append(PredictionRecord(
            case_id=case.id, participant_id=session.id, period=session.period,
            y=case.outcome, y_hat_unassisted=pending["initial"],
            y_hat_alg=pending["alg"], y_hat_alg_rounded=pending["alg_rounded"],
            z_hat=True, y_hat_assisted=value, y_hat_final=value))
        self._advance(session)

    # -- operations ---------------------------------------------------------

    def create_session(self, treatment_name: Optional[str] = None) -> Session:
        with self._lock:
            counter = len(self._order)
            session_id = (f"s{counter:06d}-"
                          f"{derive_seed(self.master_seed, 'session-id', counter):016x}")
            if treatment_name is not None:
                treatment = TreatmentKind.parse(treatment_name)
            else:
                rng = np.random.default_rng(
                    derive_seed(self.master_seed, "treatment", session_id))
                treatment = list(TreatmentKind)[int(rng.integers(0, 5))]
            rng = np.random.default_rng(
                derive_seed(self.master_seed, "series", session_id))
            order = rng.choice(len(self.pool), size=self.series_length,
                               replace=False)
            series = tuple(self.pool[int(i)].id for i in order)
            session = Session(id=session_id, treatment=treatment, series=series)
            self._sessions[session_id] = session
            self._order.append(session_id)
            with open(self._index_path(), "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"id": session_id}) + "\n")
            self._append(session_id, {
                "event": "created", "id": session_id,
                "treatment": treatment.value, "series": list(series)})
            return session

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise ServiceError(f"unknown session {session_id!r}") from None

    def submit_initial(self, session: Session, value: GridPrediction) -> dict:
        """Runs the advising policy; returns the advice payload (or None)."""
        with session.lock:
            if session.phase != PHASE_AWAITING_INITIAL:
                raise PhaseError(session.phase)
            case = self._case_for(session)
            alg = self._alg_by_case[case.id]
            alg_rounded = round_to_grid(alg)
            ctx = AdviceContext.build(
                case, alg, value, session.period, session.id,
                include_outcome=session.treatment is TreatmentKind.OMNISCIENT)
            advised = decide(self.policies[session.treatment], ctx)
            period = session.period
            self._append(session.id, {
                "event": "initial", "period": period,
                "value": value.tenths, "advised": advised, "alg": alg,
                "alg_rounded": alg_rounded.tenths})
            self._apply_initial(session, value, advised, alg, alg_rounded)
            if not advised:
                return {"advice": None, "period": period, "done": session.done}
            return {
                "advice": {
                    "value": alg_rounded.tenths,
                    "message": advice_message(session.treatment, alg_rounded),
                },
                "period": period,
                "done": False,
            }

    def submit_final(self, session: Session, value: GridPrediction) -> dict:
        with session.lock:
            if session.phase != PHASE_AWAITING_FINAL:
                raise PhaseError(session.phase)
            period = session.period
            self._append(session.id, {
                "event": "final", "period": period, "value": value.tenths})
            self._apply_final(session, value)
            return {"recorded": True, "period": period, "done": session.done}

    def summary(self, session: Session) -> dict:
        with session.lock:
            if not session.done:
                raise PhaseError(session.phase)
            bonus, total = bonus_from_records(session.records, self.bonus)
            n = len(session.records)
            mean_quadratic = sum(
                1 - (Fraction(r.y) - Fraction(r.y_hat_final.tenths, 10)) ** 2
                for r in session.records) / n
            return {
                "session_id": session.id,
                "treatment": session.treatment.value,
                "n_records": n,
                "mean_quadratic": float(mean_quadratic),
                "base_payment": float(Fraction(str(self.bonus.base_payment))),
                "bonus": float(bonus),
                "total_payment": float(total),
                "bonus_display": money(bonus),
                "total_display": money(total),
            }

    def export_records(self, treatment: Optional[str] = None,
                       session_id: Optional[str] = None) -> Iterator[str]:
        """Completed records from every session, in creation order, as JSONL
        lines. Snapshot-consistent: each session is copied under its lock."""
        want = None if treatment is None else TreatmentKind.parse(treatment)
        with self._lock:
            order = list(self._order)
        for sid in order:
            if session_id is not None and sid != session_id:
                continue
            session = self._sessions[sid]
            with session.lock:
                if want is not None and session.treatment is not want:
                    continue
                records = list(session.records)
            for rec in records:
                yield json.dumps(rec.to_json_dict(), sort_keys=True,
                                 separators=(",", ":")) + "\n"


class PhaseError(ServiceError):
    def __init__(self, phase: str):
        self.phase = phase
        super().__init__("session complete" if phase == PHASE_DONE
                         else f"operation not allowed in phase {phase!r}")


def store_from_config(cfg: ServiceConfig) -> SessionStore:
    pool = load_cases_csv(cfg.case_pool)
    risk = load_risk_model(cfg.risk_model)
    learned = load_policy(cfg.learned_policy)
    policies = make_default_policies(cfg.master_seed, learned, cfg.advise_prob)
    return SessionStore(
        pool=pool, risk=risk, policies=policies, data_dir=cfg.data_dir,
        master_seed=cfg.master_seed, series_length=cfg.series_length,
        bonus=BonusConfig(base_payment=cfg.base_payment,
                          max_bonus=cfg.max_bonus,
                          series_length=cfg.series_length))


# --- HTTP layer -----------------------------------------------------------------

class CreateSessionBody(BaseModel):
    treatment: Optional[str] = None


class PredictionBody(BaseModel):
    value: int


def _grid_or_400(tenths: int) -> GridPrediction:
    try:
        return GridPrediction(tenths)
    except DomainError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


def _session_or_404(store: SessionStore, session_id: str) -> Session:
    try:
        return store.get(session_id)
    except ServiceError as exc:
        raise HTTPException(status_code=404, detail=str(exc))


def create_app(store: SessionStore) -> FastAPI:
    app = FastAPI(title="advisekit session server", version="1")
    app.state.store = store

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        try:
            session = store.create_session(body.treatment)
        except (ServiceError, DomainError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "session_id": session.id,
            "treatment": session.treatment.value,
            "series_length": len(session.series),
        }

    @app.get("/v1/sessions/{session_id}")
    def session_state(session_id: str):
        session = _session_or_404(store, session_id)
        with session.lock:
            pending = None
            if session.phase == PHASE_AWAITING_FINAL:
                advice = session.pending["alg_rounded"]
                pending = {
                    "initial": session.pending["initial"].tenths,
                    "advice": {
                        "value": advice.tenths,
                        "message": advice_message(session.treatment, advice),
                    },
                }
            return {
                "session_id": session.id,
                "treatment": session.treatment.value,
                "series_length": len(session.series),
                "period": None if session.done else session.period,
                "phase": session.phase,
                "n_records": len(session.records),
                "pending": pending,
            }

    @app.get("/v1/sessions/{session_id}/next")
    def next_case(session_id: str):
        session = _session_or_404(store, session_id)
        with session.lock:
            if session.phase != PHASE_AWAITING_INITIAL:
                raise HTTPException(status_code=409,
                                    detail=str(PhaseError(session.phase)))
            case = store.cases[session.series[session.cursor]]
            return {
                "period": session.period,
                "total": len(session.series),
                "text": render_vignette(case, session.period),
                "question": QUESTION_TEXT,
            }

    @app.post("/v1/sessions/{session_id}/initial")
    def submit_initial(session_id: str, body: PredictionBody):
        session = _session_or_404(store, session_id)
        value = _grid_or_400(body.value)
        try:
            return store.submit_initial(session, value)
        except PhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.post("/v1/sessions/{session_id}/final")
    def submit_final(session_id: str, body: PredictionBody):
        session = _session_or_404(store, session_id)
        value = _grid_or_400(body.value)
        try:
            return store.submit_final(session, value)
        except PhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/v1/sessions/{session_id}/summary")
    def summary(session_id: str):
        session = _session_or_404(store, session_id)
        try:
            return store.summary(session)
        except PhaseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/v1/export")
    def export(treatment: Optional[str] = Query(default=None),
               session: Optional[str] = Query(default=None)):
        try:
            body = "".join(store.export_records(treatment, session))
        except (ServiceError, DomainError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return PlainTextResponse(body, media_type="application/x-ndjson")

    return app
