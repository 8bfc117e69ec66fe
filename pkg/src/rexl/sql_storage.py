"""SQLite + SQLAlchemy evaluation ledger.

Stores one row per (run, method, image, λ) evaluation so that results of
many `evaluate` / `compare` runs can be queried and summarized together.
"""

from __future__ import annotations

from datetime import datetime, timezone
from typing import List, Optional

import pandas as pd
from sqlalchemy import Column, DateTime, Float, Integer, String, UniqueConstraint, create_engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from .metrics import EvalReport

UTC = timezone.utc  # datetime.UTC needs Python 3.11+

Base = declarative_base()


class EvaluationORM(Base):
    """One image evaluated by one method under one run configuration."""

    __tablename__ = "evaluations"

    id = Column(Integer, primary_key=True)
    run_hash = Column(String, nullable=False, index=True)
    method = Column(String, nullable=False, index=True)
    image_id = Column(String, nullable=False)
    class_index = Column(Integer, nullable=False)
    lam = Column(Float, nullable=False, default=1.0)

    deletion_auc = Column(Float, nullable=False)
    insertion_auc = Column(Float, nullable=False)
    calls = Column(Integer, nullable=False)
    seconds = Column(Float)
    seed = Column(Integer)

    created_at = Column(DateTime, default=lambda: datetime.now(UTC))
    updated_at = Column(
        DateTime, default=lambda: datetime.now(UTC), onupdate=lambda: datetime.now(UTC)
    )

    __table_args__ = (
        UniqueConstraint("run_hash", "method", "image_id", "lam", name="uix_evaluation"),
    )


def init_db(db_url: str = "sqlite:///rexl.db", *, echo: bool = False):
    """Create the DB engine and tables. Returns (engine, SessionLocal)."""
    engine = create_engine(db_url, echo=echo, future=True)
    Base.metadata.create_all(engine)
    SessionLocal = sessionmaker(bind=engine, expire_on_commit=False, future=True)
    return engine, SessionLocal


def save_evaluation(
    session: Session,
    *,
    run_hash: str,
    method: str,
    image_id: str,
    class_index: int,
    lam: float,
    deletion_auc: float,
    insertion_auc: float,
    calls: int,
    seconds: Optional[float] = None,
    seed: Optional[int] = None,
) -> EvaluationORM:
    """Insert or update the row for (run_hash, method, image_id, lam)."""
    row = (
        session.query(EvaluationORM)
        .filter_by(run_hash=run_hash, method=method, image_id=image_id, lam=float(lam))
        .one_or_none()
    )
    if row is None:
        row = EvaluationORM(run_hash=run_hash, method=method, image_id=image_id, lam=float(lam))
        session.add(row)
    row.class_index = int(class_index)
    row.deletion_auc = float(deletion_auc)
    row.insertion_auc = float(insertion_auc)
    row.calls = int(calls)
    row.seconds = None if seconds is None else float(seconds)
    row.seed = seed
    session.flush()
    return row


def save_report(session: Session, report: EvalReport) -> int:
    """Write every image of a report; returns the number of rows touched."""
    lam = 1.0 if report.lam is None else report.lam
    for e in report.evaluations:
        save_evaluation(
            session,
            run_hash=report.config_hash,
            method=report.method,
            image_id=e.image_id,
            class_index=e.class_index,
            lam=lam,
            deletion_auc=e.deletion_auc,
            insertion_auc=e.insertion_auc,
            calls=e.calls,
            seconds=e.seconds,
            seed=report.config.seed,
        )
    session.commit()
    return len(report.evaluations)


def get_evaluations(
    session: Session,
    *,
    run_hash: Optional[str] = None,
    method: Optional[str] = None,
    lam: Optional[float] = None,
) -> List[EvaluationORM]:
    q = session.query(EvaluationORM)
    if run_hash is not None:
        q = q.filter(EvaluationORM.run_hash == run_hash)
    if method is not None:
        q = q.filter(EvaluationORM.method == method)
    if lam is not None:
        q = q.filter(EvaluationORM.lam == float(lam))
    return q.order_by(EvaluationORM.method, EvaluationORM.lam, EvaluationORM.image_id).all()


def summarize_evaluations(session: Session, **filters) -> pd.DataFrame:
    """Mean AUCs and calls per (method, λ)."""
    rows = get_evaluations(session, **filters)
    columns = ["method", "lam", "n_images", "deletion_auc", "insertion_auc", "calls"]
    if not rows:
        return pd.DataFrame(columns=columns)
    df = pd.DataFrame(
        [
            {
                "method": r.method,
                "lam": r.lam,
                "deletion_auc": r.deletion_auc,
                "insertion_auc": r.insertion_auc,
                "calls": r.calls,
            }
            for r in rows
        ]
    )
    grouped = df.groupby(["method", "lam"], sort=True)
    out = grouped[["deletion_auc", "insertion_auc", "calls"]].mean().reset_index()
    out.insert(2, "n_images", grouped.size().to_numpy())
    return out[columns]
