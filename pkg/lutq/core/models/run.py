"""Ledger rows for command runs and their per-epoch training records."""

from __future__ import annotations

import enum
import uuid
from datetime import datetime, timezone

from sqlalchemy import JSON, Column, DateTime, Enum, Float, ForeignKey, Integer, String, Text, Uuid

from .base import Base

__all__ = ["RunStatus", "RunORM", "RunEpochORM"]


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class RunStatus(str, enum.Enum):
    """Lifecycle states of a recorded command run."""

    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class RunORM(Base):
    """One invocation of a ``lutq`` command (train, quantize, report, ...)."""

    __tablename__ = "runs"

    id = Column(Uuid, primary_key=True, default=uuid.uuid4, nullable=False)
    command = Column(String(32), nullable=False, index=True)
    seed = Column(Integer, nullable=True)
    config = Column(JSON, nullable=True)
    status = Column(
        Enum(RunStatus, name="run_status_enum", native_enum=False),
        default=RunStatus.RUNNING,
        nullable=False,
    )
    exit_code = Column(Integer, nullable=True)
    summary = Column(JSON, nullable=True)
    error = Column(Text, nullable=True)
    created_at = Column(DateTime(timezone=True), nullable=False, default=_utcnow)
    updated_at = Column(DateTime(timezone=True), nullable=False, default=_utcnow, onupdate=_utcnow)

    def __repr__(self) -> str:  # pragma: no cover
        return f"<RunORM id={self.id} command={self.command} status={self.status}>"


class RunEpochORM(Base):
    """Loss and accuracy of one training epoch."""

    __tablename__ = "run_epochs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Uuid, ForeignKey("runs.id", ondelete="CASCADE"), nullable=False, index=True)
    epoch = Column(Integer, nullable=False)
    loss = Column(Float, nullable=False)
    accuracy = Column(Float, nullable=False)
    created_at = Column(DateTime(timezone=True), nullable=False, default=_utcnow)

    def __repr__(self) -> str:  # pragma: no cover
        return f"<RunEpochORM run_id={self.run_id} epoch={self.epoch} loss={self.loss:.4f}>"
