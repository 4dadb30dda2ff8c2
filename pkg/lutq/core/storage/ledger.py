"""Run ledger: records every command invocation and its training epochs.

A thin synchronous wrapper over SQLAlchemy.  Any SQLAlchemy URL works;
SQLite files are the common local choice (``LUTQ_DATABASE_URL``).
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional
from uuid import UUID

from sqlalchemy import create_engine, select, update
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from lutq.core.models.base import Base
from lutq.core.models.run import RunEpochORM, RunORM, RunStatus
from lutq.data_models import EpochRecord

logger = logging.getLogger(__name__)

__all__ = ["RunLedger"]


class RunLedger:
    """Persist command runs and per-epoch training records.

    Parameters
    ----------
    engine
        SQLAlchemy *Engine*; tables are created on construction when missing.
    """

    def __init__(self, engine: Engine) -> None:
        self._engine: Engine = engine
        self._session_factory = sessionmaker(bind=self._engine, expire_on_commit=False)
        Base.metadata.create_all(self._engine)

    @classmethod
    def from_database_url(cls, url: str) -> "RunLedger":
        return cls(create_engine(url, future=True))

    # ------------------------------------------------------------------
    # Context-manager helper
    # ------------------------------------------------------------------
    @contextmanager
    def _session_scope(self) -> Iterator[Session]:
        """Provide a transactional scope around a series of operations."""
        session = self._session_factory()
        try:
            yield session
            session.commit()
        except Exception:  # noqa: BLE001 – re-raise downstream
            session.rollback()
            raise
        finally:
            session.close()

    # ------------------------------------------------------------------
    # Runs
    # ------------------------------------------------------------------
    def start_run(self, command: str, config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> UUID:
        """Insert a ``running`` row and return its identifier."""
        with self._session_scope() as session:
            run = RunORM(command=command, config=config, seed=seed, status=RunStatus.RUNNING)
            session.add(run)
            session.flush()
            run_id = run.id
        logger.info("Started %s run %s", command, run_id)
        return run_id

    def record_epoch(self, run_id: UUID, record: EpochRecord) -> None:
        with self._session_scope() as session:
            session.add(
                RunEpochORM(run_id=run_id, epoch=record.epoch, loss=record.loss, accuracy=record.accuracy)
            )

    def finish_run(
        self,
        run_id: UUID,
        exit_code: int,
        summary: Optional[Dict[str, Any]] = None,
        error: Optional[str] = None,
    ) -> None:
        """Mark the run succeeded (exit code 0) or failed."""
        status = RunStatus.SUCCEEDED if exit_code == 0 else RunStatus.FAILED
        with self._session_scope() as session:
            session.execute(
                update(RunORM)
                .where(RunORM.id == run_id)
                .values(status=status, exit_code=exit_code, summary=summary, error=error)
            )
        logger.info("Finished run %s with status %s", run_id, status.value)

    def get_run(self, run_id: UUID) -> Optional[RunORM]:
        with self._session_scope() as session:
            return session.get(RunORM, run_id)

    def list_runs(self, command: Optional[str] = None) -> List[RunORM]:
        with self._session_scope() as session:
            stmt = select(RunORM).order_by(RunORM.created_at)
            if command is not None:
                stmt = stmt.where(RunORM.command == command)
            return list(session.execute(stmt).scalars())

    def list_epochs(self, run_id: UUID) -> List[RunEpochORM]:
        """Return the epoch rows of a run in epoch order."""
        with self._session_scope() as session:
            stmt = select(RunEpochORM).where(RunEpochORM.run_id == run_id).order_by(RunEpochORM.epoch)
            return list(session.execute(stmt).scalars())
