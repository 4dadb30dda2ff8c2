"""SQLAlchemy ORM models of the run ledger."""

from .base import Base, NAMING_CONVENTION, metadata  # noqa: F401
from .run import RunEpochORM, RunORM, RunStatus  # noqa: F401
