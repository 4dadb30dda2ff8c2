"""Centralised toolkit configuration powered by *pydantic-settings*.

The :class:`Settings` object provides a typed view over environment variables
prefixed with ``LUTQ_``.  A singleton instance can be obtained via
:func:`get_settings` which caches the loaded values for the process lifetime.

Example environment variables recognised::

    LUTQ_SEED=1234
    LUTQ_LOG_LEVEL=DEBUG
    LUTQ_DATABASE_URL=sqlite:///lutq_runs.db
    LUTQ_FIXED_POINT_MANTISSA_BITS=32
    LUTQ_FIXED_POINT_SATURATE=false

With no env vars set the run ledger is disabled and seeds come from the job
configuration files.
"""

from __future__ import annotations

import functools
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

__all__ = [
    "Settings",
    "get_settings",
]


class Settings(BaseSettings):
    """Toolkit configuration loaded from the OS environment or .env file."""

    seed: Optional[int] = Field(
        default=None,
        description="When set, overrides the seed of every job configuration",
    )
    log_level: str = "INFO"
    database_url: Optional[str] = Field(
        default=None,
        description="SQLAlchemy URL of the run ledger; None disables run recording",
    )
    fixed_point_mantissa_bits: int = Field(32, ge=8, le=62)
    fixed_point_saturate: bool = True

    model_config = SettingsConfigDict(
        env_prefix="LUTQ_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @property
    def ledger_enabled(self) -> bool:
        """Return ``True`` when runs should be recorded in the ledger."""
        return bool(self.database_url)


@functools.lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return the singleton :class:`Settings` instance for the process."""
    return Settings()  # type: ignore[call-arg]
