"""Persistence: the run ledger (SQLAlchemy) and the LUTQ model file codec."""

from .ledger import RunLedger  # noqa: F401
from .model_file import load_model, model_from_bytes, model_to_bytes, save_model  # noqa: F401
