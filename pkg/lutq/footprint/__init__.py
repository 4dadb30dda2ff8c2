"""Analytic memory and computation accounting for declarative architectures."""

from .architecture import builtin_architecture, load_architecture  # noqa: F401
from .memory import buffer_memory, param_memory  # noqa: F401
from .report import build_report, render_table  # noqa: F401
