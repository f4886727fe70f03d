"""
probscale - Configuration
Defaults for probability levels, kernel pipeline and the run ledger.
Every value here is a default only: CLI flags and explicit function
arguments always win.
"""
import os
import sqlite3
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

load_dotenv()

# Probability levels (running example)
DEFAULT_EPSILON = float(os.getenv("PROBSCALE_EPSILON", "0.05"))
DEFAULT_DELTA = float(os.getenv("PROBSCALE_DELTA", "1e-6"))

# Sample-complexity constant printed with the lemma; (1+sqrt(3))^2 is the exact one
LEMMA_CONSTANT = float(os.getenv("PROBSCALE_LEMMA_CONSTANT", "7.47"))
EXACT_LEMMA_CONSTANT = (1.0 + 3.0 ** 0.5) ** 2

# Kernel pipeline
_truncation_m = os.getenv("PROBSCALE_TRUNCATION_M", "none").strip().lower()
TRUNCATION_M: Optional[int] = None if _truncation_m == "none" else int(_truncation_m)
# Training points with Gamma below this fraction of the largest Gamma are dropped
TRUNCATION_WEIGHT_TOL = float(os.getenv("PROBSCALE_TRUNCATION_WEIGHT_TOL", "1e-12"))
SIGMA_FLOOR = float(os.getenv("PROBSCALE_SIGMA_FLOOR", "1e-9"))

# Output files
OUTPUT_DIR = Path(os.getenv("PROBSCALE_OUTPUT_DIR", "./probscale_output")).expanduser()

# Run ledger (sqlite). Unset means disabled.
_audit_db = os.getenv("PROBSCALE_AUDIT_DB")
AUDIT_DB_PATH: Optional[Path] = Path(_audit_db).expanduser() if _audit_db else None
DB_TIMEOUT = 30.0  # seconds to wait on a locked ledger


def resolve_constant(value) -> float:
    """Map a CLI/config constant choice to a number.

    Accepts "exact" for (1+sqrt(3))^2, "rounded" or None for the printed
    7.47 default, or anything float() understands.
    """
    if value is None or value == "rounded":
        return LEMMA_CONSTANT
    if value == "exact":
        return EXACT_LEMMA_CONSTANT
    return float(value)


def get_db_connection(db_path: Optional[Path] = None) -> sqlite3.Connection:
    """Ledger connection with timeout and WAL mode.

    WAL lets a coverage run and an `audit-stats` query share the file.
    """
    path = db_path if db_path is not None else AUDIT_DB_PATH
    if path is None:
        raise RuntimeError("run ledger disabled: set PROBSCALE_AUDIT_DB or pass --audit-db")
    con = sqlite3.connect(path, timeout=DB_TIMEOUT)
    con.execute("PRAGMA journal_mode=WAL")
    return con
