"""Run Ledger Schema
One row per CLI operation (sample-size, calibrate, family, validate, coverage)
"""
from pathlib import Path
from typing import Optional

from .. import config


def ensure_db(db_path: Optional[Path] = None) -> Path:
    """Create the ledger table and indexes if missing; returns the path used"""
    path = db_path if db_path is not None else config.AUDIT_DB_PATH
    if path is None:
        raise RuntimeError("run ledger disabled: set PROBSCALE_AUDIT_DB or pass --audit-db")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    con = config.get_db_connection(path)
    try:
        con.execute("""
            CREATE TABLE IF NOT EXISTS calibration_runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                operation_type TEXT NOT NULL,
                created TEXT NOT NULL,
                duration_ms INTEGER NOT NULL,
                params_json TEXT,
                result_json TEXT,
                error TEXT,
                success BOOLEAN DEFAULT 1
            )
        """)
        con.execute("""
            CREATE INDEX IF NOT EXISTS idx_runs_operation
            ON calibration_runs(operation_type, created)
        """)
        con.commit()
    finally:
        con.close()
    return path
