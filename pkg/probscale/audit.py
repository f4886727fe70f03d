"""
Run Ledger
==========

Records every calibration-side operation (parameters, result, duration,
failure) in a sqlite table so runs can be compared after the fact.
Disabled unless a ledger path is configured.
"""
import json
import sqlite3
import sys
import time
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from . import config
from .db import ensure_db


def _iso_now():
    """Get current timestamp in ISO format"""
    return datetime.now().astimezone().replace(microsecond=0).isoformat()


def _to_json(payload: Optional[Dict[str, Any]]) -> Optional[str]:
    if payload is None:
        return None
    # default=str covers Paths and numpy scalars
    return json.dumps(payload, sort_keys=True, default=str)


def log_operation(
    operation_type: str,
    params: Dict[str, Any],
    result: Optional[Dict[str, Any]],
    duration_ms: int,
    error: Optional[str] = None,
    success: bool = True,
    db_path: Optional[Path] = None
) -> int:
    """Insert one ledger row.

    Args:
        operation_type: 'sample-size', 'calibrate', 'family', 'validate', 'coverage', ...
        params: Full flag/config set of the run
        result: JSON report produced by the run (None on failure)
        duration_ms: Wall time in milliseconds
        error: Error message if the run failed
        success: Whether the run succeeded
        db_path: Ledger file (defaults to config.AUDIT_DB_PATH)

    Returns:
        Row id of the logged operation
    """
    path = ensure_db(db_path)
    con = config.get_db_connection(path)
    try:
        cur = con.execute("""
            INSERT INTO calibration_runs (
                operation_type, created, duration_ms,
                params_json, result_json, error, success
            )
            VALUES (?, ?, ?, ?, ?, ?, ?)
        """, (
            operation_type, _iso_now(), duration_ms,
            _to_json(params), _to_json(result), error, success
        ))
        con.commit()
        return cur.lastrowid
    finally:
        con.close()


@contextmanager
def track_operation(operation_type: str, params: Dict[str, Any], db_path: Optional[Path] = None):
    """Context manager that times a run and logs it on exit

    Usage:
        with track_operation('calibrate', vars(args)) as tracker:
            report = run_calibration(...)
            tracker.set_result(report)
        # Auto-logged on context exit (no-op when the ledger is disabled)

    Yields:
        Tracker object with set_result() and set_error() methods
    """
    class Tracker:
        def __init__(self):
            self.start_time = time.time()
            self.result = None
            self.error = None
            self.success = True

        def set_result(self, result: Dict[str, Any]):
            """Store the JSON report"""
            self.result = result

        def set_error(self, error: Exception):
            """Mark operation as failed"""
            self.error = f"{type(error).__name__}: {error}"
            self.success = False

    tracker = Tracker()

    try:
        yield tracker
    except Exception as e:
        tracker.set_error(e)
        raise
    finally:
        duration_ms = int((time.time() - tracker.start_time) * 1000)
        path = db_path if db_path is not None else config.AUDIT_DB_PATH
        if path is not None:
            try:
                log_operation(
                    operation_type=operation_type,
                    params=params,
                    result=tracker.result,
                    duration_ms=duration_ms,
                    error=tracker.error,
                    success=tracker.success,
                    db_path=path,
                )
            except sqlite3.OperationalError as e:
                # Ledger is bookkeeping; a locked file never fails a run
                print(f"Warning: run ledger skipped due to: {e}", file=sys.stderr)


def get_operation_stats(
    operation_type: Optional[str] = None,
    days: int = 7,
    db_path: Optional[Path] = None
) -> Dict[str, Any]:
    """Get statistics about logged runs

    Args:
        operation_type: Optional filter by operation type
        days: Number of days to look back (default: 7)
        db_path: Ledger file (defaults to config.AUDIT_DB_PATH)

    Returns:
        Dict with total_operations, successful, failed, avg/max duration
    """
    path = ensure_db(db_path)
    con = config.get_db_connection(path)
    try:
        query = """
            SELECT
                COUNT(*) as total_operations,
                SUM(CASE WHEN success = 1 THEN 1 ELSE 0 END) as successful,
                SUM(CASE WHEN success = 0 THEN 1 ELSE 0 END) as failed,
                AVG(duration_ms) as avg_duration_ms,
                MAX(duration_ms) as max_duration_ms
            FROM calibration_runs
            WHERE created >= ?
        """
        cutoff = datetime.fromtimestamp(time.time() - days * 86400).astimezone().replace(microsecond=0).isoformat()
        args = [cutoff]
        if operation_type:
            query += " AND operation_type = ?"
            args.append(operation_type)
        row = con.execute(query, args).fetchone()
    finally:
        con.close()

    return {
        "total_operations": row[0] or 0,
        "successful": row[1] or 0,
        "failed": row[2] or 0,
        "avg_duration_ms": round(row[3], 2) if row[3] else 0,
        "max_duration_ms": row[4] or 0,
    }
