"""Run ledger storage"""
from .schema import ensure_db

__all__ = ["ensure_db"]
