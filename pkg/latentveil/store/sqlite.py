"""SQLite-backed cache of latent inversion results.

Design:
- One DB file (default under ``$XDG_CACHE_HOME/latentveil``), keyed by a
  SHA-256 over everything that determines an inversion: target image bytes,
  generator config, extractor spec, optimizer config and init latent.
- Schema is versioned via a ``meta`` table; on version mismatch the cache is
  dropped and rebuilt (results are always recomputable).
- Latents and trajectories are stored as raw little-endian float64 blobs, so
  a cached result is bitwise identical to the fresh one.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import sqlite3
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from ..generator import BlobGeneratorConfig, LatentCode
from ..imaging import ImageTensor
from ..inversion import InversionResult, OptimizerConfig
from ..perception import ExtractorSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MEMORY = ":memory:"


def _xdg_cache_home() -> Path:
    raw = os.environ.get("XDG_CACHE_HOME")
    if raw:
        return Path(raw)
    return Path.home() / ".cache"


def default_db_path() -> Path:
    return _xdg_cache_home() / "latentveil" / "inversions.db"


def inversion_key(
    target: ImageTensor,
    cfg: BlobGeneratorConfig,
    spec: ExtractorSpec,
    opt: OptimizerConfig,
    init: LatentCode,
) -> str:
    """Content key of one inversion run."""
    h = hashlib.sha256()
    h.update(repr(target.shape).encode())
    h.update(target.data.astype("<f8").tobytes())
    for part in (cfg, spec, opt):
        h.update(json.dumps(asdict(part), sort_keys=True).encode())
    h.update(init.values.astype("<f8").tobytes())
    return h.hexdigest()


def _blob(values: Any) -> bytes:
    return np.asarray(values, dtype="<f8").tobytes()


def _unblob(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


class InversionCache:
    """Persistent memo of :class:`InversionResult` by :func:`inversion_key`."""

    def __init__(self, db_path: Path | str, *, now: Optional[Callable[[], float]] = None) -> None:
        self.db_path = str(db_path)
        if self.db_path != MEMORY:
            Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self._now = now or time.time
        self._conn = sqlite3.connect(self.db_path)
        self._conn.row_factory = sqlite3.Row
        if self.db_path != MEMORY:
            self._conn.execute("PRAGMA journal_mode=WAL")
        self._ensure_schema()
        self.hits = 0
        self.misses = 0

    # ---- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        try:
            self._conn.close()
        except sqlite3.Error:
            pass

    def __enter__(self) -> InversionCache:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    @contextmanager
    def _tx(self):
        try:
            yield self._conn
            self._conn.commit()
        except Exception:
            self._conn.rollback()
            raise

    # ---- schema ------------------------------------------------------------

    def _ensure_schema(self) -> None:
        cur = self._conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name='meta'"
        )
        if cur.fetchone() is None:
            self._create_schema()
            return

        version = self._read_version()
        if version != SCHEMA_VERSION:
            log.warning(
                "Inversion cache %s has schema %s, expected %s; dropping cached results.",
                self.db_path, version, SCHEMA_VERSION,
            )
            self._drop_all()
            self._create_schema()

    def _read_version(self) -> Optional[int]:
        row = self._conn.execute(
            "SELECT value FROM meta WHERE key='schema_version'"
        ).fetchone()
        if row is None:
            return None
        try:
            return int(row["value"])
        except (TypeError, ValueError):
            return None

    def _drop_all(self) -> None:
        with self._tx() as conn:
            for table in ("inversions", "meta"):
                conn.execute(f"DROP TABLE IF EXISTS {table}")

    def _create_schema(self) -> None:
        with self._tx() as conn:
            conn.executescript(
                """
                CREATE TABLE meta (
                    key   TEXT PRIMARY KEY,
                    value TEXT NOT NULL
                );

                CREATE TABLE inversions (
                    key            TEXT PRIMARY KEY,
                    rows           INTEGER NOT NULL,
                    cols           INTEGER NOT NULL,
                    latent         BLOB NOT NULL,
                    losses         BLOB NOT NULL,
                    elapsed        BLOB NOT NULL,
                    steps_taken    INTEGER NOT NULL,
                    converged      INTEGER NOT NULL,
                    optimizer      TEXT NOT NULL,
                    fallback_steps TEXT NOT NULL,
                    stored_at      REAL NOT NULL
                );
                """
            )
            conn.execute(
                "INSERT INTO meta(key, value) VALUES('schema_version', ?)",
                (str(SCHEMA_VERSION),),
            )

    # ---- inversions --------------------------------------------------------

    def get(self, key: str) -> Optional[InversionResult]:
        row = self._conn.execute(
            "SELECT * FROM inversions WHERE key = ?", (key,)
        ).fetchone()
        if row is None:
            self.misses += 1
            return None
        self.hits += 1
        losses = _unblob(row["losses"]).tolist()
        return InversionResult(
            latent=LatentCode(_unblob(row["latent"]).reshape(row["rows"], row["cols"])),
            losses=losses,
            best_loss=min(losses),
            steps_taken=int(row["steps_taken"]),
            elapsed=_unblob(row["elapsed"]).tolist(),
            converged=bool(row["converged"]),
            optimizer=row["optimizer"],
            fallback_steps=json.loads(row["fallback_steps"]),
        )

    def put(self, key: str, result: InversionResult) -> None:
        with self._tx() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO inversions"
                "(key, rows, cols, latent, losses, elapsed, steps_taken, converged,"
                " optimizer, fallback_steps, stored_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    key,
                    result.latent.rows,
                    result.latent.cols,
                    _blob(result.latent.values),
                    _blob(result.losses),
                    _blob(result.elapsed),
                    result.steps_taken,
                    int(result.converged),
                    result.optimizer,
                    json.dumps(list(result.fallback_steps)),
                    float(self._now()),
                ),
            )

    def __len__(self) -> int:
        return int(self._conn.execute("SELECT COUNT(*) FROM inversions").fetchone()[0])

    def clear(self) -> None:
        with self._tx() as conn:
            conn.execute("DELETE FROM inversions")
