"""
Run registry for btn-sim
Async SQLite wrapper with migration support
"""

import json
import sqlite3
import logging
from typing import Optional, List, Dict, Any, Tuple

import aiosqlite

from btnsim.config import settings


logger = logging.getLogger(__name__)


class Database:
    """Async SQLite database wrapper."""

    def __init__(self, db_path: str = None):
        self.db_path = db_path or settings.database_path
        self.connection: Optional[aiosqlite.Connection] = None

    async def connect(self) -> None:
        """Connect to database."""
        try:
            self.connection = await aiosqlite.connect(self.db_path, check_same_thread=False)
            # WAL lets parallel sweeps and a reader share the registry
            await self.connection.execute('PRAGMA journal_mode = WAL')
            await self.connection.execute('PRAGMA busy_timeout = 10000')
            await self.connection.commit()
            logger.info(f"Connected to registry: {self.db_path}")
        except Exception as e:
            logger.error(f"Failed to connect to registry: {e}")
            raise

    async def disconnect(self) -> None:
        """Disconnect from database."""
        if self.connection:
            await self.connection.close()
            self.connection = None
            logger.debug("Registry disconnected")

    async def migrate(self) -> None:
        """Run migrations; each is CREATE ... IF NOT EXISTS and safe to re-run."""
        migrations = [
            ("0001_runs", self._migration_0001_runs()),
            ("0002_sweep_rows", self._migration_0002_sweep_rows()),
        ]

        for name, migration in migrations:
            await self.connection.executescript(migration)
            await self.connection.commit()
            logger.debug(f"Migration {name} applied")

        logger.info("✅ Registry migrations completed")

    async def execute(self, query: str, params: Tuple = ()) -> aiosqlite.Cursor:
        """Execute query."""
        if not self.connection:
            raise RuntimeError("Database not connected")
        return await self.connection.execute(query, params)

    async def fetch_one(self, query: str, params: Tuple = ()) -> Optional[Dict[str, Any]]:
        """Fetch single row."""
        cursor = await self.execute(query, params)
        cursor.row_factory = sqlite3.Row
        row = await cursor.fetchone()
        return dict(row) if row else None

    async def fetch_all(self, query: str, params: Tuple = ()) -> List[Dict[str, Any]]:
        """Fetch all rows."""
        cursor = await self.execute(query, params)
        cursor.row_factory = sqlite3.Row
        rows = await cursor.fetchall()
        return [dict(row) for row in rows]

    async def insert(self, query: str, params: Tuple = ()) -> int:
        """Insert row and return last insert rowid."""
        cursor = await self.execute(query, params)
        await self.connection.commit()
        return cursor.lastrowid

    async def update(self, query: str, params: Tuple = ()) -> int:
        """Update rows and return affected count."""
        cursor = await self.execute(query, params)
        await self.connection.commit()
        return cursor.rowcount

    # ===== MIGRATION DEFINITIONS =====

    @staticmethod
    def _migration_0001_runs() -> str:
        """One row per completed command."""
        return """
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            config_fingerprint TEXT NOT NULL,
            version TEXT NOT NULL,
            grid_hash TEXT NOT NULL,
            out_dir TEXT,
            manifest TEXT NOT NULL,
            duration REAL,
            created_at DATETIME DEFAULT CURRENT_TIMESTAMP
        );

        CREATE INDEX IF NOT EXISTS idx_runs_fingerprint ON runs(config_fingerprint);
        CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command);
        """

    @staticmethod
    def _migration_0002_sweep_rows() -> str:
        """Per-kappa sweep results keyed by scenario fingerprint."""
        return """
        CREATE TABLE IF NOT EXISTS sweep_rows (
            cache_key TEXT PRIMARY KEY,
            kappa REAL NOT NULL,
            row TEXT NOT NULL,
            hit_count INTEGER DEFAULT 0,
            created_at DATETIME DEFAULT CURRENT_TIMESTAMP,
            last_accessed DATETIME DEFAULT CURRENT_TIMESTAMP
        );

        CREATE INDEX IF NOT EXISTS idx_sweep_rows_kappa ON sweep_rows(kappa);
        """

    # ===== RUN REGISTRY =====

    async def record_run(self, manifest: Dict[str, Any], out_dir: Optional[str] = None) -> int:
        """
        Store a command manifest.

        Args:
            manifest: RunManifest.to_dict() payload
            out_dir: Output directory of the command

        Returns:
            Registry row id
        """
        run_id = await self.insert(
            """
            INSERT INTO runs (command, config_fingerprint, version, grid_hash, out_dir, manifest, duration)
            VALUES (?, ?, ?, ?, ?, ?, ?)
            """,
            (
                manifest['command'],
                manifest['config_fingerprint'],
                manifest['version'],
                manifest['grid_hash'],
                out_dir,
                json.dumps(manifest, sort_keys=True, default=str),
                manifest.get('duration'),
            )
        )
        logger.debug(f"Registered {manifest['command']} run #{run_id}")
        return run_id

    async def list_runs(self, command: Optional[str] = None, limit: int = 50) -> List[Dict[str, Any]]:
        """Most recent runs first, optionally filtered by command."""
        if command:
            return await self.fetch_all(
                "SELECT * FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?",
                (command, limit)
            )
        return await self.fetch_all("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,))

    async def get_sweep_row(self, cache_key: str) -> Optional[Dict[str, Any]]:
        result = await self.fetch_one("SELECT * FROM sweep_rows WHERE cache_key = ?", (cache_key,))
        if result:
            await self.update(
                """
                UPDATE sweep_rows
                SET hit_count = hit_count + 1, last_accessed = CURRENT_TIMESTAMP
                WHERE cache_key = ?
                """,
                (cache_key,)
            )
        return result

    async def put_sweep_row(self, cache_key: str, kappa: float, row: Dict[str, Any]) -> None:
        await self.insert(
            """
            INSERT OR REPLACE INTO sweep_rows (cache_key, kappa, row)
            VALUES (?, ?, ?)
            """,
            (cache_key, kappa, json.dumps(row, sort_keys=True))
        )


# Global database instance
_db_instance: Optional[Database] = None


async def get_database() -> Database:
    """Get or create global database instance."""
    global _db_instance

    if _db_instance is None:
        _db_instance = Database()
        await _db_instance.connect()
        await _db_instance.migrate()

    return _db_instance


async def close_database() -> None:
    """Close global database instance."""
    global _db_instance

    if _db_instance:
        await _db_instance.disconnect()
        _db_instance = None
