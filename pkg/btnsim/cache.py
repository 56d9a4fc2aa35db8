"""
Result cache for btn-sim
Reuses per-kappa sweep rows keyed by the scenario fingerprint and software version
"""

import hashlib
import json
import logging
from typing import Any, Dict, Optional

from btnsim.config import settings
from btnsim.database import Database, get_database


logger = logging.getLogger(__name__)


class SweepCache:
    """Cache of sweep rows in the registry's sweep_rows table."""

    @staticmethod
    def make_key(serialized_config: str, version: str) -> str:
        """Stable cache key for one per-kappa scenario."""
        text = f"{version}\n{serialized_config}"
        return hashlib.sha1(text.encode()).hexdigest()

    @staticmethod
    async def _db(db: Optional[Database]) -> Database:
        return db if db is not None else await get_database()

    @staticmethod
    async def get(key: str, db: Optional[Database] = None) -> Optional[Dict[str, Any]]:
        """
        Get a cached sweep row.

        Args:
            key: Key from make_key
            db: Registry to use (global registry when omitted)

        Returns:
            Row dict, or None on miss, when caching is disabled, or on failure
        """
        if not settings.ENABLE_RESULT_CACHE:
            return None
        try:
            database = await SweepCache._db(db)
            result = await database.get_sweep_row(key)
            if result:
                logger.debug(f"Cache hit for sweep row {key[:8]}...")
                return json.loads(result['row'])

            logger.debug(f"Cache miss for sweep row {key[:8]}...")
            return None

        except Exception as e:
            logger.warning(f"Cache get failed for {key[:8]}: {e}")
            return None

    @staticmethod
    async def set(key: str, kappa: float, row: Dict[str, Any], db: Optional[Database] = None) -> bool:
        """
        Cache a sweep row.

        Returns:
            True if cached successfully
        """
        if not settings.ENABLE_RESULT_CACHE:
            return False
        try:
            database = await SweepCache._db(db)
            await database.put_sweep_row(key, kappa, row)
            logger.debug(f"Cached sweep row kappa={kappa} ({key[:8]}...)")
            return True

        except Exception as e:
            logger.warning(f"Cache set failed for {key[:8]}: {e}")
            return False
