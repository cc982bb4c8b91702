"""
Cache for pilot-run signal RMS values.

Noise scaling needs the RMS of a noise-free pilot run. Sweeps over seeds or SNR
levels share the same pilot, so results are kept in memory and optionally in
JSON files keyed by an md5 of the noise-independent scenario fields.
"""
import hashlib
import json
import logging
import os
import threading
from dataclasses import asdict
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

# Fields that do not change the noise-free trajectory.
NOISE_FIELDS = ('seed', 'snr_db', 'name')


class PilotCache:
    """
    Two-level (memory, file) cache for pilot RMS vectors.
    """

    def __init__(self, cache_dir: Optional[str] = None, max_memory_items: int = 256):
        """
        Initialize the cache.

        Args:
            cache_dir: Directory for JSON files, or None for memory only
            max_memory_items: Maximum entries kept in memory
        """
        self.cache_dir = cache_dir
        self.max_memory_items = max_memory_items
        self.memory_cache: Dict[str, Any] = {}
        self.lock = threading.RLock()
        self.hits = 0
        self.misses = 0
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def generate_key(self, prefix: str, *args, **kwargs) -> str:
        key_data = f'{prefix}:{str(args)}:{str(sorted(kwargs.items()))}'
        return hashlib.md5(key_data.encode()).hexdigest()

    def scenario_key(self, cfg) -> str:
        """Key from every scenario field that shapes the noise-free run."""
        fields = {k: v for k, v in asdict(cfg).items() if k not in NOISE_FIELDS}
        return self.generate_key('pilot_rms', json.dumps(fields, sort_keys=True, default=str))

    def get(self, key: str) -> Optional[Any]:
        with self.lock:
            if key in self.memory_cache:
                self.hits += 1
                return self.memory_cache[key]
        value = self._get_from_file(key)
        with self.lock:
            if value is not None:
                self.hits += 1
                self.memory_cache[key] = value
            else:
                self.misses += 1
        return value

    def _get_from_file(self, key: str) -> Optional[Any]:
        if not self.cache_dir:
            return None
        cache_file = os.path.join(self.cache_dir, f'{key}.json')
        if not os.path.exists(cache_file):
            return None
        try:
            with open(cache_file, 'r') as f:
                return json.load(f)['value']
        except (json.JSONDecodeError, KeyError, OSError) as e:
            logger.warning(f'Discarding unreadable cache file {cache_file}: {str(e)}')
            try:
                os.remove(cache_file)
            except OSError:
                pass
            return None

    def set(self, key: str, value: Any) -> None:
        with self.lock:
            if len(self.memory_cache) >= self.max_memory_items:
                self.memory_cache.pop(next(iter(self.memory_cache)))
            self.memory_cache[key] = value
        if self.cache_dir:
            cache_file = os.path.join(self.cache_dir, f'{key}.json')
            try:
                with open(cache_file, 'w') as f:
                    json.dump({'value': value}, f)
            except OSError as e:
                logger.error(f'Error writing to cache file: {str(e)}')

    def get_stats(self) -> Dict[str, Any]:
        with self.lock:
            return {'memory_items': len(self.memory_cache), 'hits': self.hits, 'misses': self.misses, 'cache_dir': self.cache_dir}


_pilot_cache: Optional[PilotCache] = None
_pilot_cache_lock = threading.Lock()


def get_pilot_cache() -> PilotCache:
    """Process-wide cache; the file layer is enabled by SMLC_CACHE_DIR."""
    global _pilot_cache
    with _pilot_cache_lock:
        if _pilot_cache is None:
            _pilot_cache = PilotCache(cache_dir=os.environ.get('SMLC_CACHE_DIR') or None)
        return _pilot_cache
