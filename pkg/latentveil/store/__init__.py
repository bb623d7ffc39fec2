"""Persistence layer for latentveil (SQLite inversion cache).

Latent searches dominate the runtime of ``eval`` and repeated ``obfuscate``
runs; the cache lets one inversion per image serve every later σ. It lives
under ``$XDG_CACHE_HOME`` (default ``~/.cache``).
"""

from .sqlite import InversionCache, default_db_path, inversion_key

__all__ = ["InversionCache", "default_db_path", "inversion_key"]
