"""Utility modules for latentveil."""

from .file_utils import format_cell, manifest_path, read_manifest, write_csv, write_manifest

__all__ = [
    'format_cell',
    'manifest_path',
    'read_manifest',
    'write_csv',
    'write_manifest',
]
