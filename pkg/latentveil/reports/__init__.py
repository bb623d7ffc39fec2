"""Report rendering for latentveil."""

from .tables import inversion_table, optimizer_table, quality_table, simple_table, threat_table

__all__ = ['inversion_table', 'optimizer_table', 'quality_table', 'simple_table', 'threat_table']
