"""Bitcoin actor identification from temporally local transaction graphs."""

__version__ = "0.1.0"
