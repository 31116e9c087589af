"""Random periodic processes and periodic measures: exact chains, pull-backs, lifts and SLLN checks."""

__version__ = "0.1.0"
