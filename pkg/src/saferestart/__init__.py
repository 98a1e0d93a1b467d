"""Trace-driven recovery groups and a transactional remediation runtime."""

__version__ = "0.1.0"
