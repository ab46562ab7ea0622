"""Unit and CLI tests for the cfm lab; shared fixtures live in ``tests.synthetic``."""

__all__ = ["synthetic"]
