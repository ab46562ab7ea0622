"""Desk-scale Critical Forgery Mining laboratory."""

__all__ = ["core", "services"]
