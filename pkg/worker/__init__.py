"""Batch experiment helpers built on the cfm services."""

from .experiments import ExperimentRunner, MetricsStore, Variant

__all__ = ["ExperimentRunner", "MetricsStore", "Variant"]
