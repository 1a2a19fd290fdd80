"""Shared exception types."""

from __future__ import annotations


class ScenarioError(ValueError):
    """A scenario script is malformed or was queried outside its time range."""


class ConfigError(ValueError):
    """A configuration table is missing an entry or fails validation."""
