"""Simulation and verification of a self-stabilizing Byzantine agreement protocol stack."""

from .core import ConfigError, ProtocolConstants, derive_constants

__all__ = ["ConfigError", "ProtocolConstants", "derive_constants"]
