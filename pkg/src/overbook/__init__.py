"""Capacity planning and admission control for token-bucket regulated
function workloads."""

__version__ = "0.1.0"
