"""Interleaved multiscale message-passing networks and receptive-field analysis."""

__version__ = "0.1.0"
