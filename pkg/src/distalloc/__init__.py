"""Distributed nonsmooth resource allocation over multi-agent networks."""

__version__ = "0.1.0"
