"""Distributed-MPC microgrid simulator with ISO coordination."""

__version__ = "0.1.0"
