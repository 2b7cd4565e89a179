"""Workbench for two PUF-based IoT authentication protocols and attacks on them."""

__version__ = "0.1.0"
