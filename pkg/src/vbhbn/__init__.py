"""Spin simulation and spectrum analysis for V_B- centers in isotopically engineered hBN."""

__version__ = "0.1.0"
