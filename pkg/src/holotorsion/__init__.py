"""Desk-scale verification toolkit for holomorphic torsion anomaly identities."""
__version__ = "0.1.0"
