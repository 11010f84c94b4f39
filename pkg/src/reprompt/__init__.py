"""Desk-scale workbench for cost-aware correction deferral in simulated
interactive video segmentation."""

__version__ = "0.1.0"
