"""Guardrail-post detection pipeline: sliding-window classification, floor-line
filtering, and spacing-plausibility selection, plus a synthetic facade generator."""

__version__ = "0.1.0"
