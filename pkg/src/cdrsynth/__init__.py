"""Synthetic per-individual CdR generation pipeline."""
