"""Synthetic stand-in for signature datasets."""
