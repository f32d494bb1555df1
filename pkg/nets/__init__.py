"""Minimal reverse-mode network engine, mini-SigNet models and robust training."""
