"""Experiment harness: splits, knowledge scenarios, campaigns and reports."""
