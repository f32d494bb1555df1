"""Gradient-based, decision-based and score-based attacks on writer-dependent verifiers."""
