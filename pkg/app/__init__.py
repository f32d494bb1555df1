"""Adversarial attack and defense testbed for offline signature verification."""
