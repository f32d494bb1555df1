"""Writer-dependent verification: feature extractors, per-user SVMs and EER thresholds."""
