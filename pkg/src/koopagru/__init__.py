"""Koopman-operator anomaly detection with GRU-learned observables."""
