"""Experiment harness: synthetic data, seeded training runs, statistics and reports."""
