"""Experiment harness: configuration, CLI, run driver and invariant suites."""
