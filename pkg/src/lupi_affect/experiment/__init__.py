"""Experiment configuration, sweep/compare runners, reports and the CLI."""
