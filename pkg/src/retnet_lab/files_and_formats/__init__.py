"""Readers and writers for checkpoints and CSV result files."""
