"""Core settings, errors, logging, run configuration and worker pool."""
