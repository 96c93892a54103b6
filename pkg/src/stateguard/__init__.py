"""Stateful detection of query attacks on binary-feature malware classifiers."""
