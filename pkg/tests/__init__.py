"""Test suite for IAEI Invariance."""
