"""
Tests for the gridfreq package.
"""
