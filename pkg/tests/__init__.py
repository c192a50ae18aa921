"""Tests for unsmear."""
