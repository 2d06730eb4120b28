"""Test suite for mar-debias."""
