"""Unbiased multiple instance learning on snippet features."""
