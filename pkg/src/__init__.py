"""Debiased estimation of a mean outcome missing at random in high dimensions."""
