"""Inference kernels and analytic operation counts."""
