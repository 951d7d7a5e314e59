"""Distributed conjugate gradient simulator."""
