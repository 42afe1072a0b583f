"""Hierarchical conditional permutation importance."""
