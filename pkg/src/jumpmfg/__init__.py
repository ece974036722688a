"""Finite-state jump mean-field games: solver and N-player verifier."""
