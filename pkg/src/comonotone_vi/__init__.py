"""Convergence analysis of PP, EG and OG on rho-negative comonotone operators."""
